import numpy as np
import pytest

from src import diagnostics
from src.diagnostics import (
    analytic_lower_floor,
    bounded_radius,
    convergent_lower_bound,
    convolution_tail_exponent,
    correlation_decay_fit,
    diagonal_action_growth,
    divergence_and_overlap_curves,
    equal_mass_edges,
    field_correlation_curve,
    g_hat_bound_check,
    g_hat_convergence_check,
    ir_divergence_curve,
    ir_slope_fit,
    jensen_lower_bound,
    kernel_cross_check,
    localization_ratio,
    overlap_upper_bound_curve,
    spectral_correlation,
    spectral_tail_fit,
    sup_tail_probability,
)
from src.errors import InsufficientDataError, UnsupportedDimensionError
from src.field_gaussian import GaussianTestFunction, VanishingTestFunction
from src.kernels import field_covariance, ir_bound_integral
from src.models import ExperimentSettings, ModelParams, PathConfig
from src.path_gibbs import make_stream
from src.schrodinger import sample_nu0

from .conftest import small_run

T_LIST = tuple(np.geomspace(10.0, 100.0, 12))


def _ou_paths(cfg: PathConfig, count: int, seed: int) -> np.ndarray:
    """Exact stationary OU paths with E|q|^2 = 3/2 and unit relaxation rate."""
    rng = np.random.default_rng(seed)
    a = np.exp(-cfg.dt)
    paths = np.empty((count, cfg.n_beads, 3))
    paths[:, 0] = np.sqrt(0.5) * rng.standard_normal((count, 3))
    for i in range(1, cfg.n_beads):
        paths[:, i] = a * paths[:, i - 1] + np.sqrt(0.5 * (1 - a * a)) * rng.standard_normal((count, 3))
    return paths


# -- spectral ---------------------------------------------------------------

def test_spectral_correlation_at_zero_time():
    assert spectral_correlation(GaussianTestFunction(), 0.0, ModelParams(d=3)) == pytest.approx(2 * np.pi)


@pytest.mark.parametrize("d,expected", [(3, 2.0), (4, 3.0)])
def test_spectral_tail_exponent(d, expected):
    fit = spectral_tail_fit(GaussianTestFunction(), T_LIST, ModelParams(d=d))
    assert fit.exponent == pytest.approx(expected, abs=0.05)
    assert fit.extras["expected"] == d - 1
    assert fit.window[0] >= np.sqrt(10.0 * 100.0) * (1 - 1e-9)


def test_vanishing_test_function_decays_faster():
    fit = spectral_tail_fit(VanishingTestFunction(), T_LIST, ModelParams(d=3))
    assert fit.exponent > 2.5


def test_tail_fit_needs_a_decade():
    with pytest.raises(InsufficientDataError):
        spectral_tail_fit(GaussianTestFunction(), [10.0, 20.0, 40.0, 80.0], ModelParams(d=3))
    with pytest.raises(InsufficientDataError):
        spectral_tail_fit(GaussianTestFunction(), [1.0, 100.0], ModelParams(d=3))


def test_convolution_tail_follows_slowest_factor():
    fit = convolution_tail_exponent(3, 1.0, np.geomspace(100.0, 1000.0, 6))
    assert fit.exponent == pytest.approx(1.0, abs=0.1)
    assert fit.extras["naive_exponent"] == 3.0
    assert fit.extras["naive_dominance"] is True
    assert fit.extras["numeric_dominance"] is False


def test_convolution_rejects_non_positive_gamma():
    with pytest.raises(ValueError):
        convolution_tail_exponent(3, 0.0, T_LIST)


# -- correlation decay ------------------------------------------------------

def test_correlation_decay_of_ou_paths():
    cfg = PathConfig(T=16.0, dt=0.1, d=3)
    paths = _ou_paths(cfg, 200, seed=3)
    fit = correlation_decay_fit(paths, bounded_radius, bounded_radius, (1.0, 2.0, 4.0, 8.0), cfg)
    cov = fit.extras["cov"]
    assert cov[0] > cov[-1]
    assert np.isfinite(fit.exponent)
    assert 0.0 <= fit.exponent <= 20.0


def test_constant_observable_skips_the_fit():
    cfg = PathConfig(T=8.0, dt=0.1, d=3)
    paths = _ou_paths(cfg, 60, seed=4)
    one = lambda q: np.ones(q.shape[:-1])
    fit = correlation_decay_fit(paths, one, bounded_radius, (1.0, 2.0), cfg)
    assert np.isnan(fit.exponent)
    assert "skipped" in fit.extras


def test_correlation_needs_effective_samples():
    cfg = PathConfig(T=8.0, dt=0.1, d=3)
    with pytest.raises(InsufficientDataError):
        correlation_decay_fit(_ou_paths(cfg, 20, seed=5), bounded_radius, bounded_radius, (1.0,), cfg)


def test_field_correlation_on_frozen_paths_is_the_free_covariance():
    cfg = PathConfig(T=2.0, dt=0.1, d=3)
    params = ModelParams(d=3, e=0.3)
    h = GaussianTestFunction()
    points = field_correlation_curve(np.zeros((5, cfg.n_beads, 3)), h, (0.5, 1.0), cfg, params)
    for p in points:
        assert p.value.mean == pytest.approx(field_covariance(h, h, p.abscissa, params))
        assert p.extras["path_term"] == pytest.approx(0.0, abs=1e-15)


# -- localization and lower bounds -------------------------------------------

def test_equal_mass_edges(harmonic_gs):
    edges = equal_mass_edges(harmonic_gs, 4)
    assert edges[0] == 0.0 and np.isinf(edges[-1])
    np.testing.assert_allclose(harmonic_gs.radial_cdf(edges[1:-1]), [0.25, 0.5, 0.75], atol=1e-6)


def test_free_marginal_has_unit_ratio(harmonic_gs):
    r0 = np.linalg.norm(sample_nu0(harmonic_gs, 20000, make_stream(9)), axis=1)
    report = localization_ratio(r0, harmonic_gs, n_bins=20)
    assert report.kept.all()
    assert report.excluded == []
    assert 0.85 < report.c1 <= report.c2 < 1.15
    assert report.normalization.mean == 1.0


def test_localization_excludes_sparse_bins(harmonic_gs):
    r0 = np.full(10000, 0.01)
    report = localization_ratio(r0, harmonic_gs, n_bins=10)
    assert report.excluded == list(range(1, 10))
    with pytest.raises(InsufficientDataError):
        localization_ratio(r0[:500], harmonic_gs)


def test_jensen_bound_without_tilt_is_the_overlap_coefficient(harmonic_gs):
    r0 = np.linalg.norm(sample_nu0(harmonic_gs, 20000, make_stream(10)), axis=1)
    est, bc = jensen_lower_bound(r0, np.zeros_like(r0), harmonic_gs, n_bins=20)
    assert est.mean == pytest.approx(bc)
    assert 0.99 < bc <= 1.0 + 1e-12


def test_tilt_lowers_the_bound(harmonic_gs):
    r0 = np.linalg.norm(sample_nu0(harmonic_gs, 5000, make_stream(11)), axis=1)
    est, bc = jensen_lower_bound(r0, np.full_like(r0, 8.0), harmonic_gs, n_bins=10)
    assert est.mean == pytest.approx(bc * np.exp(-4.0))


def test_analytic_floor():
    assert analytic_lower_floor(ModelParams(d=3, e=0.3), 1.0) == 0.0
    params = ModelParams(d=4, e=0.3)
    floor = analytic_lower_floor(params, 0.9)
    assert 0.0 < floor < 0.9
    assert floor == pytest.approx(0.9 * np.exp(-ir_bound_integral(params) / 8.0))


def test_curves_check_dimension(harmonic_gs):
    with pytest.raises(UnsupportedDimensionError):
        convergent_lower_bound(small_run(), harmonic_gs, None)
    cfg4 = small_run().model_copy(update={"model": ModelParams(d=4), "path": PathConfig(T=1.0, dt=0.1, d=4)})
    with pytest.raises(UnsupportedDimensionError):
        ir_divergence_curve(cfg4, harmonic_gs, None, None, 1.0)


def test_frozen_path_divergence_curve_decreases():
    cfg = small_run(e=0.3)
    profile = lambda r, s: 1.0 / (1.0 + np.asarray(s, dtype=float))
    points = ir_divergence_curve(cfg, None, None, profile, s_norm2=1.0, frozen_path=True)
    values = [p.value.mean for p in points]
    assert [p.abscissa for p in points] == list(cfg.experiments.T_list)
    assert all(a > b for a, b in zip(values, values[1:]))
    for p in points:
        assert set(p.extras["caps"]) == {"5", "10", "20"}
        assert p.value.mean == p.extras["caps"]["10"]["mean"]


# -- path-level checks --------------------------------------------------------

def test_diagonal_action_growth(pair_kernel):
    cfg = PathConfig(T=1.0, dt=0.1, d=3)
    paths = _ou_paths(cfg, 5, seed=6)
    report = diagonal_action_growth(paths, pair_kernel, cfg, pair_kernel.params)
    assert report["passed"]
    assert 0.0 < report["min"] <= report["max"] < report["bound"]


def test_sup_tail_probability():
    cfg = PathConfig(T=4.0, dt=0.1, d=3)
    points = sup_tail_probability(_ou_paths(cfg, 50, seed=7), 0.5, (1.0, 2.0, 4.0), cfg)
    assert [p.abscissa for p in points] == [1.0, 2.0, 4.0]
    assert all(0.0 <= p.value.mean <= 1.0 for p in points)


def test_conditional_mean_bounds_hold():
    cfg = PathConfig(T=2.0, dt=0.1, d=3)
    params = ModelParams(d=3, e=0.5)
    report = g_hat_bound_check(_ou_paths(cfg, 4, seed=8), cfg, params, 200, make_stream(1))
    assert report["passed"]
    assert 0.0 < report["max_ratio"] <= 1.0 + 1e-10
    converged = g_hat_convergence_check(np.geomspace(1e-3, 10.0, 50), 8.0, params)
    assert converged["passed"]


def test_kernel_cross_check_small_grid():
    report = kernel_cross_check(ModelParams(d=3, e=1.0), n=3, r_max=2.0, t_max=2.0)
    assert report["max_rel_err"] < 1e-6
    assert report["W00"] == pytest.approx(report["W00_exact"], rel=1e-10)
    assert len(report["rows"]) == 9


def test_ir_slope_fit():
    report = ir_slope_fit(ModelParams(d=3, e=0.5))
    assert report["slope"] == pytest.approx(report["expected_slope"], rel=0.02)
    assert report["r_squared"] > 0.999


def test_divergence_and_overlap_share_one_chain_pass(harmonic_gs, pair_kernel, monkeypatch):
    monkeypatch.setenv("NIRSIM_THREADS", "1")
    cfg = small_run(e=0.3).model_copy(update={"experiments": ExperimentSettings(T_list=(1.0, 2.0))})
    profile = lambda r, s: np.exp(-np.asarray(r, dtype=float) - np.asarray(s, dtype=float))
    calls = []
    run_chains = diagnostics.run_chains

    def counting(*args, **kwargs):
        calls.append(kwargs.get("point_id"))
        return run_chains(*args, **kwargs)

    monkeypatch.setattr(diagnostics, "run_chains", counting)
    divergence, overlap = divergence_and_overlap_curves(cfg, harmonic_gs, pair_kernel, profile, 1.0)
    assert calls == [0, 1]

    alone_f = ir_divergence_curve(cfg, harmonic_gs, pair_kernel, profile, 1.0)
    alone_o = overlap_upper_bound_curve(cfg, harmonic_gs, pair_kernel)
    assert [p.value.mean for p in divergence] == [p.value.mean for p in alone_f]
    assert [p.value.mean for p in overlap] == [p.value.mean for p in alone_o]
    assert all(0.0 < p.value.mean <= 1.0 for p in overlap)
