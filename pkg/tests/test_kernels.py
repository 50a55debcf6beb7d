import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate

from src.artifact_store import KERNEL_MAGIC, read_binary, write_binary
from src.errors import UnsupportedDimensionError
from src.kernels import (
    KernelTable,
    angular_average,
    build_kernel_table,
    coulomb_bound_integral,
    field_covariance,
    form_factor_shape,
    ir_bound_integral,
    ir_criterion_scan,
    ir_integral,
    pair_kernel_momentum,
    pair_kernel_origin,
    pair_kernel_position,
    rho_hat,
    s_hat,
    s_norm_squared,
)
from src.diagnostics import kernel_cross_check
from src.models import IRTestFunction, ModelParams

UNIT = ModelParams(d=3, e=1.0, sigma=1.0)


def test_form_factor_is_charge_at_origin():
    assert rho_hat(0.0, ModelParams(e=0.7)) == pytest.approx(0.7)
    assert rho_hat(3.0, ModelParams(e=0.7)) < 0.7 * np.exp(-4.4)


@pytest.mark.parametrize("d", [3, 4, 5])
def test_angular_average_is_one_at_origin_and_continuous(d):
    assert angular_average(d, 0.0) == pytest.approx(1.0)
    assert_allclose(angular_average(d, 0.99e-4), angular_average(d, 1.01e-4), rtol=1e-8)


def test_origin_value_is_minus_pi_over_four():
    assert pair_kernel_momentum(0.0, 0.0, UNIT) == pytest.approx(-np.pi / 4, rel=1e-10)
    assert pair_kernel_origin(UNIT) == pytest.approx(-np.pi / 4, rel=1e-12)


@pytest.mark.parametrize("r,t", [(0.0, 0.0), (0.0, 1.5), (0.5, 1.0), (2.0, 0.3), (3.0, 3.0), (4.5, 0.0)])
def test_momentum_and_position_forms_agree(r, t):
    assert_allclose(pair_kernel_momentum(r, t, UNIT), pair_kernel_position(r, t, UNIT), rtol=1e-6)


def test_kernel_is_negative_and_decays_in_time():
    values = [pair_kernel_momentum(1.0, t, UNIT) for t in (0.0, 1.0, 4.0, 16.0)]
    assert all(v < 0 for v in values)
    assert all(abs(a) > abs(b) for a, b in zip(values, values[1:]))


def test_kernel_scales_with_coupling_squared():
    weak = ModelParams(d=3, e=0.3, sigma=1.0)
    assert_allclose(pair_kernel_momentum(1.0, 2.0, weak), 0.09 * pair_kernel_momentum(1.0, 2.0, UNIT), rtol=1e-10)


def test_zero_coupling_kernel_vanishes():
    free = ModelParams(e=0.0)
    assert pair_kernel_momentum(0.3, 0.2, free) == 0.0
    assert pair_kernel_position(0.3, 0.2, free) == 0.0


def test_position_form_is_three_dimensional_only():
    with pytest.raises(UnsupportedDimensionError):
        pair_kernel_position(1.0, 1.0, ModelParams(d=4, e=1.0))


def test_ir_integral_grows_logarithmically_in_three_dimensions():
    params = ModelParams(d=3, e=0.3)
    scan = ir_criterion_scan([1e-2, 1e-3, 1e-4, 1e-5, 1e-6], params)
    x = np.log(1.0 / np.array([e for e, _ in scan]))
    slope = np.polyfit(x, [v for _, v in scan], 1)[0]
    assert slope == pytest.approx(4 * np.pi * 0.09, rel=0.02)


def test_ir_integral_converges_in_four_dimensions():
    params = ModelParams(d=4, e=0.3)
    reference = ir_integral(1e-3, params)
    assert ir_integral(1e-6, params) - ir_integral(1e-5, params) < 1e-3 * reference
    assert ir_bound_integral(params) > reference


def test_ir_integral_rejects_bad_cutoff():
    with pytest.raises(ValueError):
        ir_integral(2.0, UNIT)


def test_bound_integrals():
    assert np.isinf(ir_bound_integral(UNIT))
    assert ir_bound_integral(ModelParams(e=0.0)) == 0.0
    # int exp(-k^2) dk over R^3 / k^2 = 4 pi * sqrt(pi) / 2
    assert coulomb_bound_integral(UNIT) == pytest.approx(2 * np.pi ** 1.5, rel=1e-12)


def test_singularity_profile_support_and_norm():
    test = IRTestFunction()
    assert s_hat(test.k_star * 1.01, test, UNIT) == 0.0
    assert s_hat(0.5 * test.k_star, test, UNIT) > 0.0
    # normalised by the unit-charge shape, so the profile does not depend on e
    assert s_hat(0.1, test, UNIT) == s_hat(0.1, test, ModelParams(e=0.0))
    norm = s_norm_squared(test, UNIT)
    assert np.isfinite(norm) and norm > 0.0


@pytest.fixture(scope="module")
def small_table():
    return build_kernel_table(UNIT, r_max=6.0, t_max=16.0)


def test_table_interpolates_direct_quadrature(small_table):
    rng = np.random.default_rng(3)
    for r, t in zip(rng.uniform(0, 6, 15), rng.uniform(0, 16, 15)):
        assert_allclose(small_table(r, t), pair_kernel_momentum(r, t, UNIT), rtol=1e-6)


def test_table_meets_tolerance_at_cell_midpoints(small_table):
    assert small_table.max_probe_error <= 1e-6
    rng = np.random.default_rng(4)
    i = rng.integers(0, small_table.r_axis.n - 1, 20)
    j = rng.integers(0, small_table.t_axis.n - 1, 20)
    xr = 0.5 * (small_table.r_axis.x[i] + small_table.r_axis.x[i + 1])
    xt = 0.5 * (small_table.t_axis.x[j] + small_table.t_axis.x[j + 1])
    for r, t in zip(small_table.r_axis.scale * np.sinh(xr), small_table.t_axis.scale * np.sinh(xt)):
        assert_allclose(small_table(r, t), pair_kernel_momentum(r, t, UNIT), rtol=1e-6)


def test_table_is_vectorised_and_symmetric_in_sign(small_table):
    r = np.array([[0.1, 1.0], [2.0, 3.0]])
    t = np.array([[0.0, 0.5], [1.0, 8.0]])
    assert small_table(r, t).shape == (2, 2)
    assert_allclose(small_table(-r, -t), small_table(r, t))


def test_table_falls_back_outside_its_range(small_table):
    assert_allclose(small_table(1.0, 20.0), pair_kernel_momentum(1.0, 20.0, UNIT), rtol=1e-10)


def test_table_persists_through_binary_format(small_table, tmp_path):
    header, arrays = small_table.to_arrays()
    write_binary(tmp_path / "w.nirk", KERNEL_MAGIC, header, arrays)
    loaded = KernelTable.from_arrays(*read_binary(tmp_path / "w.nirk", KERNEL_MAGIC))
    assert_allclose(loaded.values, small_table.values, rtol=0, atol=0)
    assert loaded(1.3, 2.7) == small_table(1.3, 2.7)


def test_zero_coupling_table_is_zero():
    table = build_kernel_table(ModelParams(e=0.0), 2.0, 2.0, resolution=16)
    assert np.all(table(np.linspace(0, 2, 5), np.linspace(0, 2, 5)) == 0.0)


def test_kernel_is_non_positive_on_a_dense_grid():
    table = build_kernel_table(UNIT, r_max=10.0, t_max=20.0, resolution=100, tol=1.0)
    assert table.values.shape == (100, 100)
    assert np.all(table.values <= 0.0)
    r, t = np.meshgrid(np.linspace(0.0, 10.0, 100), np.linspace(0.0, 20.0, 100), indexing="ij")
    assert np.all(table(r, t) <= 0.0)
    for rr, tt in zip(np.linspace(0.0, 10.0, 10), np.linspace(20.0, 0.0, 10)):
        assert pair_kernel_momentum(rr, tt, UNIT) <= 0.0


def test_momentum_and_position_forms_agree_on_a_grid():
    report = kernel_cross_check(UNIT, n=20, r_max=5.0, t_max=5.0)
    assert len(report["rows"]) == 400
    assert report["max_rel_err"] < 1e-6


def test_kernel_scaling_in_coupling_is_exact():
    weak, strong = ModelParams(d=3, e=0.3, sigma=1.0), ModelParams(d=3, e=0.6, sigma=1.0)
    rng = np.random.default_rng(5)
    for r, t in zip(rng.uniform(0, 5, 50), rng.uniform(0, 10, 50)):
        assert_allclose(pair_kernel_momentum(r, t, strong), 4.0 * pair_kernel_momentum(r, t, weak), rtol=1e-14)


def test_field_covariance_closed_form():
    gauss = lambda k: np.exp(-0.5 * k * k)
    # (1/4) 4 pi int k exp(-k^2) dk
    assert field_covariance(gauss, gauss, 0.0, UNIT) == pytest.approx(np.pi / 2, rel=1e-10)


def test_field_covariance_gram_matrix_is_positive_semidefinite():
    widths = (0.5, 1.0, 1.0, 2.0, 0.7)
    times = (0.0, 0.3, 1.5, 2.0, 4.0)
    h = [lambda k, w=w: np.exp(-0.5 * (w * k) ** 2) for w in widths]
    gram = np.array([[field_covariance(h[i], h[j], times[i] - times[j], UNIT) for j in range(5)]
                     for i in range(5)])
    assert_allclose(gram, gram.T)
    assert np.linalg.eigvalsh(gram).min() >= -1e-10


def _s_norm_by_nested_quadrature(test: IRTestFunction, sigma: float) -> float:
    """4 pi int (k Phi(k) / shape(k))^2 du over u = -ln k > -ln k*, Phi by an inner quadrature in v = ln(k t)."""
    log_tstar = np.log(test.T_star)

    def k_phi(u):
        def inner(v):
            log_t = v + u
            return np.exp(v - np.exp(v)) / (log_t * np.log(log_t) ** test.zeta)
        value, _ = integrate.quad(inner, max(log_tstar - u, -60.0), np.inf, epsabs=0.0, epsrel=1e-11, limit=200)
        return value

    def outer(u):
        return (k_phi(u) / form_factor_shape(np.exp(-u), sigma)) ** 2

    u_star = -np.log(test.k_star)
    head, _ = integrate.quad(outer, u_star, u_star + 30.0, epsabs=0.0, epsrel=1e-9, limit=200)
    tail, _ = integrate.quad(outer, u_star + 30.0, np.inf, epsabs=0.0, epsrel=1e-9, limit=200)
    return 4.0 * np.pi * (head + tail)


def test_singularity_norm_matches_nested_quadrature():
    test = IRTestFunction(T_star=np.e ** 2, zeta=0.5, k_star=0.5)
    assert s_norm_squared(test, UNIT) == pytest.approx(_s_norm_by_nested_quadrature(test, 1.0), rel=1e-4)
