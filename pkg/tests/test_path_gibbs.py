import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.errors import CheckpointMismatchError, InsufficientDataError, NonFiniteObservableError
from src.kernels import build_kernel_table
from src.models import ModelParams, PathConfig
from src.path_gibbs import (
    BeadSquaredRadius,
    CrossActionExp,
    LagProduct,
    Observable,
    PathTarget,
    initial_state,
    lattice_boltzmann,
    lattice_metropolis,
    make_stream,
    mcmc_step,
    metropolis_update,
    path_regularity_stats,
    run_chain,
    run_chains,
    sup_exceedance,
    validate_path,
)

from .conftest import small_run

THREE_BEADS = PathConfig(T=0.1, dt=0.1, d=3)


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv("NIRSIM_THREADS", "1")


@pytest.fixture
def random_path():
    cfg = PathConfig(T=1.0, dt=0.1, d=3)
    return cfg, 0.5 * np.random.default_rng(4).standard_normal((cfg.n_beads, 3))


def test_lattice_chain_matches_enumerated_law(harmonic_gs, pair_kernel):
    target = PathTarget(harmonic_gs, pair_kernel, THREE_BEADS)
    lattice = [-0.6, 0.0, 0.6]
    exact = lattice_boltzmann(target, lattice)
    empirical, transitions = lattice_metropolis(target, lattice, 1_000_000, make_stream(3))
    assert exact.shape == (3, 3, 3)
    assert 0.5 * np.abs(empirical - exact).sum() < 1e-2
    assert transitions.sum() == 1_000_000


def test_lattice_chain_is_reversible(harmonic_gs, pair_kernel):
    target = PathTarget(harmonic_gs, pair_kernel, THREE_BEADS)
    lattice = [-0.6, 0.0, 0.6]
    exact = lattice_boltzmann(target, lattice).ravel()
    n_steps = 1_000_000
    _, counts = lattice_metropolis(target, lattice, n_steps, make_stream(4))
    states = np.array(list(np.ndindex(3, 3, 3)))
    moves = (states[:, None, :] != states[None, :, :]).sum(axis=-1)
    assert np.all(counts[moves > 1] == 0)
    i, j = np.nonzero(np.triu(moves == 1))
    # stationary flux between single-bead neighbours: (1/3)(1/3) min(pi_i, pi_j) both ways
    expected = n_steps * np.minimum(exact[i], exact[j]) / 9.0
    total = counts[i, j] + counts[j, i]
    assert np.all(np.abs(counts[i, j] - counts[j, i]) <= 5 * np.sqrt(total))
    busy = expected > 2000
    assert busy.any()
    assert_allclose(0.5 * total[busy], expected[busy], rtol=0.2)


def test_interaction_changes_the_lattice_law(harmonic_gs, pair_kernel):
    lattice = [-0.6, 0.0, 0.6]
    free = lattice_boltzmann(PathTarget(harmonic_gs, None, THREE_BEADS), lattice)
    bound = lattice_boltzmann(PathTarget(harmonic_gs, pair_kernel, THREE_BEADS), lattice)
    # attraction favours coincident beads
    assert bound[1, 1, 1] > free[1, 1, 1]


def test_action_delta_matches_full_recomputation(harmonic_gs, pair_kernel, random_path):
    cfg, path = random_path
    target = PathTarget(harmonic_gs, pair_kernel, cfg)
    idx = np.array([0, 4, 5])
    new = path[idx] + 0.3
    moved = path.copy()
    moved[idx] = new
    assert_allclose(target.action_delta(path, idx, new), target.action(moved) - target.action(path), atol=1e-12)
    assert_allclose(target.reference_delta(path, idx, new), target.reference(moved) - target.reference(path),
                    atol=1e-10)


def test_reference_delta_outside_domain(harmonic_gs, random_path):
    cfg, path = random_path
    target = PathTarget(harmonic_gs, None, cfg)
    far = np.array([[2 * harmonic_gs.r_limit, 0.0, 0.0]])
    assert target.reference_delta(path, np.array([3]), far) == -np.inf


def test_attractive_kernel_gives_non_positive_cross_action(harmonic_gs, pair_kernel, random_path):
    cfg, path = random_path
    target = PathTarget(harmonic_gs, pair_kernel, cfg)
    assert target.cross(path) <= 0.0
    assert CrossActionExp()(path, target) <= 1.0
    assert target.action(path) < 0.0


def test_free_target_ignores_table(harmonic_gs, random_path):
    cfg, path = random_path
    target = PathTarget(harmonic_gs, None, cfg)
    assert not target.interacting
    assert target.action(path) == 0.0
    assert target.cross(path) == 0.0


def test_validate_path(random_path):
    cfg, path = random_path
    with pytest.raises(ValueError):
        validate_path(path[:-1], cfg)
    bad = path.copy()
    bad[2, 1] = np.inf
    with pytest.raises(ValueError):
        validate_path(bad, cfg)


def test_streams_are_reproducible_and_distinct():
    assert_array_equal(make_stream(5, 1, 2).random(4), make_stream(5, 1, 2).random(4))
    assert not np.array_equal(make_stream(5, 0, 2).random(4), make_stream(5, 1, 2).random(4))
    assert not np.array_equal(make_stream(5, 1, 0).random(4), make_stream(5, 1, 2).random(4))


def test_chain_is_deterministic(harmonic_gs, tiny_run):
    obs = [BeadSquaredRadius(0.0)]
    a = run_chain(tiny_run, harmonic_gs, None, obs)
    b = run_chain(tiny_run, harmonic_gs, None, obs)
    assert_array_equal(a.traces["q2_t0"], b.traces["q2_t0"])
    assert len(a.traces["q2_t0"]) == 40


def test_resumed_chain_equals_uninterrupted_chain(harmonic_gs, pair_kernel, tmp_path):
    cfg = small_run(e=1.0)
    obs = [BeadSquaredRadius(0.0), LagProduct(0.5)]
    checkpoint = tmp_path / "chain_0_T1.nirc"
    run_chain(cfg, harmonic_gs, pair_kernel, obs, n_steps=40, checkpoint=checkpoint, config_hash="h", keep_paths=5)
    resumed = run_chain(cfg, harmonic_gs, pair_kernel, obs, n_steps=60, checkpoint=checkpoint, config_hash="h",
                        keep_paths=5)
    straight = run_chain(cfg, harmonic_gs, pair_kernel, obs, n_steps=60, keep_paths=5)
    for name in straight.traces:
        assert_array_equal(resumed.traces[name], straight.traces[name])
    assert_array_equal(resumed.final_path, straight.final_path)
    assert len(resumed.paths) == 5


def test_checkpoint_from_other_config_is_refused(harmonic_gs, tiny_run, tmp_path):
    checkpoint = tmp_path / "c.nirc"
    run_chain(tiny_run, harmonic_gs, None, [BeadSquaredRadius()], n_steps=30, checkpoint=checkpoint, config_hash="a")
    with pytest.raises(CheckpointMismatchError):
        run_chain(tiny_run, harmonic_gs, None, [BeadSquaredRadius()], checkpoint=checkpoint, config_hash="b")


class _NanAfterBurnIn(Observable):
    name = "nan"

    def __call__(self, path, target):
        return float("nan")


def test_non_finite_observable_reports_sweep(harmonic_gs, tiny_run):
    with pytest.raises(NonFiniteObservableError) as info:
        run_chain(tiny_run, harmonic_gs, None, [_NanAfterBurnIn()])
    assert info.value.step == tiny_run.mcmc.burn_in + 1


def test_too_few_steps(harmonic_gs, tiny_run):
    with pytest.raises(ValueError):
        run_chain(tiny_run, harmonic_gs, None, [], n_steps=5)


def test_pooled_chains_are_ordered(harmonic_gs):
    cfg = small_run(chains=3)
    pooled = run_chains(cfg, harmonic_gs, None, [BeadSquaredRadius()], keep_paths=2)
    assert [c.chain_id for c in pooled.chains] == [0, 1, 2]
    assert pooled.trace("q2_t0").size == 120
    assert len(pooled.paths) == 6
    assert pooled.estimates["q2_t0"].n_samples == 120


def test_sup_exceedance():
    cfg = PathConfig(T=1.0, dt=0.5, d=3)
    paths = np.zeros((4, cfg.n_beads, 3))
    paths[:2, 2, 0] = 3.0
    est = sup_exceedance(paths, 1.0, 1.0, cfg)
    assert est.mean == 0.5
    assert est.stderr == pytest.approx(0.25)


def test_regularity_needs_one_hundred_paths():
    cfg = PathConfig(T=1.0, dt=0.1, d=3)
    with pytest.raises(InsufficientDataError):
        path_regularity_stats(np.zeros((99, cfg.n_beads, 3)), cfg, pot_alpha=2.0)


def test_regularity_of_brownian_paths():
    cfg = PathConfig(T=2.0, dt=0.05, d=3)
    rng = np.random.default_rng(8)
    paths = np.cumsum(np.sqrt(cfg.dt) * rng.standard_normal((120, cfg.n_beads, 3)), axis=1)
    report = path_regularity_stats(paths, cfg, pot_alpha=2.0)
    assert np.all(report.modulus_median > 0.0)
    assert np.all(np.diff(report.sup_p99) >= 0.0)
    assert set(report.as_dict()) >= {"C1", "C2", "residuals"}


@pytest.mark.slow
def test_free_chain_reproduces_stationary_correlation(harmonic_gs):
    # e = 0 harmonic: E[q_0 . q_t] = (3/2) exp(-t)
    cfg = small_run(T=4.0, dt=0.1, steps=3000, burn_in=500, chains=2, seed=21)
    pooled = run_chains(cfg, harmonic_gs, None, [BeadSquaredRadius(0.0), LagProduct(1.0)])
    est = pooled.estimates
    assert est["q2_t0"].mean == pytest.approx(1.5, abs=max(0.1, 4 * est["q2_t0"].stderr))
    assert est["q0qt_1"].mean == pytest.approx(1.5 * np.exp(-1.0), abs=max(0.1, 4 * est["q0qt_1"].stderr))


def test_target_is_symmetric_under_time_reflection(harmonic_gs, pair_kernel, random_path):
    cfg, path = random_path
    target = PathTarget(harmonic_gs, pair_kernel, cfg)
    reflected = path[::-1]
    assert target.log_density(reflected) == pytest.approx(target.log_density(path), rel=1e-12)
    assert target.action(reflected) == pytest.approx(target.action(path), rel=1e-12)
    assert target.cross(reflected) == pytest.approx(target.cross(path), rel=1e-12)
    law = lattice_boltzmann(PathTarget(harmonic_gs, pair_kernel, THREE_BEADS), [-0.6, 0.0, 0.6])
    assert_allclose(law.transpose(2, 1, 0), law, rtol=1e-12)


@pytest.fixture(scope="module")
def coupled_tables():
    return {e: build_kernel_table(ModelParams(d=3, e=e), r_max=6.0, t_max=2.0, resolution=64, tol=1.0)
            for e in (0.5, 1.0)}


def test_action_scales_with_coupling_squared(harmonic_gs, coupled_tables, random_path):
    cfg, path = random_path
    weak = PathTarget(harmonic_gs, coupled_tables[0.5], cfg)
    unit = PathTarget(harmonic_gs, coupled_tables[1.0], cfg)
    assert unit.action(path) < 0.0
    assert weak.action(path) == pytest.approx(0.25 * unit.action(path), rel=1e-12)
    assert weak.cross(path) == pytest.approx(0.25 * unit.cross(path), rel=1e-12)


def test_metropolis_update_matches_mcmc_step(harmonic_gs, pair_kernel):
    cfg = small_run(e=0.3)
    target = PathTarget(harmonic_gs, pair_kernel, cfg.path)
    a = initial_state(target, cfg.mcmc, make_stream(9))
    b = initial_state(target, cfg.mcmc, make_stream(9))
    rng = make_stream(9, 0, 1)
    b.rng = make_stream(9, 0, 1)
    for _ in range(200):
        metropolis_update(a, harmonic_gs, pair_kernel, cfg, rng)
        mcmc_step(b, target, cfg.mcmc)
    assert a.rng is rng
    assert_array_equal(a.path, b.path)
    assert a.tallies == b.tallies
    assert a.action == pytest.approx(target.action(a.path), abs=1e-10)
