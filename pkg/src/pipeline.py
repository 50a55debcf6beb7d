"""Experiment orchestrator: builds the numerical ingredients and runs one named experiment."""
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from . import console
from .acceptance import AcceptanceChecker, CheckResult
from .artifact_store import (
    GROUND_STATE_MAGIC,
    KERNEL_MAGIC,
    ArtifactStore,
    read_binary,
    write_binary,
)
from .config_parser import ConfigParser, config_hash
from .diagnostics import (
    bounded_radius,
    convergent_lower_bound,
    convolution_tail_exponent,
    correlation_decay_fit,
    diagonal_action_growth,
    divergence_and_overlap_curves,
    field_correlation_curve,
    g_hat_bound_check,
    g_hat_convergence_check,
    ir_slope_fit,
    kernel_cross_check,
    localization_curve,
    spectral_tail_fit,
    sup_tail_probability,
)
from .errors import InsufficientDataError
from .field_gaussian import GaussianTestFunction, VanishingTestFunction, build_f_profile_table
from .kernels import KernelTable, build_kernel_table, ir_criterion_scan, pair_kernel_origin, s_norm_squared
from .models import CurvePoint, PathConfig, RunConfig
from .path_gibbs import (
    BeadSquaredRadius,
    LagProduct,
    PathTarget,
    energy_observables,
    lattice_boltzmann,
    lattice_metropolis,
    make_stream,
    path_regularity_stats,
    run_chains,
)
from .schrodinger import RadialGroundState, solve_ground_state

EXPERIMENTS = ("kernels", "ir-scan", "sample", "divergence", "convergence", "localization", "decay", "spectral")

CURVE_COLUMNS = ("abscissa", "mean", "stderr", "ess")


def curve_rows(points: list[CurvePoint]) -> list[tuple]:
    return [(float(p.abscissa), p.value.mean, p.value.stderr, p.value.ess) for p in points]


class ExperimentPipeline:
    """Orchestrates one experiment run: ingredients, sampling, diagnostics, artifacts."""

    def __init__(
        self,
        config: Union[RunConfig, str, Path],
        output_root: Optional[Union[str, Path]] = None
    ):
        """
        Initialize the pipeline.

        Args:
            config: Validated RunConfig or path to a config file
            output_root: Override for the config's output_dir
        """
        self.config = config if isinstance(config, RunConfig) else ConfigParser.parse(config)
        self.config_hash = config_hash(self.config)
        self.output_root = Path(output_root if output_root is not None else self.config.output_dir)
        self.checker = AcceptanceChecker(self.config.acceptance)

        # Lazily built ingredients, shared by the steps of a run
        self._ground_state: Optional[RadialGroundState] = None
        self._tables: dict[float, KernelTable] = {}
        self.results: list[CheckResult] = []

    # -- ingredients --------------------------------------------------------

    def ground_state(self, store: ArtifactStore) -> RadialGroundState:
        """Solve (or reload) the radial ground state, persisted as NIRG1."""
        if self._ground_state is not None:
            return self._ground_state
        path = store.run_dir / "ground_state.nirg"
        if path.exists():
            header, arrays = read_binary(path, GROUND_STATE_MAGIC)
            store.check_hash(header, path)
            self._ground_state = RadialGroundState.from_arrays(header, arrays)
            console.ok(f"Ground state reloaded: E_p = {self._ground_state.E_p:.10g}")
        else:
            model = self.config.model
            gs = solve_ground_state(model.potential(), model.d, grid_points=self.config.experiments.grid_points)
            header, arrays = gs.to_arrays()
            header["config_hash"] = self.config_hash
            write_binary(path, GROUND_STATE_MAGIC, header, arrays)
            self._ground_state = gs
            console.ok(f"Ground state solved: E_p = {gs.E_p:.10g}, r_max = {gs.r_max:.4g}")
        return self._ground_state

    def kernel_table(self, store: ArtifactStore, T_max: float) -> Optional[KernelTable]:
        """W table covering separations of two ground-state radii and time gaps up to 2 T_max."""
        if self.config.model.e == 0.0:
            return None
        if T_max in self._tables:
            return self._tables[T_max]
        gs = self.ground_state(store)
        path = store.run_dir / f"kernel_table_T{T_max:g}.nirk"
        if path.exists():
            header, arrays = read_binary(path, KERNEL_MAGIC)
            store.check_hash(header, path)
            table = KernelTable.from_arrays(header, arrays)
            console.ok(f"Kernel table reloaded: {path.name}")
        else:
            exp = self.config.experiments
            table = build_kernel_table(self.config.model, 2.0 * gs.r_limit, 2.0 * T_max,
                                       resolution=exp.table_resolution, tol=exp.table_tol)
            header, arrays = table.to_arrays()
            header["config_hash"] = self.config_hash
            write_binary(path, KERNEL_MAGIC, header, arrays)
            console.ok(f"Kernel table built: probe error {table.max_probe_error:.2e}")
        self._tables[T_max] = table
        return table

    def _checkpoints(self, store: ArtifactStore, T: float) -> Callable[[int], Path]:
        store.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        return lambda chain: store.checkpoint_path(chain, T)

    # -- run ----------------------------------------------------------------

    def run(self, experiment: str) -> dict:
        """
        Run one experiment end to end.

        Args:
            experiment: One of EXPERIMENTS

        Returns:
            Summary dictionary (also written to summary.json)

        Raises:
            ValueError: For an unknown experiment name
        """
        if experiment not in EXPERIMENTS:
            raise ValueError(f"Unknown experiment '{experiment}'; valid names: {', '.join(EXPERIMENTS)}")

        console.banner(f"Nelson IR simulator - {experiment}")

        console.step("[1/3] Validating configuration...")
        is_valid, warnings = ConfigParser.validate_config(self.config)
        if not is_valid:
            raise ValueError(f"Invalid config: {warnings}")
        for warning in warnings:
            console.warn(warning)
        model = self.config.model
        console.ok(f"Config hash: {self.config_hash}")
        console.info(f"d={model.d}, e={model.e}, sigma={model.sigma}, alpha={model.pot_alpha}")

        store = ArtifactStore(self.output_root, experiment, self.config_hash)
        self.results = []

        console.step(f"\n[2/3] Running {experiment}...")
        handler = getattr(self, "_run_" + experiment.replace("-", "_"))
        summary = handler(store)

        console.step("\n[3/3] Writing summary...")
        summary["acceptance"] = AcceptanceChecker.summarize(self.results)
        summary_path = store.save_summary(summary)
        console.ok(f"Summary saved: {summary_path}")

        acceptance = summary["acceptance"]
        for name, check in acceptance["checks"].items():
            if check["passed"]:
                console.ok(f"{name}: {check['message']}")
            else:
                console.fail(f"{name}: {check['message']}")
        console.banner(f"Checks: {acceptance['passed']}/{acceptance['total']} passed")
        return summary

    # -- experiments --------------------------------------------------------

    def _run_kernels(self, store: ArtifactStore) -> dict:
        params = self.config.model
        summary: dict = {"W00": pair_kernel_origin(params)}
        if params.d == 3 and params.e > 0:
            report = kernel_cross_check(params)
            store.save_csv(("r", "t", "W_momentum", "W_position"), report["rows"])
            self.results.extend(self.checker.check_kernel_cross(report, report["W00_exact"]))
            summary["cross_check"] = {k: v for k, v in report.items() if k != "rows"}
            console.ok(f"Cross-representation error {report['max_rel_err']:.2e}")
        else:
            console.info("Position-space form is d = 3 only; skipping the cross check")

        gs = self.ground_state(store)
        table = self.kernel_table(store, self.config.path.T)
        if table is not None:
            summary["table"] = {"r_max": table.r_max, "t_max": table.t_max,
                                "max_probe_error": table.max_probe_error}

        # conditional-mean bounds on arbitrary paths
        rng = make_stream(self.config.mcmc.seed, 0, len(EXPERIMENTS))
        cfg = self.config.path
        steps = rng.standard_normal((16, cfg.n_beads, params.d)) * np.sqrt(cfg.dt)
        paths = np.clip(np.cumsum(steps, axis=1), -0.9 * gs.r_limit, 0.9 * gs.r_limit)
        bound = g_hat_bound_check(paths, cfg, params, 1000, rng)
        ks = np.geomspace(1e-2, min(10.0 / params.sigma, 20.0 / cfg.T), 100)
        rate = g_hat_convergence_check(ks, cfg.T, params)
        self.results.append(self.checker.check_bound_report("g_hat_bound", bound))
        self.results.append(self.checker.check_bound_report("g_hat_convergence", rate))
        summary.update({"g_hat_bound": bound, "g_hat_convergence": rate})
        return summary

    def _run_ir_scan(self, store: ArtifactStore) -> dict:
        params = self.config.model
        eps = [10.0 ** -j for j in range(1, 9)]
        scan = ir_criterion_scan(eps, params)
        store.save_csv(("eps", "I"), scan)
        summary: dict = {"scan": scan}
        if params.d == 3:
            fit = ir_slope_fit(params, eps)
            self.results.append(self.checker.check_ir_slope(fit))
            summary["slope_fit"] = {k: v for k, v in fit.items() if k != "scan"}
            console.ok(f"Slope {fit['slope']:.6g} (expected {fit['expected_slope']:.6g})")
        else:
            self.results.append(self.checker.check_ir_convergence(scan))
        return summary

    def _run_sample(self, store: ArtifactStore) -> dict:
        cfg = self.config
        params = cfg.model
        gs = self.ground_state(store)
        table = self.kernel_table(store, cfg.path.T)
        lag = 1.0 if cfg.path.T >= 1.0 else cfg.path.dt
        observables = [BeadSquaredRadius(0.0), LagProduct(lag)] + energy_observables()
        per_chain = max(0, (cfg.mcmc.steps - cfg.mcmc.burn_in) // cfg.mcmc.thin)

        console.info(f"{cfg.mcmc.chains} chains x {cfg.mcmc.steps} sweeps, {cfg.path.n_beads} beads")
        pooled = run_chains(cfg, gs, table, observables, checkpoint_for=self._checkpoints(store, cfg.path.T),
                            config_hash=self.config_hash, keep_paths=per_chain)
        estimates = pooled.estimates
        store.save_csv(("observable", "mean", "stderr", "ess"),
                       [(name, e.mean, e.stderr, e.ess) for name, e in estimates.items()])
        for name, e in estimates.items():
            console.ok(f"{name} = {e.mean:.6g} +/- {e.stderr:.2g} (ess {e.ess:.0f})")

        summary: dict = {
            "estimates": estimates,
            "acceptance_rates": [c.acceptance for c in pooled.chains],
            "tuning": [c.tuning for c in pooled.chains],
        }
        paths = pooled.paths
        if table is not None:
            growth = diagonal_action_growth(paths, table, cfg.path, params)
            self.results.append(self.checker.check_bound_report("diagonal_action_growth", growth))
            summary["diagonal_action_growth"] = growth
        try:
            summary["regularity"] = path_regularity_stats(paths, cfg.path, params.pot_alpha).as_dict()
        except InsufficientDataError as e:
            console.warn(f"Path regularity skipped: {e}")
        windows = [w for w in (1.0, 2.0, 4.0, 8.0) if w <= cfg.path.T]
        summary["sup_tail"] = [p.model_dump() for p in sup_tail_probability(paths, 0.5, windows, cfg.path)]

        if params.e == 0.0 and params.pot_alpha == 1.0 and params.pot_C == 0.5:
            # harmonic oscillator: |q|^2 has mean d/2, q_0 . q_t has mean (d/2) exp(-t)
            self.results.append(self.checker.check_against_value(
                "harmonic_second_moment", estimates[observables[0].name], params.d / 2.0))
            self.results.append(self.checker.check_against_value(
                "harmonic_lag_covariance", estimates[observables[1].name], params.d / 2.0 * np.exp(-lag)))

        tv = self._lattice_oracle(gs, table)
        self.results.append(self.checker.check_lattice_oracle(tv))
        summary["lattice_total_variation"] = tv
        return summary

    def _lattice_oracle(self, gs: RadialGroundState, table: Optional[KernelTable]) -> float:
        """Three-bead chain on a three-point lattice against the enumerated law."""
        dt = self.config.path.dt
        target = PathTarget(gs, table, PathConfig(T=dt, dt=dt, d=self.config.model.d))
        lattice = np.linspace(-0.5, 0.5, 3) * min(1.0, gs.r_limit)
        exact = lattice_boltzmann(target, lattice)
        rng = make_stream(self.config.mcmc.seed, 0, len(EXPERIMENTS) + 1)
        freqs, _ = lattice_metropolis(target, lattice, 400_000, rng)
        return float(0.5 * np.abs(freqs - exact).sum())

    def _run_divergence(self, store: ArtifactStore) -> dict:
        cfg = self.config
        params = cfg.model
        gs = self.ground_state(store)
        T_max = max(cfg.experiments.T_list)
        table = self.kernel_table(store, T_max)
        s_norm2 = s_norm_squared(cfg.test, params)
        console.info(f"||s||^2 = {s_norm2:.6g}")
        profile = build_f_profile_table(cfg.test, gs.r_limit, T_max)
        console.ok("F profile tabulated")

        divergence, overlap = divergence_and_overlap_curves(cfg, gs, table, profile, s_norm2, store.checkpoint_dir,
                                                            self.config_hash)
        store.save_csv(CURVE_COLUMNS, curve_rows(divergence))
        store.save_csv(CURVE_COLUMNS, curve_rows(overlap), filename="overlap.csv")
        for p, q in zip(divergence, overlap):
            console.info(f"T={p.abscissa:g}: F = {p.value.mean:.5g} +/- {p.value.stderr:.2g}, "
                         f"overlap bound = {q.value.mean:.5g} +/- {q.value.stderr:.2g}")

        self.results.extend(self.checker.check_divergence(divergence))
        self.results.extend(self.checker.check_overlap_bound(overlap))
        return {"s_norm2": s_norm2, "divergence": divergence, "overlap": overlap}

    def _run_convergence(self, store: ArtifactStore) -> dict:
        cfg = self.config
        gs = self.ground_state(store)
        T_list = [T for T in cfg.experiments.T_list if T <= 16.0] or list(cfg.experiments.T_list)
        table = self.kernel_table(store, max(T_list))
        points = convergent_lower_bound(cfg, gs, table, T_list, store.checkpoint_dir, self.config_hash)
        store.save_csv(CURVE_COLUMNS, curve_rows(points))
        for p in points:
            console.info(f"T={p.abscissa:g}: bound = {p.value.mean:.5g} +/- {p.value.stderr:.2g}, "
                         f"floor = {p.extras['analytic_floor']:.4g}")
        self.results.extend(self.checker.check_convergence(points))
        return {"points": points}

    def _run_localization(self, store: ArtifactStore) -> dict:
        cfg = self.config
        gs = self.ground_state(store)
        T_list = (8.0, 16.0)
        table = self.kernel_table(store, max(T_list))
        reports = localization_curve(cfg, gs, table, T_list, store.checkpoint_dir, self.config_hash)
        rows = []
        for T, rep in reports.items():
            centres = 0.5 * (rep.edges[:-1] + np.minimum(rep.edges[1:], gs.r_limit))
            rows.extend((T, float(c), float(v), float(s), int(h))
                        for c, v, s, h in zip(centres, rep.ratio, rep.stderr, rep.hits))
            console.info(f"T={T:g}: ratio band [{rep.c1:.3f}, {rep.c2:.3f}]")
        store.save_csv(("T", "radius", "ratio", "stderr", "hits"), rows)
        self.results.extend(self.checker.check_localization(reports))
        return {"bands": {f"{T:g}": {"c1": r.c1, "c2": r.c2, "excluded": r.excluded,
                                     "normalization": r.normalization} for T, r in reports.items()}}

    def _run_decay(self, store: ArtifactStore) -> dict:
        cfg = self.config
        params = cfg.model
        gs = self.ground_state(store)
        table = self.kernel_table(store, cfg.path.T)
        per_chain = max(0, (cfg.mcmc.steps - cfg.mcmc.burn_in) // cfg.mcmc.thin)
        lags = [lag for lag in cfg.experiments.lags if lag <= cfg.path.T]
        pooled = run_chains(cfg, gs, table, [BeadSquaredRadius(0.0)],
                            checkpoint_for=self._checkpoints(store, cfg.path.T),
                            config_hash=self.config_hash, keep_paths=per_chain)
        fit = correlation_decay_fit(pooled.paths, bounded_radius, bounded_radius, lags, cfg.path)
        rows = list(zip(fit.extras["lags"], fit.extras["cov"], fit.extras["stderr"]))
        store.save_csv(("lag", "cov", "stderr"), rows)
        console.info(f"Fitted envelope exponent {fit.exponent:.3f} +/- {fit.exponent_stderr:.2g}")
        summary: dict = {"fit": fit}
        if params.e > 0.0 and not fit.extras.get("skipped"):
            self.results.append(self.checker.check_decay(fit))
        if params.d == 3:
            field = field_correlation_curve(pooled.paths[:200], GaussianTestFunction(), lags, cfg.path, params)
            store.save_csv(CURVE_COLUMNS, curve_rows(field), filename="field_correlation.csv")
            summary["field_correlation"] = field
        return summary

    def _run_spectral(self, store: ArtifactStore) -> dict:
        exp = self.config.experiments
        params = self.config.model
        rows = []
        fits: dict = {}
        for d in sorted({params.d, 3, 4}):
            p = params.model_copy(update={"d": d})
            fit = spectral_tail_fit(GaussianTestFunction(), exp.t_list, p)
            fits[f"explicit_d{d}"] = fit
            self.results.append(self.checker.check_spectral_tail(fit, d - 1, f"spectral_tail_d{d}"))
            vanishing = spectral_tail_fit(VanishingTestFunction(), exp.t_list, p)
            fits[f"vanishing_d{d}"] = vanishing
            self.results.append(self.checker.check_exponent_above(vanishing, d - 0.5, f"spectral_vanishing_d{d}"))
            rows.append(("explicit", d, float("nan"), fit.exponent, fit.exponent_stderr, fit.r_squared, float("nan")))
            rows.append(("vanishing", d, float("nan"), vanishing.exponent, vanishing.exponent_stderr,
                         vanishing.r_squared, float("nan")))
            for gamma in exp.gammas:
                conv = convolution_tail_exponent(d, gamma, exp.t_list)
                fits[f"convolution_d{d}_gamma{gamma:g}"] = conv
                self.results.extend(self.checker.check_convolution(conv))
                rows.append(("convolution", d, gamma, conv.exponent, conv.exponent_stderr, conv.r_squared,
                             conv.extras["naive_exponent"]))
            console.ok(f"d={d}: explicit exponent {fit.exponent:.4f}, vanishing h(0) {vanishing.exponent:.4f}")
        store.save_csv(("term", "d", "gamma", "exponent", "stderr", "r_squared", "naive_exponent"), rows)
        return {"fits": fits}
