"""Pass/fail acceptance checks over experiment results."""
import math
from typing import Optional, Sequence

import numpy as np

from .models import AcceptanceThresholds, CurvePoint, Estimate, TailFit


class CheckResult:
    """Result of an acceptance check."""

    def __init__(
        self,
        name: str,
        passed: bool,
        measured: float,
        threshold: float,
        message: str,
        details: Optional[dict] = None
    ):
        self.name = name
        self.passed = bool(passed)
        self.measured = float(measured)
        self.threshold = float(threshold)
        self.message = message
        self.details = details or {}

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "measured": self.measured,
            "threshold": self.threshold,
            "message": self.message,
            "details": self.details,
        }


def _combined(a: Estimate, b: Estimate) -> float:
    return math.hypot(a.stderr, b.stderr)


class AcceptanceChecker:
    """Turns experiment results into CheckResults against configured thresholds."""

    def __init__(self, thresholds: Optional[AcceptanceThresholds] = None):
        """
        Initialize acceptance checker.

        Args:
            thresholds: Stderr multiples and tolerances (defaults when None)
        """
        self.thresholds = thresholds or AcceptanceThresholds()

    # -- kernels ------------------------------------------------------------

    def check_kernel_cross(self, report: dict, expected_w00: float, tol: float = 1e-6,
                           w00_tol: float = 1e-8) -> list[CheckResult]:
        """Momentum- and position-space W agree; W(0, 0) matches its closed form."""
        agree = CheckResult(
            "kernel_cross_representation",
            report["max_rel_err"] <= tol,
            report["max_rel_err"],
            tol,
            f"max relative difference {report['max_rel_err']:.2e} over the (r, t) grid",
        )
        gap = abs(report["W00"] - expected_w00)
        origin = CheckResult(
            "kernel_origin_value",
            gap <= w00_tol * max(1.0, abs(expected_w00)),
            gap,
            w00_tol,
            f"W(0,0) = {report['W00']:.12g}, expected {expected_w00:.12g}",
        )
        return [agree, origin]

    def check_ir_slope(self, report: dict, rel_tol: float = 0.02, min_r2: float = 0.999) -> CheckResult:
        """d = 3: I(eps) grows like 4 pi e^2 ln(1/eps)."""
        expected = report["expected_slope"]
        rel = abs(report["slope"] - expected) / expected if expected else abs(report["slope"])
        return CheckResult(
            "ir_log_divergence",
            rel <= rel_tol and report["r_squared"] > min_r2,
            rel,
            rel_tol,
            f"slope {report['slope']:.6g} vs {expected:.6g}, R^2 = {report['r_squared']:.6f}",
        )

    def check_ir_convergence(self, scan: Sequence[tuple[float, float]], rel_tol: float = 1e-3) -> CheckResult:
        """d >= 4: the last cutoff increments are negligible next to I(1e-3)."""
        eps = np.array([e for e, _ in scan])
        values = np.array([v for _, v in scan])
        reference = float(np.interp(np.log(1e-3), np.log(eps[::-1]), values[::-1]))
        increment = abs(values[-1] - values[-2]) if len(values) > 1 else 0.0
        ratio = increment / reference if reference > 0 else 0.0
        return CheckResult(
            "ir_convergence",
            ratio < rel_tol,
            ratio,
            rel_tol,
            f"last increment {increment:.3e} relative to I(1e-3) = {reference:.6g}",
        )

    # -- sampler oracles ----------------------------------------------------

    def check_lattice_oracle(self, total_variation: float, tol: float = 1e-2) -> CheckResult:
        return CheckResult(
            "lattice_exact_law",
            total_variation <= tol,
            total_variation,
            tol,
            f"total variation to the enumerated law {total_variation:.4f}",
        )

    def check_against_value(self, name: str, est: Estimate, expected: float) -> CheckResult:
        """Estimate within n_stderr of an exact value."""
        n = self.thresholds.n_stderr
        z = abs(est.mean - expected) / est.stderr if est.stderr > 0 else (0.0 if est.mean == expected else math.inf)
        return CheckResult(
            name,
            z <= n,
            z,
            n,
            f"{est.mean:.6g} +/- {est.stderr:.2g} vs exact {expected:.6g}",
        )

    # -- curves -------------------------------------------------------------

    def check_divergence(self, points: Sequence[CurvePoint]) -> list[CheckResult]:
        """Strict decrease beyond n_stderr, overall decay ratio, and insensitivity to the cap."""
        n = self.thresholds.n_stderr
        drops = [
            (a.value.mean - b.value.mean) / max(_combined(a.value, b.value), 1e-300)
            for a, b in zip(points, points[1:])
        ]
        first, last = points[0].value, points[-1].value
        ratio = last.mean / first.mean if first.mean else math.inf
        beyond = first.mean - last.mean > n * _combined(first, last)
        results = [
            CheckResult(
                "divergence_monotone",
                all(z > n for z in drops),
                min(drops) if drops else 0.0,
                n,
                f"smallest step decrease {min(drops) if drops else 0.0:.2f} combined stderr",
                {"steps": drops},
            ),
            CheckResult(
                "divergence_ratio",
                ratio < self.thresholds.decay_ratio and beyond,
                ratio,
                self.thresholds.decay_ratio,
                f"value(T={points[-1].abscissa:g}) / value(T={points[0].abscissa:g}) = {ratio:.3f}",
            ),
        ]
        worst = 0.0
        for p in points:
            caps = [Estimate(**c) for c in p.extras.get("caps", {}).values()]
            for a, b in zip(caps, caps[1:]):
                worst = max(worst, a.z_distance(b))
        results.append(CheckResult(
            "divergence_cap_insensitive",
            worst <= n,
            worst,
            n,
            f"largest disagreement between caps {worst:.2f} combined stderr",
        ))
        return results

    def check_overlap_bound(self, points: Sequence[CurvePoint]) -> list[CheckResult]:
        n = self.thresholds.n_stderr
        largest = max(p.value.mean for p in points)
        first, last = points[0].value, points[-1].value
        z = (first.mean - last.mean) / max(_combined(first, last), 1e-300)
        return [
            CheckResult("overlap_at_most_one", largest <= 1.0 + 1e-12, largest, 1.0,
                        f"largest E[exp(cross action)] = {largest:.6g}"),
            CheckResult("overlap_decreasing", z > n, z, n,
                        f"decrease from T={points[0].abscissa:g} to T={points[-1].abscissa:g}: {z:.2f} stderr"),
        ]

    def check_convergence(self, points: Sequence[CurvePoint]) -> list[CheckResult]:
        """Jensen bound positive, flat in T, and above the analytic floor."""
        n = self.thresholds.n_stderr
        smallest = min(p.value.mean for p in points)
        spread = max(
            (a.value.z_distance(b.value) for i, a in enumerate(points) for b in points[i + 1:]),
            default=0.0,
        )
        gaps = [p.value.mean - p.extras.get("analytic_floor", 0.0) + n * p.value.stderr for p in points]
        return [
            CheckResult("convergence_positive", smallest > 0.0, smallest, 0.0,
                        f"smallest lower bound {smallest:.6g}"),
            CheckResult("convergence_flat", spread <= n, spread, n,
                        f"largest pairwise disagreement {spread:.2f} combined stderr"),
            CheckResult("convergence_above_floor", min(gaps) >= 0.0, min(gaps), 0.0,
                        "estimate vs exp(-(1/8) int rho^2/k^3) times the overlap coefficient"),
        ]

    def check_localization(self, reports: dict) -> list[CheckResult]:
        """Bounded band at every T and per-bin agreement between the first two T."""
        n = self.thresholds.n_stderr
        results = []
        for T, rep in reports.items():
            lo, hi = rep.c1, rep.c2
            results.append(CheckResult(
                f"localization_band_T{T:g}",
                lo > 0.0 and np.isfinite(hi),
                hi / lo if lo > 0 else math.inf,
                math.inf,
                f"ratios in [{lo:.3f}, {hi:.3f}] over {int(rep.kept.sum())} bins, excluded {rep.excluded}",
            ))
            z_norm = abs(rep.normalization.mean - rep.kept.mean()) / max(rep.normalization.stderr, 1e-300)
            results.append(CheckResult(
                f"localization_normalized_T{T:g}",
                z_norm <= n or rep.kept.all(),
                z_norm,
                n,
                f"mass in kept bins {rep.normalization.mean:.4f}",
            ))
        if len(reports) >= 2:
            (T1, a), (T2, b) = list(reports.items())[:2]
            both = a.kept & b.kept
            z = np.abs(a.ratio - b.ratio)[both] / np.maximum(np.hypot(a.stderr, b.stderr)[both], 1e-300)
            worst = float(z.max()) if z.size else 0.0
            results.append(CheckResult(
                "localization_T_uniform",
                worst <= n,
                worst,
                n,
                f"largest per-bin disagreement between T={T1:g} and T={T2:g}: {worst:.2f} stderr",
            ))
        return results

    def check_decay(self, fit: TailFit) -> CheckResult:
        """Covariance at the largest lag below that at the smallest lag."""
        n = self.thresholds.n_stderr
        cov, err = fit.extras["cov"], fit.extras["stderr"]
        z = (cov[0] - cov[-1]) / max(math.hypot(err[0], err[-1]), 1e-300)
        return CheckResult("correlation_decays", z > n, z, n,
                           f"cov(lag {fit.extras['lags'][0]:g}) - cov(lag {fit.extras['lags'][-1]:g}) = {z:.2f} stderr")

    # -- spectral -----------------------------------------------------------

    def check_spectral_tail(self, fit: TailFit, expected: float, name: str = "spectral_tail") -> CheckResult:
        tol = self.thresholds.tail_tol
        gap = abs(fit.exponent - expected)
        return CheckResult(name, gap <= tol, gap, tol,
                           f"fitted exponent {fit.exponent:.4f}, expected {expected:g}")

    def check_exponent_above(self, fit: TailFit, floor: float, name: str) -> CheckResult:
        """A vanishing leading coefficient leaves a strictly faster tail."""
        return CheckResult(name, fit.exponent > floor, fit.exponent, floor,
                           f"fitted exponent {fit.exponent:.4f} must exceed {floor:g}")

    def check_convolution(self, fit: TailFit) -> list[CheckResult]:
        """
        The fitted exponent is compared with gamma, the decay of the slowest factor;
        the naive power count 2d + gamma - 4 and both dominance comparisons go into details.
        """
        tol = self.thresholds.conv_tol
        gamma = fit.extras["gamma"]
        suffix = f"d{fit.extras['d']}_gamma{gamma:g}"
        gap = abs(fit.exponent - gamma)
        naive = fit.extras["naive_exponent"]
        naive_gap = abs(fit.exponent - naive)
        details = {k: fit.extras[k] for k in ("naive_exponent", "explicit_exponent",
                                              "naive_dominance", "numeric_dominance")}
        details.update({"fitted_exponent": fit.exponent, "gamma_gap": gap, "naive_gap": naive_gap})
        return [
            CheckResult(f"convolution_tail_{suffix}", gap <= tol, gap, tol,
                        f"fitted exponent {fit.exponent:.4f}: {gap:.3g} from gamma = {gamma:g}, "
                        f"{naive_gap:.3g} from 2d + gamma - 4 = {naive:g}", details),
            CheckResult(f"convolution_dominance_{suffix}", fit.extras["naive_dominance"],
                        fit.extras["naive_exponent"], fit.extras["explicit_exponent"],
                        f"naive {fit.extras['naive_exponent']:g} vs d - 1 = {fit.extras['explicit_exponent']}; "
                        f"fitted tail dominates: {fit.extras['numeric_dominance']}", details),
        ]

    def check_bound_report(self, name: str, report: dict) -> CheckResult:
        return CheckResult(name, report["passed"], report.get("max_ratio", report.get("max", 0.0)),
                           report.get("bound", 1.0), f"{name}: {report}")

    @staticmethod
    def summarize(results: Sequence[CheckResult]) -> dict:
        """
        Collect results the way the run summary stores them.

        Returns:
            Dictionary with overall pass flag and per-check results
        """
        return {
            "overall_passed": all(r.passed for r in results),
            "passed": sum(1 for r in results if r.passed),
            "total": len(results),
            "checks": {r.name: r.as_dict() for r in results},
        }
