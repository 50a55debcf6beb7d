"""
Gaussian field statistics conditional on a particle path.

Given a path Q on [-T, T], the field is Gaussian with mean

    g^t_T(k; Q) = -(rho_hat(k) / 4|k|) int_{-T}^{T} exp(-i k.q_tau) exp(-|k||tau - t|) dtau

and the free covariance. Time integrals treat the phase and the decay as
linear between beads and integrate the exponential exactly on each segment,
which keeps |g| <= |rho_hat| / (2 |k|^2) exact on the discrete path.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, linalg
from scipy.interpolate import RectBivariateSpline

from . import console
from .errors import (
    FieldAssemblyError,
    SingularArgumentError,
    TableResolutionError,
    UnsupportedDimensionError,
)
from .kernels import MappedAxis, field_covariance, rho_hat
from .models import IRTestFunction, ModelParams, PathConfig

EXPONENT_CLAMP = 700.0

# ln(dP^Q_T / d gamma) = L - TILT_QUADRATIC_COEFF * X with Var_gamma(L) = TILT_VARIANCE_COEFF * X,
# X = int |g^0_T|^2 |k| dk.
TILT_QUADRATIC_COEFF = 2.0
TILT_VARIANCE_COEFF = 4.0


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------

class GaussianTestFunction:
    """h_hat(k) = amplitude * exp(-width^2 k^2 / 2)."""

    def __init__(self, width: float = 1.0, amplitude: float = 1.0):
        self.width = float(width)
        self.amplitude = float(amplitude)
        self.name = f"gauss_w{self.width:g}"

    def __call__(self, k):
        return self.amplitude * np.exp(-0.5 * (self.width * np.asarray(k, dtype=float)) ** 2)


class VanishingTestFunction:
    """h_hat(k) = k^2 exp(-k^2), with h_hat(0) = 0."""
    name = "k2_gauss"

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        return k * k * np.exp(-k * k)


# ---------------------------------------------------------------------------
# Exact exponential segment rules
# ---------------------------------------------------------------------------

def _phi(z):
    """(e^z - 1) / z, series near 0."""
    z = np.asarray(z)
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    series = 1.0 + z / 2.0 + z * z / 6.0 + z ** 3 / 24.0
    return np.where(small, series, np.expm1(safe) / safe)


def _psi1(z):
    """int_0^1 s e^(z s) ds, series near 0."""
    z = np.asarray(z)
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    series = 0.5 + z / 3.0 + z * z / 8.0 + z ** 3 / 30.0
    return np.where(small, series, (np.exp(safe) * (safe - 1.0) + 1.0) / (safe * safe))


def exp_segment_integral(a: np.ndarray, dt: float) -> np.ndarray:
    """int exp(a(tau)) dtau with a linear between beads; a has beads on the last axis."""
    delta = np.diff(a, axis=-1)
    return dt * np.sum(np.exp(a[..., :-1]) * _phi(delta), axis=-1)


def exp_linear_weights(a: np.ndarray, dt: float) -> np.ndarray:
    """
    Bead weights W with sum_i W_i f_i = int f(tau) exp(a(tau)) dtau, exact when
    both f and a are linear between beads.
    """
    delta = np.diff(a, axis=-1)
    left = np.exp(a[..., :-1])
    psi1 = _psi1(delta)
    psi0 = _phi(delta) - psi1
    w = np.zeros(a.shape)
    w[..., :-1] += dt * left * psi0
    w[..., 1:] += dt * left * psi1
    return w


# ---------------------------------------------------------------------------
# Conditional mean
# ---------------------------------------------------------------------------

def g_hat(k, t: float, path: np.ndarray, cfg: PathConfig, params: ModelParams) -> np.ndarray:
    """
    Conditional mean g^t_T(k; Q) at wavevectors k (shape (d,) or (m, d)) and bead time t.

    Raises:
        SingularArgumentError: If any k = 0
    """
    k = np.atleast_2d(np.asarray(k, dtype=float))
    k_mag = np.linalg.norm(k, axis=1)
    if np.any(k_mag == 0.0):
        raise SingularArgumentError("conditional mean is singular at k = 0")
    cfg.index_of(t)
    path = np.asarray(path, dtype=float)
    phase = -1j * (k @ path.T)
    decay = -k_mag[:, None] * np.abs(cfg.times[None, :] - t)
    integral = exp_segment_integral(phase + decay, cfg.dt)
    return -(rho_hat(k_mag, params) / (4.0 * k_mag)) * integral


def g_hat0(k, path: np.ndarray, cfg: PathConfig, params: ModelParams) -> np.ndarray:
    """g^0_T(k; Q)."""
    return g_hat(k, 0.0, path, cfg, params)


def m_hat(k, path: np.ndarray, cfg: PathConfig, params: ModelParams) -> np.ndarray:
    """4|k| g^0_T(k; Q) = -rho_hat(k) int exp(-i k.q_tau) exp(-|k||tau|) dtau."""
    k = np.atleast_2d(np.asarray(k, dtype=float))
    return 4.0 * np.linalg.norm(k, axis=1) * g_hat0(k, path, cfg, params)


def g_hat0_zero_path(k_mag, T: float, params: ModelParams):
    """Closed form of g^0_T for the path q = 0."""
    k = np.asarray(k_mag, dtype=float)
    return -(rho_hat(k, params) / (4.0 * k)) * (2.0 / k) * (-np.expm1(-k * T))


def lipschitz_constant(path: np.ndarray, cfg: PathConfig, params: ModelParams, ks: np.ndarray,
                       max_gap: float = 1.0) -> float:
    """
    Empirical C in |g^t - g^s| <= C |rho_hat(k)| / |k| |t - s| over bead pairs with |t - s| < max_gap.
    """
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    k_mag = np.linalg.norm(ks, axis=1)
    values = np.stack([g_hat(ks, float(t), path, cfg, params) for t in cfg.times], axis=1)
    scale = np.abs(rho_hat(k_mag, params)) / k_mag
    worst = 0.0
    max_lag = max(1, int(np.floor((max_gap - 1e-12) / cfg.dt)))
    for lag in range(1, min(max_lag, cfg.n_beads - 1) + 1):
        diff = np.abs(values[:, lag:] - values[:, :-lag])
        ratio = diff / (scale[:, None] * lag * cfg.dt)
        worst = max(worst, float(ratio.max()))
    return worst


def field_mean(h_hat: Callable, t: float, path: Optional[np.ndarray], cfg: PathConfig, params: ModelParams,
               n_radial: int = 96) -> float:
    """
    int h_hat(k) g^t_T(k; Q) dk for a radial real h_hat (d = 3), angular integral done exactly:
        -pi int_0^inf k h_hat rho_hat int sinc(k |q_tau|) exp(-k |tau - t|) dtau dk.
    """
    if path is None or params.e == 0.0:
        return 0.0
    if params.d != 3:
        raise UnsupportedDimensionError(params.d, [3])
    cfg.index_of(t)
    k_max = 12.0 / min(params.sigma, 1.0)
    x, w = leggauss(n_radial)
    k = 0.5 * k_max * (x + 1.0)
    wk = 0.5 * k_max * w
    radii = np.linalg.norm(np.asarray(path, dtype=float), axis=-1)
    decay = -k[:, None] * np.abs(cfg.times[None, :] - t)
    weights = exp_linear_weights(decay, cfg.dt)
    sinc = np.sinc(k[:, None] * radii[None, :] / np.pi)
    inner = np.sum(weights * sinc, axis=1)
    return float(-np.pi * np.sum(wk * k * h_hat(k) * rho_hat(k, params) * inner))


# ---------------------------------------------------------------------------
# Singularity functional F
# ---------------------------------------------------------------------------

def _profile_integrand_kernel(r, a, k_star: float):
    """int_0^{k*} sin(k r)/r exp(-k a) dk (r -> 0 limit handled)."""
    r = np.asarray(r, dtype=float)
    small = r < 1e-8
    rs = np.where(small, 1.0, r)
    osc = np.where(small, 1.0 + a * k_star, np.cos(k_star * rs) + a * np.sin(k_star * rs) / rs)
    return (1.0 - np.exp(-k_star * a) * osc) / (r * r + a * a)


def f_profile(r: float, s: float, test: IRTestFunction) -> float:
    """H(r, s) = int_{T*}^inf I(r, s + t) / (ln t (ln ln t)^zeta) dt with t = T* e^x."""
    T_star, zeta, k_star = test.T_star, test.zeta, test.k_star
    log_tstar = np.log(T_star)

    def integrand(x):
        t = T_star * np.exp(x)
        log_t = log_tstar + x
        return float(_profile_integrand_kernel(r, s + t, k_star)) * t / (log_t * np.log(log_t) ** zeta)

    value, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=0.0, epsrel=1e-10, limit=400)
    return value


@dataclass(frozen=True)
class FProfileTable:
    """H(r, s) on mapped (r, s) axes with bicubic interpolation."""
    test: IRTestFunction
    r_axis: MappedAxis
    s_axis: MappedAxis
    values: np.ndarray
    _spline: Optional[RectBivariateSpline] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        spline = RectBivariateSpline(self.r_axis.x, self.s_axis.x, self.values, kx=3, ky=3, s=0)
        object.__setattr__(self, "_spline", spline)

    def __call__(self, r, s) -> np.ndarray:
        r, s = np.broadcast_arrays(np.abs(np.asarray(r, dtype=float)), np.abs(np.asarray(s, dtype=float)))
        shape = r.shape
        r, s = r.ravel(), s.ravel()
        out = np.empty(r.size)
        inside = (r <= self.r_axis.u_max) & (s <= self.s_axis.u_max)
        out[inside] = self._spline.ev(self.r_axis.to_x(r[inside]), self.s_axis.to_x(s[inside]))
        if not inside.all():
            console.warn("F profile table exceeded; falling back to direct quadrature")
            for i in np.flatnonzero(~inside):
                out[i] = f_profile(r[i], s[i], self.test)
        return out.reshape(shape)


def build_f_profile_table(test: IRTestFunction, r_max: float, s_max: float, resolution: int = 64,
                          tol: float = 1e-4) -> FProfileTable:
    """
    Tabulate H and check it at cell midpoints.

    Raises:
        TableResolutionError: If a midpoint misses the relative tolerance
    """
    r_axis = MappedAxis(1.0 / test.k_star, float(r_max), int(resolution))
    s_axis = MappedAxis(test.T_star, float(s_max), int(resolution))
    values = np.array([[f_profile(r, s, test) for s in s_axis.nodes] for r in r_axis.nodes])
    table = FProfileTable(test, r_axis, s_axis, values)

    probes = np.unique(np.linspace(0, resolution - 2, 6).astype(int))
    worst = 0.0
    for i in probes:
        for j in probes:
            r = r_axis.scale * np.sinh(0.5 * (r_axis.x[i] + r_axis.x[i + 1]))
            s = s_axis.scale * np.sinh(0.5 * (s_axis.x[j] + s_axis.x[j + 1]))
            exact = f_profile(r, s, test)
            err = abs(float(table(r, s)) - exact)
            if err > 1e-14:
                worst = max(worst, err / abs(exact))
    if worst > tol:
        raise TableResolutionError(worst, tol)
    return table


def log_conditional_F(path: np.ndarray, cfg: PathConfig, params: ModelParams, profile: Callable,
                      s_norm2: float) -> float:
    """
    ln E[F | Q] = int s_hat g^0_T dk + ||s||^2 / 8, with the k-integral in its real radial form
        -pi e sum_tau w_tau H(|q_tau|, |tau|).
    """
    if params.d != 3:
        raise UnsupportedDimensionError(params.d, [3])
    if params.e == 0.0:
        linear = 0.0
    else:
        radii = np.linalg.norm(np.asarray(path, dtype=float), axis=-1)
        h = profile(radii, np.abs(cfg.times))
        linear = -np.pi * params.e * float(cfg.trapezoid_weights() @ h)
    return linear + s_norm2 / 8.0


def conditional_F_expectation(path: np.ndarray, cfg: PathConfig, params: ModelParams, profile: Callable,
                              s_norm2: float) -> float:
    """E[F | Q]; the exponent is clamped (with a warning) before overflow."""
    exponent = log_conditional_F(path, cfg, params, profile, s_norm2)
    if exponent > EXPONENT_CLAMP:
        console.warn(f"F exponent {exponent:.1f} clamped to {EXPONENT_CLAMP}")
        exponent = EXPONENT_CLAMP
    return float(np.exp(exponent))


def capped_F(value, cap: float):
    """min(value, cap)."""
    return np.minimum(value, cap)


def default_caps(s_norm2: float, factors: Sequence[float] = (5.0, 10.0, 20.0)) -> list[float]:
    """Caps as multiples of exp(||s||^2 / 8), the value of F at zero coupling."""
    base = np.exp(s_norm2 / 8.0)
    return [float(f * base) for f in factors]


# ---------------------------------------------------------------------------
# Mode grid, free samples, density against the free field
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModeGrid:
    """
    k-space product rule in d = 3: radial Gauss-Legendre on [0, k_max] times
    Gauss-Legendre in cos(theta) times uniform phi. Weights include k^2.
    """
    k_max: float
    n_radial: int
    n_theta: int
    n_phi: int

    @cached_property
    def nodes(self) -> np.ndarray:
        return self._rule()[0]

    @cached_property
    def weights(self) -> np.ndarray:
        return self._rule()[1]

    @property
    def size(self) -> int:
        return self.n_radial * self.n_theta * self.n_phi

    def _rule(self) -> tuple[np.ndarray, np.ndarray]:
        xr, wr = leggauss(self.n_radial)
        k = 0.5 * self.k_max * (xr + 1.0)
        wk = 0.5 * self.k_max * wr * k * k
        ct, wt = leggauss(self.n_theta)
        phi = 2.0 * np.pi * (np.arange(self.n_phi) + 0.5) / self.n_phi
        wphi = np.full(self.n_phi, 2.0 * np.pi / self.n_phi)
        K, C, P = np.meshgrid(k, ct, phi, indexing="ij")
        S = np.sqrt(1.0 - C * C)
        nodes = np.stack([K * S * np.cos(P), K * S * np.sin(P), K * C], axis=-1).reshape(-1, 3)
        weights = (wk[:, None, None] * wt[None, :, None] * wphi[None, None, :]).ravel()
        return nodes, weights

    def refined(self) -> "ModeGrid":
        return ModeGrid(self.k_max, 2 * self.n_radial, 2 * self.n_theta, 2 * self.n_phi)

    def mode_variance(self) -> np.ndarray:
        """Variance c/w of each real mode component, c = 1/(4|k|)."""
        k_mag = np.linalg.norm(self.nodes, axis=1)
        return 1.0 / (4.0 * k_mag * self.weights)


def default_mode_grid(params: ModelParams, n_radial: int = 48, n_theta: int = 12, n_phi: int = 24) -> ModeGrid:
    if params.d != 3:
        raise UnsupportedDimensionError(params.d, [3])
    return ModeGrid(12.0 / params.sigma, n_radial, n_theta, n_phi)


@dataclass(frozen=True)
class ModeSample:
    """Real and imaginary mode amplitudes on a ModeGrid; shape (count, grid.size)."""
    grid: ModeGrid
    real: np.ndarray
    imag: np.ndarray


def sample_free_modes(grid: ModeGrid, count: int, rng: np.random.Generator) -> ModeSample:
    std = np.sqrt(grid.mode_variance())
    return ModeSample(
        grid,
        rng.standard_normal((count, grid.size)) * std,
        rng.standard_normal((count, grid.size)) * std,
    )


def quadratic_tilt_term(path: np.ndarray, cfg: PathConfig, params: ModelParams, grid: ModeGrid) -> float:
    """int |g^0_T(k; Q)|^2 |k| dk on the mode grid."""
    if params.e == 0.0:
        return 0.0
    g = g_hat0(grid.nodes, path, cfg, params)
    k_mag = np.linalg.norm(grid.nodes, axis=1)
    return float(np.sum(grid.weights * np.abs(g) ** 2 * k_mag))


def quadratic_tilt_from_kernel(path: np.ndarray, table: Callable, cfg: PathConfig) -> float:
    """Same quantity as -1/2 sum_ij w_i w_j W(|q_i - q_j|, |t_i| + |t_j|); the table must reach 2T."""
    path = np.asarray(path, dtype=float)
    dist = np.linalg.norm(path[:, None, :] - path[None, :, :], axis=-1)
    abs_t = np.abs(cfg.times)
    w = cfg.trapezoid_weights()
    return float(-0.5 * w @ table(dist, abs_t[:, None] + abs_t[None, :]) @ w)


def density_log_vs_free(sample: ModeSample, path: np.ndarray, cfg: PathConfig, params: ModelParams,
                        grid: ModeGrid) -> np.ndarray:
    """
    ln(dP^Q_T / d gamma) at each mode sample: the Gaussian tilt
        sum (X Re g + Y Im g) w / c - 1/2 sum |g|^2 w / c,  c = 1/(4|k|),
    whose quadratic part is 2 int |g^0_T|^2 |k| dk.

    Raises:
        ValueError: If the sample lives on another mode grid
    """
    if sample.grid != grid or sample.real.shape[-1] != grid.size:
        raise ValueError("mode sample does not match the mode grid")
    if params.e == 0.0:
        return np.zeros(sample.real.shape[0])
    g = g_hat0(grid.nodes, path, cfg, params)
    precision = 1.0 / grid.mode_variance()
    linear = sample.real @ (g.real * precision) + sample.imag @ (g.imag * precision)
    k_mag = np.linalg.norm(grid.nodes, axis=1)
    quadratic = TILT_QUADRATIC_COEFF * float(np.sum(grid.weights * np.abs(g) ** 2 * k_mag))
    return linear - quadratic


def tilt_linear_variance(path: np.ndarray, cfg: PathConfig, params: ModelParams, grid: ModeGrid) -> float:
    """Variance of the linear tilt term under the free field."""
    if params.e == 0.0:
        return 0.0
    g = g_hat0(grid.nodes, path, cfg, params)
    return float(np.sum(np.abs(g) ** 2 / grid.mode_variance()))


def affinity_exponent_coefficient() -> float:
    """
    c with E_gamma[(dP^Q_T / d gamma)^(1/2)] = exp(-c X).

    Half the quadratic coefficient minus an eighth of the linear variance
    coefficient, from the Gaussian moment E[exp(L/2)] = exp(Var(L)/8).
    """
    return TILT_QUADRATIC_COEFF / 2.0 - TILT_VARIANCE_COEFF / 8.0


# ---------------------------------------------------------------------------
# Field values at test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldSampleSpec:
    """Radial test functions h_j paired with times t_j."""
    h_hats: tuple
    times: tuple

    def __post_init__(self):
        if len(self.h_hats) != len(self.times):
            raise ValueError("need one time per test function")

    @property
    def names(self) -> list[str]:
        return [f"{getattr(h, 'name', 'h')}@t={t:g}" for h, t in zip(self.h_hats, self.times)]


def field_covariance_matrix(spec: FieldSampleSpec, params: ModelParams) -> np.ndarray:
    n = len(spec.times)
    cov = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            cov[i, j] = cov[j, i] = field_covariance(spec.h_hats[i], spec.h_hats[j], spec.times[i] - spec.times[j], params)
    return cov


def sample_field_at_times(spec: FieldSampleSpec, path: Optional[np.ndarray], cfg: PathConfig, params: ModelParams,
                          rng: np.random.Generator, count: int) -> np.ndarray:
    """
    Joint Gaussian draws of xi_{t_j}(h_j): free covariance, conditional mean given the path.

    Returns:
        Array of shape (count, len(spec.times))

    Raises:
        FieldAssemblyError: If the covariance is not positive semidefinite
    """
    cov = field_covariance_matrix(spec, params)
    eig = np.linalg.eigvalsh(cov)
    scale = max(float(np.max(np.abs(np.diag(cov)))), 1e-300)
    if eig[0] < -1e-10 * scale:
        raise FieldAssemblyError("field covariance is not positive semidefinite", np.sort(eig))
    try:
        chol = linalg.cholesky(cov + 1e-12 * scale * np.eye(len(cov)), lower=True)
    except linalg.LinAlgError as e:
        raise FieldAssemblyError(f"Cholesky factorisation failed: {e}", np.sort(eig))
    mean = np.array([field_mean(h, t, path, cfg, params) for h, t in zip(spec.h_hats, spec.times)])
    return mean + rng.standard_normal((count, len(cov))) @ chol.T
