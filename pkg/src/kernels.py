"""Analytic and tabulated kernels: charge form factor, pair potential W,
field covariance, infrared criterion integrals and the singularity profile s_hat.

Fourier convention: rho_hat(k) = int rho(x) exp(-i k.x) dx, so rho_hat(0) = e.
All radial k-integrals are reduced with the angular average of exp(i k.q)
over the (d-1)-sphere, Gamma(d/2) (2/x)^(d/2-1) J_(d/2-1)(x) with x = |k||q|.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, special
from scipy.interpolate import RectBivariateSpline

from . import console
from .errors import (
    ConfigError,
    DomainError,
    QuadratureError,
    TableResolutionError,
    UnsupportedDimensionError,
)
from .models import IRTestFunction, ModelParams

# Momentum cutoff in units of 1/sigma; exp(-sigma^2 k^2) is below 1e-62 there
K_MAX_SIGMA = 12.0
TABLE_TOL = 1e-6
TABLE_ABS_TOL = 1e-12


def form_factor_shape(k_mag, sigma: float):
    """Unit-charge Gaussian profile exp(-sigma^2 k^2 / 2)."""
    k = np.abs(np.asarray(k_mag, dtype=float))
    return np.exp(-0.5 * (sigma * k) ** 2)


def rho_hat(k_mag, params: ModelParams):
    """Charge form factor e * exp(-sigma^2 k^2 / 2); radial, rho_hat(0) = e."""
    out = params.e * form_factor_shape(k_mag, params.sigma)
    return float(out) if np.ndim(out) == 0 else out


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * np.pi ** (d / 2.0) / special.gamma(d / 2.0)


def angular_average(d: int, x):
    """Average of cos(k.q) over directions of k, as a function of x = |k||q|."""
    x = np.abs(np.asarray(x, dtype=float))
    if d == 3:
        return np.sinc(x / np.pi)
    nu = d / 2.0 - 1.0
    small = x < 1e-4
    xs = np.where(small, 1.0, x)
    full = special.gamma(d / 2.0) * (2.0 / xs) ** nu * special.jv(nu, xs)
    series = 1.0 - x * x / (2.0 * d)
    return np.where(small, series, full)


def _bessel_breakpoints(d: int, r: float, k_max: float) -> np.ndarray:
    """Approximate zeros of the angular factor in k (McMahon), below k_max."""
    if r <= 0:
        return np.empty(0)
    nu = d / 2.0 - 1.0
    n_max = int(k_max * r / np.pi) + 2
    zeros = (np.arange(1, n_max + 1) + 0.5 * nu - 0.25) * np.pi / r
    return zeros[(zeros > 0) & (zeros < k_max)]


def _geometric_breakpoints(k_max: float, levels: int = 40) -> np.ndarray:
    return k_max * 0.5 ** np.arange(1, levels + 1)


@lru_cache(maxsize=8)
def _gauss_legendre(n: int):
    return leggauss(n)


def adaptive_gauss_legendre(
    f: Callable[[np.ndarray], np.ndarray],
    breakpoints: Iterable[float],
    rel_tol: float = 1e-11,
    abs_tol: float = 1e-300,
    order: int = 16,
    max_depth: int = 30,
) -> tuple[float, float]:
    """
    Integrate a vectorised f over consecutive panels given by breakpoints.

    Each panel is accepted when the `order`- and 2*`order`-point Gauss-Legendre
    rules agree; otherwise it is bisected.

    Returns:
        (value, error estimate)
    """
    pts = np.unique(np.asarray(list(breakpoints), dtype=float))
    x1, w1 = _gauss_legendre(order)
    x2, w2 = _gauss_legendre(2 * order)

    def rules(a: float, b: float) -> tuple[float, float]:
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        return half * np.dot(w1, f(mid + half * x1)), half * np.dot(w2, f(mid + half * x2))

    panels = []
    for a, b in zip(pts[:-1], pts[1:]):
        lo, hi = rules(a, b)
        panels.append((a, b, lo, hi, 0))
    scale = abs(sum(p[3] for p in panels))
    length = pts[-1] - pts[0]

    total, err_total = 0.0, 0.0
    stack = panels[::-1]
    while stack:
        a, b, lo, hi, depth = stack.pop()
        err = abs(hi - lo)
        budget = max(abs_tol, rel_tol * scale) * (b - a) / length
        if err <= budget or depth >= max_depth:
            total += hi
            err_total += err
            continue
        m = 0.5 * (a + b)
        for (pa, pb) in ((m, b), (a, m)):
            plo, phi = rules(pa, pb)
            stack.append((pa, pb, plo, phi, depth + 1))

    return total, err_total


def _momentum_integrand(d: int, sigma: float, r: float, t: float):
    def f(k):
        return k ** (d - 2) * np.exp(-(sigma * k) ** 2 - k * t) * angular_average(d, k * r)
    return f


def _gaussian_tail(d: int, sigma: float, k_max: float) -> float:
    """Bound on int_{k_max}^inf k^(d-2) exp(-sigma^2 k^2) dk."""
    a = (d - 1) / 2.0
    return special.gammaincc(a, (sigma * k_max) ** 2) * special.gamma(a) / (2.0 * sigma ** (d - 1))


def pair_kernel_momentum(r: float, t: float, params: ModelParams, rel_tol: float = 1e-11) -> float:
    """
    Pair potential W(q, t) = -(1/8) int |rho_hat|^2/|k| cos(k.q) exp(-|k||t|) dk, |q| = r.

    Args:
        r: Spatial separation |q| >= 0
        t: Time separation >= 0
        params: Model parameters

    Returns:
        W(r, t) in energy units

    Raises:
        QuadratureError: If the panel quadrature misses its tolerance
    """
    r, t = abs(float(r)), abs(float(t))
    if params.e == 0.0:
        return 0.0
    d, sigma = params.d, params.sigma
    k_max = K_MAX_SIGMA / sigma
    bp = np.concatenate(([0.0, k_max], _geometric_breakpoints(k_max), _bessel_breakpoints(d, r, k_max)))
    if t > 0:
        bp = np.concatenate((bp, [min(k_max, 1.0 / t)]))
    value, err = adaptive_gauss_legendre(_momentum_integrand(d, sigma, r, t), bp, rel_tol=rel_tol)
    tail = _gaussian_tail(d, sigma, k_max)
    residual = err + tail
    if residual > max(10 * rel_tol * abs(value), 1e-300):
        raise QuadratureError(f"W({r}, {t}) did not converge", residual)
    coef = params.e * params.e
    return -(sphere_area(d) / 8.0) * coef * value


def pair_kernel_origin(params: ModelParams) -> float:
    """Closed form of W(0, 0); -pi e^2 / (4 sigma^2) in d = 3."""
    d, sigma = params.d, params.sigma
    a = (d - 1) / 2.0
    return -(sphere_area(d) / 8.0) * params.e ** 2 * special.gamma(a) / (2.0 * sigma ** (d - 1))


def _difference_density(s, sigma: float):
    """Radial density of x - y for two independent unit Gaussian charges (d = 3)."""
    return (4.0 * np.pi * sigma ** 2) ** -1.5 * np.exp(-s * s / (4.0 * sigma ** 2))


def pair_kernel_position(r: float, t: float, params: ModelParams) -> float:
    """
    Pair potential from its position-space form,
    W(q, t) = -(pi/2) int int rho(x) rho(y) / ((q + x - y)^2 + t^2) dx dy.

    The six-dimensional integral is reduced analytically to one radial integral
    over |x - y| (the difference of two Gaussians is Gaussian).

    Raises:
        UnsupportedDimensionError: Unless d = 3
    """
    if params.d != 3:
        raise UnsupportedDimensionError(params.d, [3])
    if params.e == 0.0:
        return 0.0
    r, t = abs(float(r)), abs(float(t))
    sigma = params.sigma
    s_max = 24.0 * sigma

    if r == 0.0:
        def integrand(s):
            den = s * s + t * t
            ratio = 1.0 if den == 0.0 else s * s / den
            return 4.0 * np.pi * _difference_density(s, sigma) * ratio
        points = None
    else:
        def integrand(s):
            gap = (r - s) ** 2 + t * t
            if gap == 0.0 or s == 0.0:
                return 0.0
            # angular average of 1/|q+u|^2+t^2 is log1p(z)/(4 r s)
            z = 4.0 * r * s / gap
            return np.pi * s * _difference_density(s, sigma) * np.log1p(z) / r
        points = [r] if r < s_max else None

    value, err = integrate.quad(integrand, 0.0, s_max, points=points, epsabs=0.0, epsrel=1e-12, limit=400)
    if err > 1e-8 * abs(value) + 1e-300:
        raise QuadratureError(f"position-space W({r}, {t}) did not converge", err)
    return -(np.pi / 2.0) * params.e * params.e * value


def field_covariance(
    h1_hat: Callable[[float], float],
    h2_hat: Callable[[float], float],
    dt: float,
    params: ModelParams,
) -> float:
    """
    Stationary covariance (1/4) int h1_hat(k) h2_hat(k) / |k| exp(-|k||dt|) dk
    for radial real form factors.
    """
    d = params.d
    lag = abs(float(dt))

    def integrand(k):
        return h1_hat(k) * h2_hat(k) * k ** (d - 2) * np.exp(-k * lag)

    value, err = integrate.quad(integrand, 0.0, np.inf, epsabs=0.0, epsrel=1e-11, limit=400)
    if not np.isfinite(value):
        raise QuadratureError("field covariance integral diverged", err)
    return 0.25 * sphere_area(d) * value


def ir_integral(eps: float, params: ModelParams) -> float:
    """I(eps) = int_{eps <= |k| <= 1} |rho_hat|^2 / |k|^3 dk."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"IR cutoff must lie in (0, 1], got {eps}")
    if eps == 1.0 or params.e == 0.0:
        return 0.0
    d, sigma = params.d, params.sigma

    # u = ln k
    def integrand(u):
        return np.exp(-(sigma ** 2) * np.exp(2.0 * u) + (d - 3) * u)

    value, _ = integrate.quad(integrand, np.log(eps), 0.0, epsabs=0.0, epsrel=1e-12, limit=400)
    return sphere_area(d) * params.e ** 2 * value


def ir_criterion_scan(eps_list: Iterable[float], params: ModelParams) -> list[tuple[float, float]]:
    """I(eps) for each cutoff; grows like 4 pi e^2 ln(1/eps) in d = 3, converges for d >= 4."""
    return [(float(eps), ir_integral(float(eps), params)) for eps in eps_list]


def ir_bound_integral(params: ModelParams) -> float:
    """int |rho_hat|^2 / |k|^3 dk over R^d (infinite for d = 3)."""
    d, sigma = params.d, params.sigma
    if params.e == 0.0:
        return 0.0
    if d <= 3:
        return np.inf
    a = (d - 3) / 2.0
    return sphere_area(d) * params.e ** 2 * special.gamma(a) / (2.0 * sigma ** (d - 3))


def coulomb_bound_integral(params: ModelParams) -> float:
    """int |rho_hat|^2 / |k|^2 dk; bounds the growth of the self-action, -2 SS W < T * this."""
    d, sigma = params.d, params.sigma
    a = (d - 2) / 2.0
    return sphere_area(d) * params.e ** 2 * special.gamma(a) / (2.0 * sigma ** (d - 2))


def position_space_log_bound(T: float, lam: float, params: ModelParams) -> float:
    """
    Lower bound on the cross-interval interaction integral for paths with
    sup |q_t| <= T^lam:
        int int rho(x) rho(y) log((8 T^(2 lam) + 2 (x-y)^2 + T^2) / (8 T^(2 lam) + 2 (x-y)^2)) dx dy.
    The cross action then satisfies cross <= -(pi/2) * this value (d = 3).
    """
    if params.d != 3:
        raise UnsupportedDimensionError(params.d, [3])
    a = 8.0 * T ** (2.0 * lam)

    def integrand(s):
        base = a + 2.0 * s * s
        return 4.0 * np.pi * s * s * _difference_density(s, params.sigma) * np.log1p(T * T / base)

    value, _ = integrate.quad(integrand, 0.0, 24.0 * params.sigma, epsabs=0.0, epsrel=1e-10, limit=200)
    return params.e ** 2 * value


# ---------------------------------------------------------------------------
# Singularity profile s_hat
# ---------------------------------------------------------------------------

def _log_log_weight(log_t, zeta: float):
    """1 / (ln t (ln ln t)^zeta) given ln t."""
    return 1.0 / (log_t * np.log(log_t) ** zeta)


def profile_transform(k_mag: float, test: IRTestFunction) -> float:
    """Phi(k) = int_{T*}^inf exp(-k t) / (ln t (ln ln t)^zeta) dt, k > 0."""
    k = float(k_mag)
    if k <= 0.0:
        raise ValueError("profile transform needs k > 0")
    return np.exp(-k * test.T_star) * _scaled_profile(-np.log(k), test) / k


def _scaled_profile(lam: float, test: IRTestFunction) -> float:
    """
    exp(k T*) k Phi(k) with k = exp(-lam): int_0^inf exp(-x) w(T* + x/k) dx.

    ln(T* + x e^lam) is formed with logaddexp so arbitrarily small k stay finite.
    """
    log_tstar = np.log(test.T_star)

    def integrand(x):
        if x == 0.0:
            log_t = log_tstar
        else:
            log_t = np.logaddexp(lam + np.log(x), log_tstar)
        return np.exp(-x) * _log_log_weight(log_t, test.zeta)

    # exp(-60) tail is below double precision relative to the bulk
    value, _ = integrate.quad(integrand, 0.0, 60.0, epsabs=0.0, epsrel=1e-12, limit=200)
    return value


def _check_support(test: IRTestFunction, params: ModelParams) -> None:
    if form_factor_shape(test.k_star, params.sigma) < 1e-200:
        raise ConfigError([("k_star", f"charge form factor vanishes numerically below k_star={test.k_star}")])


def s_hat(k_mag: float, test: IRTestFunction, params: ModelParams) -> float:
    """
    Singularity profile s_hat(k) = Phi(k) / rho_1(k) for |k| < k*, 0 otherwise.

    rho_1 is the unit-charge form factor, so s_hat is defined at e = 0 and
    equals the charge-normalised profile times e for e > 0.
    """
    _check_support(test, params)
    k = abs(float(k_mag))
    if k >= test.k_star:
        return 0.0
    if k == 0.0:
        return np.inf
    return profile_transform(k, test) / float(form_factor_shape(k, params.sigma))


def s_norm_squared(test: IRTestFunction, params: ModelParams) -> float:
    """||s||^2 = int |s_hat(k)|^2 / |k| dk, integrated in lam = -ln k."""
    _check_support(test, params)
    d, sigma = params.d, params.sigma
    lam_star = -np.log(test.k_star)

    def integrand(lam):
        k = np.exp(-lam)
        k_phi = np.exp(-k * test.T_star) * _scaled_profile(lam, test)
        return (k_phi / form_factor_shape(k, sigma)) ** 2 * k ** (d - 3)

    # split keeps the slowly decaying d = 3 tail in its own infinite-range call
    split = lam_star + 50.0
    head, _ = integrate.quad(integrand, lam_star, split, epsabs=0.0, epsrel=1e-10, limit=400)
    tail, _ = integrate.quad(integrand, split, np.inf, epsabs=0.0, epsrel=1e-10, limit=400)
    return sphere_area(d) * (head + tail)


# ---------------------------------------------------------------------------
# Tabulated pair potential
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MappedAxis:
    """Grid uniform in x = asinh(u / scale): linear near 0, logarithmic far out."""
    scale: float
    u_max: float
    n: int

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, np.arcsinh(self.u_max / self.scale), self.n)

    @property
    def nodes(self) -> np.ndarray:
        return self.scale * np.sinh(self.x)

    def to_x(self, u):
        return np.arcsinh(np.asarray(u, dtype=float) / self.scale)


def _decay_envelope(r, t, d: int, sigma: float):
    """Approximate |W| decay (1 + (r^2 + t^2)/sigma^2)^(-(d-1)/2), divided out before splining."""
    return (1.0 + (np.asarray(r) ** 2 + np.asarray(t) ** 2) / sigma ** 2) ** (-(d - 1) / 2.0)


@dataclass(frozen=True)
class KernelTable:
    """
    W(r, t) on a mapped (r, t) grid with bicubic interpolation.

    Immutable after construction; safe to share between workers.
    """
    params: ModelParams
    r_axis: MappedAxis
    t_axis: MappedAxis
    values: np.ndarray
    max_probe_error: float = 0.0
    _spline: Optional[RectBivariateSpline] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        flat = self.values / _decay_envelope(
            self.r_grid[:, None], self.t_grid[None, :], self.params.d, self.params.sigma
        )
        spline = RectBivariateSpline(self.r_axis.x, self.t_axis.x, flat, kx=3, ky=3, s=0)
        object.__setattr__(self, "_spline", spline)

    @property
    def r_grid(self) -> np.ndarray:
        return self.r_axis.nodes

    @property
    def t_grid(self) -> np.ndarray:
        return self.t_axis.nodes

    @property
    def r_max(self) -> float:
        return self.r_axis.u_max

    @property
    def t_max(self) -> float:
        return self.t_axis.u_max

    def __call__(self, r, t) -> np.ndarray:
        """Interpolated W(r, t); points outside the table fall back to direct quadrature."""
        r, t = np.broadcast_arrays(np.abs(np.asarray(r, dtype=float)), np.abs(np.asarray(t, dtype=float)))
        shape = r.shape
        r, t = r.ravel(), t.ravel()
        if self.params.e == 0.0:
            return np.zeros(shape)
        out = np.empty(r.size)
        inside = (r <= self.r_max) & (t <= self.t_max)
        if inside.any():
            ri, ti = r[inside], t[inside]
            g = self._spline.ev(self.r_axis.to_x(ri), self.t_axis.to_x(ti))
            out[inside] = g * _decay_envelope(ri, ti, self.params.d, self.params.sigma)
        if not inside.all():
            console.warn(
                f"kernel table (r_max={self.r_max:.3g}, t_max={self.t_max:.3g}) exceeded; "
                "falling back to direct quadrature"
            )
            for i in np.flatnonzero(~inside):
                out[i] = pair_kernel_momentum(r[i], t[i], self.params)
        return out.reshape(shape)

    def to_arrays(self) -> tuple[dict, dict]:
        """Header scalars and arrays for binary persistence."""
        header = {
            "params": self.params.model_dump(mode="json"),
            "r_axis": [self.r_axis.scale, self.r_axis.u_max, self.r_axis.n],
            "t_axis": [self.t_axis.scale, self.t_axis.u_max, self.t_axis.n],
            "max_probe_error": self.max_probe_error,
        }
        return header, {"r_grid": self.r_grid, "t_grid": self.t_grid, "values": self.values}

    @classmethod
    def from_arrays(cls, header: dict, arrays: dict) -> "KernelTable":
        r_axis = MappedAxis(float(header["r_axis"][0]), float(header["r_axis"][1]), int(header["r_axis"][2]))
        t_axis = MappedAxis(float(header["t_axis"][0]), float(header["t_axis"][1]), int(header["t_axis"][2]))
        return cls(
            params=ModelParams(**header["params"]),
            r_axis=r_axis,
            t_axis=t_axis,
            values=np.asarray(arrays["values"]).reshape(r_axis.n, t_axis.n),
            max_probe_error=float(header.get("max_probe_error", 0.0)),
        )


def _dense_momentum_rule(d: int, sigma: float, r_max: float, t_max: float, order: int = 16):
    """Fixed Gauss-Legendre nodes resolving oscillation up to r_max and decay up to t_max."""
    k_max = K_MAX_SIGMA / sigma
    width = min(np.pi / (2.0 * max(r_max, 1e-12)), k_max / 8.0)
    uniform = np.arange(0.0, k_max + width, width)
    uniform[-1] = k_max
    geometric = _geometric_breakpoints(min(k_max, width), levels=int(np.log2(max(t_max, 1.0) * k_max)) + 12)
    pts = np.unique(np.concatenate((uniform, geometric, [0.0])))
    x, w = _gauss_legendre(order)
    mids, halves = 0.5 * (pts[1:] + pts[:-1]), 0.5 * (pts[1:] - pts[:-1])
    nodes = (mids[:, None] + halves[:, None] * x[None, :]).ravel()
    weights = (halves[:, None] * w[None, :]).ravel()
    return nodes, weights


def build_kernel_table(
    params: ModelParams,
    r_max: float,
    t_max: float,
    resolution: int = 256,
    tol: float = TABLE_TOL,
    n_probe: int = 12,
) -> KernelTable:
    """
    Tabulate W on [0, r_max] x [0, t_max] and certify the interpolation.

    Args:
        params: Model parameters
        r_max: Largest spatial separation covered
        t_max: Largest time separation covered
        resolution: Grid points per axis
        tol: Relative interpolation tolerance at cell midpoints
        n_probe: Midpoints probed per axis

    Returns:
        KernelTable

    Raises:
        TableResolutionError: If a probed midpoint misses the tolerance
    """
    if r_max <= 0 or t_max <= 0:
        raise ValueError("r_max and t_max must be positive")
    d, sigma = params.d, params.sigma
    scale = 0.5 * sigma
    r_axis = MappedAxis(scale, float(r_max), int(resolution))
    t_axis = MappedAxis(scale, float(t_max), int(resolution))

    if params.e == 0.0:
        return KernelTable(params, r_axis, t_axis, np.zeros((r_axis.n, t_axis.n)))

    k, w = _dense_momentum_rule(d, sigma, r_max, t_max)
    radial = w * k ** (d - 2) * np.exp(-(sigma * k) ** 2)
    angular = angular_average(d, r_axis.nodes[:, None] * k[None, :]) * radial[None, :]
    decay = np.exp(-k[:, None] * t_axis.nodes[None, :])
    coef = params.e * params.e
    values = -(sphere_area(d) / 8.0) * coef * (angular @ decay)

    table = KernelTable(params, r_axis, t_axis, values)

    # certify at cell midpoints in mapped coordinates
    ri = np.unique(np.linspace(0, r_axis.n - 2, n_probe).astype(int))
    ti = np.unique(np.linspace(0, t_axis.n - 2, n_probe).astype(int))
    xr = 0.5 * (r_axis.x[ri] + r_axis.x[ri + 1])
    xt = 0.5 * (t_axis.x[ti] + t_axis.x[ti + 1])
    worst = 0.0
    for rr in scale * np.sinh(xr):
        for tt in scale * np.sinh(xt):
            exact = pair_kernel_momentum(rr, tt, params)
            approx = float(table(rr, tt))
            err = abs(approx - exact)
            if err > TABLE_ABS_TOL:
                worst = max(worst, err / abs(exact))
    if worst > tol:
        raise TableResolutionError(worst, tol)
    return KernelTable(params, r_axis, t_axis, values, max_probe_error=worst)
