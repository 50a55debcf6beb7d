"""Radial ground state of -1/2 Laplacian + V for a confining polynomial potential."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh_tridiagonal, solve_banded

from .errors import DomainError, SolverError
from .kernels import sphere_area
from .models import PotentialSpec

TUNNEL_MARGIN = 40.0
TUNNEL_DEPTH = 18.0
MAX_ITERATIONS = 100
RESIDUAL_TOL = 1e-6


def potential(r, pot: PotentialSpec):
    """V(r) = pot_C * r^(2 pot_alpha)."""
    return pot.pot_C * np.abs(np.asarray(r, dtype=float)) ** (2.0 * pot.pot_alpha)


def energy_guess(pot: PotentialSpec, d: int) -> float:
    """Crude upper estimate of E_p used to place the outer boundary."""
    return d * pot.pot_C ** (1.0 / (pot.pot_alpha + 1.0)) + 1.0


def estimate_r_max(pot: PotentialSpec, d: int) -> float:
    """
    Outer radius with V(r_max) >= E_guess + 40 and a WKB decay
    int sqrt(2 (V - E_guess)) dr of at least TUNNEL_DEPTH past the turning point.
    """
    e_guess = energy_guess(pot, d)
    power = 2.0 * pot.pot_alpha
    r_turn = (e_guess / pot.pot_C) ** (1.0 / power)
    r_max = ((e_guess + TUNNEL_MARGIN) / pot.pot_C) ** (1.0 / power)

    def decay(r_out: float) -> float:
        value, _ = integrate.quad(
            lambda r: np.sqrt(max(2.0 * (potential(r, pot) - e_guess), 0.0)), r_turn, r_out
        )
        return value

    if decay(r_max) < TUNNEL_DEPTH:
        hi = 2.0 * r_max
        while decay(hi) < TUNNEL_DEPTH:
            hi *= 2.0
        r_max = optimize.brentq(lambda r: decay(r) - TUNNEL_DEPTH, r_max, hi, xtol=1e-10)
    return float(r_max)


@dataclass(frozen=True)
class RadialGroundState:
    """
    Ground state psi_0 on a radial grid (r = 0 included) with a spline of ln psi_0.

    Immutable once solved; share freely between chains.
    """
    d: int
    pot: PotentialSpec
    r_grid: np.ndarray
    psi0: np.ndarray
    E_p: float
    r_max: float
    residual: float
    _log_spline: Optional[CubicSpline] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        spline = CubicSpline(self.r_grid, np.log(self.psi0), bc_type=((1, 0.0), "not-a-knot"))
        object.__setattr__(self, "_log_spline", spline)

    @property
    def step(self) -> float:
        return float(self.r_grid[1] - self.r_grid[0])

    @property
    def r_limit(self) -> float:
        """Largest radius at which psi_0 may be evaluated (last interior node)."""
        return float(self.r_grid[-1])

    def _check_domain(self, r: np.ndarray) -> None:
        if np.any(r > self.r_limit):
            raise DomainError(f"radius {float(np.max(r)):.4g} beyond ground-state domain {self.r_limit:.4g}")

    def log_psi(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        self._check_domain(r)
        return self._log_spline(r)

    def psi(self, r):
        return np.exp(self.log_psi(r))

    def dlog_psi(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        self._check_domain(r)
        return self._log_spline(r, 1)

    def potential(self, r):
        return potential(r, self.pot)

    def normalization(self) -> float:
        """S_d int psi^2 r^(d-1) dr on the solver grid."""
        return float(sphere_area(self.d) * integrate.simpson(self.psi0 ** 2 * self.r_grid ** (self.d - 1), x=self.r_grid))

    def radial_cdf(self, r):
        """CDF of |q| under nu0 = psi_0^2 dq."""
        grid, cdf = self._cdf_table()
        return np.interp(np.asarray(r, dtype=float), grid, cdf)

    def radial_quantile(self, u):
        """Inverse of radial_cdf."""
        grid, cdf = self._cdf_table()
        return np.interp(np.asarray(u, dtype=float), cdf, grid)

    def _cdf_table(self) -> tuple[np.ndarray, np.ndarray]:
        density = self.psi0 ** 2 * self.r_grid ** (self.d - 1)
        cdf = integrate.cumulative_trapezoid(density, self.r_grid, initial=0.0)
        return self.r_grid, cdf / cdf[-1]

    def to_arrays(self) -> tuple[dict, dict]:
        header = {
            "d": self.d,
            "pot": self.pot.model_dump(mode="json"),
            "E_p": self.E_p,
            "r_max": self.r_max,
            "residual": self.residual,
        }
        return header, {"r_grid": self.r_grid, "psi0": self.psi0}

    @classmethod
    def from_arrays(cls, header: dict, arrays: dict) -> "RadialGroundState":
        return cls(
            d=int(header["d"]),
            pot=PotentialSpec(**header["pot"]),
            r_grid=np.asarray(arrays["r_grid"], dtype=float),
            psi0=np.asarray(arrays["psi0"], dtype=float),
            E_p=float(header["E_p"]),
            r_max=float(header["r_max"]),
            residual=float(header["residual"]),
        )


def _numerov_bands(v_eff: np.ndarray, h: float, shift: float) -> np.ndarray:
    """
    Banded form of -1/2 A + B diag(V_eff - shift), the Numerov discretisation
    with A = second difference / h^2 and B = (1, 10, 1) / 12.
    """
    w = v_eff - shift
    n = w.size
    ab = np.zeros((3, n))
    ab[1] = 1.0 / h ** 2 + 10.0 * w / 12.0
    ab[0, 1:] = -0.5 / h ** 2 + w[1:] / 12.0
    ab[2, :-1] = -0.5 / h ** 2 + w[:-1] / 12.0
    return ab


def _apply_b(u: np.ndarray) -> np.ndarray:
    out = 10.0 * u
    out[1:] += u[:-1]
    out[:-1] += u[1:]
    return out / 12.0


def _apply_bands(ab: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = ab[1] * u
    out[:-1] += ab[0, 1:] * u[1:]
    out[1:] += ab[2, :-1] * u[:-1]
    return out


def solve_ground_state(
    pot: PotentialSpec,
    d: int,
    grid_points: int = 2000,
    r_max: Optional[float] = None,
) -> RadialGroundState:
    """
    Lowest eigenpair of the radial problem for u = r^((d-1)/2) psi.

    Args:
        pot: Confining potential
        d: Dimension
        grid_points: Interior grid nodes
        r_max: Dirichlet radius (default from estimate_r_max)

    Returns:
        RadialGroundState normalised to int psi^2 dq = 1

    Raises:
        SolverError: On a noded eigenvector, non-convergence or a large residual
    """
    if grid_points < 10:
        raise ValueError("grid_points must be at least 10")
    if r_max is None:
        r_max = estimate_r_max(pot, d)
    h = r_max / (grid_points + 1)
    r = h * np.arange(1, grid_points + 1)
    v_eff = potential(r, pot) + (d - 1) * (d - 3) / (8.0 * r ** 2)

    # second-order start, refined below under the Numerov operator
    diag = 1.0 / h ** 2 + v_eff
    off = np.full(grid_points - 1, -0.5 / h ** 2)
    evals, evecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))
    energy, u = float(evals[0]), evecs[:, 0]
    u = u / np.linalg.norm(u)

    converged = False
    for _ in range(MAX_ITERATIONS):
        ab = _numerov_bands(v_eff, h, energy)
        bu = _apply_b(u)
        try:
            x = solve_banded((1, 1), ab, bu)
        except np.linalg.LinAlgError:
            # shift landed on the eigenvalue
            converged = True
            break
        denom = np.dot(u, _apply_b(x))
        if denom == 0.0:
            raise SolverError("inverse iteration collapsed")
        correction = np.dot(u, bu) / denom
        energy += correction
        u = x / np.linalg.norm(x)
        if abs(correction) < 1e-14 * max(1.0, abs(energy)):
            converged = True
            break
    if not converged:
        raise SolverError("inverse iteration did not converge", abs(correction))

    if u[np.argmax(np.abs(u))] < 0:
        u = -u
    if np.any(u < -1e-10 * u.max()):
        raise SolverError("eigenvector has nodes; not the ground state")

    residual = float(np.linalg.norm(_apply_bands(_numerov_bands(v_eff, h, energy), u)) / np.linalg.norm(u))
    if residual > RESIDUAL_TOL:
        raise SolverError("eigen-residual above tolerance", residual)

    u = np.maximum(u, np.finfo(float).tiny)
    psi = u / r ** ((d - 1) / 2.0)
    # psi(0) from psi = a + b r^2 through the first two nodes
    psi_origin = (r[1] ** 2 * psi[0] - r[0] ** 2 * psi[1]) / (r[1] ** 2 - r[0] ** 2)
    r_grid = np.concatenate(([0.0], r))
    psi0 = np.concatenate(([psi_origin], psi))
    norm = sphere_area(d) * integrate.simpson(psi0 ** 2 * r_grid ** (d - 1), x=r_grid)
    psi0 = psi0 / np.sqrt(norm)

    return RadialGroundState(
        d=d,
        pot=pot,
        r_grid=r_grid,
        psi0=psi0,
        E_p=energy,
        r_max=float(r_max),
        residual=residual,
    )


def drift(q, gs: RadialGroundState) -> np.ndarray:
    """
    grad ln psi_0 at q (shape (d,) or (n, d)); zero at the origin.

    Raises:
        DomainError: If |q| exceeds the solver domain
    """
    q = np.asarray(q, dtype=float)
    radius = np.linalg.norm(q, axis=-1)
    slope = gs.dlog_psi(radius)
    safe = np.where(radius > 0.0, radius, 1.0)
    factor = np.where(radius > 0.0, slope / safe, 0.0)
    return q * factor[..., None] if q.ndim > 1 else q * float(factor)


def sample_nu0(gs: RadialGroundState, count: int, rng: np.random.Generator) -> np.ndarray:
    """
    I.i.d. positions from psi_0^2 dq: inverse-CDF radius times a uniform direction.

    Returns:
        Array of shape (count, d)
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    radii = gs.radial_quantile(rng.random(count))
    directions = rng.standard_normal((count, gs.d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return radii[:, None] * directions
