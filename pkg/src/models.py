"""Data models for model parameters, run configuration and estimates."""
import math
from enum import Enum
from typing import Optional, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SUPPORTED_DIMENSIONS = (3, 4, 5)

# pooled t = 0 samples below which the localization histogram is refused
LOCALIZATION_MIN_SAMPLES = 10_000


class ChargeKind(str, Enum):
    """Family of the smeared particle charge."""
    GAUSSIAN = "gaussian"


class PotentialClass(str, Enum):
    """Confining potential class: V(q) = pot_C * |q|^(2 pot_alpha)."""
    P1_POLYNOMIAL = "P1_polynomial"


class ModelParams(BaseModel):
    """Physical parameters; single source of truth for all kernels."""
    model_config = ConfigDict(frozen=True)

    d: int = 3
    e: float = Field(0.3, ge=0.0)
    sigma: float = Field(1.0, gt=0.0)
    pot_C: float = Field(1.0, gt=0.0)
    pot_alpha: float = Field(2.0, gt=0.0)
    charge: ChargeKind = ChargeKind.GAUSSIAN

    @field_validator("d")
    @classmethod
    def _supported_dimension(cls, v: int) -> int:
        if v not in SUPPORTED_DIMENSIONS:
            raise ValueError(f"unsupported dimension {v}; supported: {list(SUPPORTED_DIMENSIONS)}")
        return v

    def with_coupling(self, e: float) -> "ModelParams":
        return self.model_copy(update={"e": e})

    def potential(self) -> "PotentialSpec":
        return PotentialSpec(pot_C=self.pot_C, pot_alpha=self.pot_alpha)


class PotentialSpec(BaseModel):
    """Confining potential V(q) = pot_C |q|^(2 pot_alpha)."""
    model_config = ConfigDict(frozen=True)

    pot_C: float = Field(1.0, gt=0.0)
    pot_alpha: float = Field(2.0, gt=0.0)
    kind: PotentialClass = PotentialClass.P1_POLYNOMIAL

    @property
    def gibbs_admissible(self) -> bool:
        """Exponent large enough for the Gibbs-measure existence regime."""
        return self.pot_alpha > 1.0


class IRTestFunction(BaseModel):
    """Parameters of the singularity test profile s_hat."""
    model_config = ConfigDict(frozen=True)

    T_star: float = math.e ** 2
    zeta: float = 0.5
    k_star: float = Field(0.5, gt=0.0)

    @field_validator("T_star")
    @classmethod
    def _log_above_one(cls, v: float) -> float:
        if not v > math.e:
            raise ValueError("T_star must satisfy ln(T_star) > 1")
        return v

    @field_validator("zeta")
    @classmethod
    def _zeta_range(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("zeta must lie in (0, 1)")
        return v


class PathConfig(BaseModel):
    """Uniform time grid on [-T, T]."""
    model_config = ConfigDict(frozen=True)

    T: float = Field(8.0, gt=0.0)
    dt: float = Field(0.05, gt=0.0)
    d: int = 3

    @model_validator(mode="after")
    def _grid_is_integral(self) -> "PathConfig":
        # t = 0 must be a bead, so T/dt (hence 2T/dt) is an integer
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"T/dt must be an integer, got {ratio}")
        if 2 * round(ratio) + 1 < 3:
            raise ValueError("path needs at least 3 beads")
        return self

    @property
    def half_beads(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def n_beads(self) -> int:
        return 2 * self.half_beads + 1

    @property
    def center(self) -> int:
        """Index of the bead at t = 0."""
        return self.half_beads

    @property
    def times(self) -> np.ndarray:
        return self.dt * (np.arange(self.n_beads) - self.half_beads)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_beads, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def index_of(self, t: float) -> int:
        """Bead index of time t (must be on the grid)."""
        x = t / self.dt + self.half_beads
        i = int(round(x))
        if abs(x - i) > 1e-9 or not 0 <= i < self.n_beads:
            raise ValueError(f"time {t} is not a bead time of this grid")
        return i


class McmcSettings(BaseModel):
    """Chain lengths, seeding and move mix."""
    model_config = ConfigDict(frozen=True)

    steps: int = Field(4000, ge=1)
    burn_in: int = Field(1000, ge=0)
    chains: int = Field(4, ge=1)
    seed: int = Field(12345, ge=0)
    thin: int = Field(5, ge=1)
    resync_interval: int = Field(500, ge=1)
    checkpoint_every: int = Field(500, ge=1)
    block_length: int = Field(8, ge=2)
    step_size: float = Field(0.3, gt=0.0)
    p_single: float = Field(0.5, ge=0.0)
    p_bridge: float = Field(0.4, ge=0.0)
    p_endpoint: float = Field(0.1, ge=0.0)
    tune_interval: int = Field(100, ge=10)
    accept_low: float = 0.3
    accept_high: float = 0.6

    @model_validator(mode="after")
    def _consistent(self) -> "McmcSettings":
        if self.steps < self.burn_in:
            raise ValueError("steps must be >= burn_in")
        if self.p_single + self.p_bridge + self.p_endpoint <= 0:
            raise ValueError("at least one move type needs positive probability")
        if not 0.0 < self.accept_low < self.accept_high < 1.0:
            raise ValueError("acceptance window must satisfy 0 < low < high < 1")
        return self

    def move_probabilities(self) -> np.ndarray:
        p = np.array([self.p_single, self.p_bridge, self.p_endpoint])
        return p / p.sum()

    @property
    def samples_per_chain(self) -> int:
        """Recorded sweeps: every thin-th sweep after burn-in."""
        return (self.steps - self.burn_in) // self.thin

    @property
    def pooled_samples(self) -> int:
        return self.chains * self.samples_per_chain


class ExperimentSettings(BaseModel):
    """Abscissae and numerical resolutions of the experiments."""
    model_config = ConfigDict(frozen=True)

    T_list: Tuple[float, ...] = (4.0, 8.0, 16.0, 32.0)
    t_list: Tuple[float, ...] = tuple(float(x) for x in np.geomspace(10.0, 100.0, 12))
    lags: Tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    caps: Tuple[float, ...] = (5.0, 10.0, 20.0)
    gammas: Tuple[float, ...] = (0.5, 1.0)
    n_bins: int = Field(20, ge=2)
    grid_points: int = Field(2000, ge=100)
    table_resolution: int = Field(256, ge=16)
    table_tol: float = Field(1e-6, gt=0.0)

    @field_validator("T_list")
    @classmethod
    def _increasing(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("T_list must be strictly increasing")
        if any(x <= 0 for x in v):
            raise ValueError("T_list entries must be positive")
        return v


class AcceptanceThresholds(BaseModel):
    """Desk-scale pass/fail thresholds."""
    model_config = ConfigDict(frozen=True)

    n_stderr: float = Field(4.0, gt=0.0)
    decay_ratio: float = Field(0.5, gt=0.0)
    tail_tol: float = Field(0.05, gt=0.0)
    conv_tol: float = Field(0.1, gt=0.0)


class RunConfig(BaseModel):
    """Complete, validated configuration of a run."""
    model_config = ConfigDict(frozen=True)

    model: ModelParams = ModelParams()
    path: PathConfig = PathConfig()
    test: IRTestFunction = IRTestFunction()
    mcmc: McmcSettings = McmcSettings()
    experiments: ExperimentSettings = ExperimentSettings()
    acceptance: AcceptanceThresholds = AcceptanceThresholds()
    output_dir: str = "output"

    @model_validator(mode="after")
    def _path_dimension(self) -> "RunConfig":
        if self.path.d != self.model.d:
            raise ValueError("path dimension must equal model dimension")
        return self


class Estimate(BaseModel):
    """Monte Carlo estimate of one observable."""
    model_config = ConfigDict(frozen=True)

    mean: float
    stderr: float = Field(ge=0.0)
    ess: float = Field(ge=0.0)
    n_samples: int = Field(ge=0)

    @model_validator(mode="after")
    def _ess_bounded(self) -> "Estimate":
        if self.ess > self.n_samples * (1 + 1e-12):
            raise ValueError("ess cannot exceed n_samples")
        return self

    def z_distance(self, other: "Estimate") -> float:
        """|difference| in units of the combined standard error."""
        combined = math.hypot(self.stderr, other.stderr)
        diff = abs(self.mean - other.mean)
        if combined == 0:
            return 0.0 if diff == 0 else math.inf
        return diff / combined


class CurvePoint(BaseModel):
    """One abscissa of a diagnostic curve."""
    abscissa: float
    value: Estimate
    config_hash: str = ""
    extras: dict = {}


class TailFit(BaseModel):
    """Power-law tail fit y ~ C t^(-exponent)."""
    exponent: float
    exponent_stderr: float = Field(ge=0.0)
    window: Tuple[float, float]
    r_squared: float
    extras: dict = {}

    @field_validator("r_squared")
    @classmethod
    def _unit_interval(cls, v: float) -> float:
        if not (0.0 <= v <= 1.0 + 1e-12):
            raise ValueError("R^2 must lie in [0, 1]")
        return min(v, 1.0)
