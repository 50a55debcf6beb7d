"""
Discretised particle paths on [-T, T] and Metropolis-Hastings sampling of the
finite-volume Gibbs measure

    dN_T ∝ exp(-S(q)) dN0_T,    S = sum_ij w_i w_j W(|q_i - q_j|, |t_i - t_j|),

where N0_T is the stationary ground-state diffusion written relative to
discrete Brownian increments.
"""
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import console
from .artifact_store import CHECKPOINT_MAGIC, read_binary, write_binary
from .errors import (
    CheckpointMismatchError,
    InsufficientDataError,
    NonFiniteObservableError,
)
from .estimators import estimate, pool_chains
from .models import Estimate, McmcSettings, PathConfig, RunConfig
from .schrodinger import RadialGroundState, sample_nu0

MOVES = ("single", "bridge", "endpoint")
RESYNC_TOL = 1e-8

# (n_beads, d) array of positions at times -T, -T+dt, ..., T
DiscretizedPath = np.ndarray


def validate_path(path: DiscretizedPath, cfg: PathConfig) -> np.ndarray:
    path = np.asarray(path, dtype=float)
    if path.shape != (cfg.n_beads, cfg.d):
        raise ValueError(f"path shape {path.shape} != ({cfg.n_beads}, {cfg.d})")
    if not np.all(np.isfinite(path)):
        raise ValueError("path has non-finite coordinates")
    return path


def make_stream(seed: int, chain_id: int = 0, point_id: int = 0) -> np.random.Generator:
    """Counter-based stream for one (seed, chain, curve point)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chain_id, point_id))))


def worker_count() -> int:
    return max(1, int(os.environ.get("NIRSIM_THREADS", os.cpu_count() or 1)))


class PathTarget:
    """Log-density pieces of the discretised Gibbs measure for one window [-T, T]."""

    def __init__(self, gs: RadialGroundState, table: Optional[Callable], cfg: PathConfig):
        self.gs = gs
        self.table = table
        self.cfg = cfg
        self.times = cfg.times
        self.weights = cfg.trapezoid_weights()
        self.dt = cfg.dt
        self.n = cfg.n_beads
        self.interacting = table is not None and getattr(getattr(table, "params", None), "e", 1.0) != 0.0

    def kernel(self, r, t) -> np.ndarray:
        if not self.interacting:
            return np.zeros(np.broadcast(r, t).shape)
        return self.table(r, t)

    def pair_matrix(self, path: np.ndarray) -> np.ndarray:
        dist = np.linalg.norm(path[:, None, :] - path[None, :, :], axis=-1)
        lag = np.abs(self.times[:, None] - self.times[None, :])
        return self.kernel(dist, lag)

    def kinetic(self, path: np.ndarray) -> float:
        return kinetic_log_weight(path, self.dt)

    def reference(self, path: np.ndarray) -> float:
        return reference_log_weight(path, self.gs, self.cfg)

    def action(self, path: np.ndarray) -> float:
        if not self.interacting:
            return 0.0
        return float(self.weights @ self.pair_matrix(path) @ self.weights)

    def cross(self, path: np.ndarray) -> float:
        if not self.interacting:
            return 0.0
        past, future = self.times < 0, self.times > 0
        block = self.pair_matrix(path)[np.ix_(past, future)]
        return float(2.0 * self.weights[past] @ block @ self.weights[future])

    def log_density(self, path: np.ndarray) -> float:
        return self.kinetic(path) + self.reference(path) - self.action(path)

    def _rows(self, path: np.ndarray, idx: np.ndarray) -> np.ndarray:
        dist = np.linalg.norm(path[idx][:, None, :] - path[None, :, :], axis=-1)
        lag = np.abs(self.times[idx][:, None] - self.times[None, :])
        return self.kernel(dist, lag)

    def action_delta(self, path: np.ndarray, idx: np.ndarray, new_positions: np.ndarray) -> float:
        """S(new) - S(old) when beads idx move, O(len(idx) * n)."""
        if not self.interacting:
            return 0.0
        proposed = path.copy()
        proposed[idx] = new_positions
        diff = self._rows(proposed, idx) - self._rows(path, idx)
        weighted = self.weights[idx][:, None] * self.weights[None, :] * diff
        return float(2.0 * weighted.sum() - weighted[:, idx].sum())

    def reference_delta(self, path: np.ndarray, idx: np.ndarray, new_positions: np.ndarray) -> float:
        """Change of the reference log-weight; -inf outside the ground-state domain."""
        new_r = np.linalg.norm(new_positions, axis=-1)
        if np.any(new_r > self.gs.r_limit):
            return -np.inf
        old_r = np.linalg.norm(path[idx], axis=-1)
        w = self.weights[idx]
        delta = -float(np.dot(w, self.gs.potential(new_r) - self.gs.potential(old_r)))
        for end in (0, self.n - 1):
            hit = np.flatnonzero(idx == end)
            if hit.size:
                k = hit[0]
                delta += float(self.gs.log_psi(new_r[k]) - self.gs.log_psi(old_r[k]))
        return delta


def kinetic_log_weight(path: np.ndarray, dt: float) -> float:
    """-sum |q_{i+1} - q_i|^2 / (2 dt): log-density of Brownian increments, up to a constant."""
    inc = np.diff(np.asarray(path, dtype=float), axis=0)
    return -float(np.sum(inc * inc)) / (2.0 * dt)


def reference_log_weight(path: np.ndarray, gs: RadialGroundState, cfg: PathConfig) -> float:
    """
    ln psi0(q_-T) + ln psi0(q_T) - sum_i w_i (V(q_i) - E_p), trapezoid weights w_i.

    Raises:
        DomainError: If a bead lies beyond the ground-state domain
    """
    path = np.asarray(path, dtype=float)
    radii = np.linalg.norm(path, axis=-1)
    w = cfg.trapezoid_weights()
    ends = gs.log_psi(radii[0]) + gs.log_psi(radii[-1])
    return float(ends - np.dot(w, gs.potential(radii) - gs.E_p))


def interaction_action(path: np.ndarray, table: Callable, cfg: PathConfig, gs: Optional[RadialGroundState] = None) -> float:
    """Trapezoid double sum of W over all bead pairs."""
    path = validate_path(path, cfg)
    return PathTarget(gs, table, cfg).action(path)


def cross_action(path: np.ndarray, table: Callable, cfg: PathConfig, gs: Optional[RadialGroundState] = None) -> float:
    """Double sum of W restricted to pairs with t_i < 0 < t_j, counted in both orders."""
    path = validate_path(path, cfg)
    return PathTarget(gs, table, cfg).cross(path)


def target_log_density(path: np.ndarray, gs: RadialGroundState, table: Optional[Callable], cfg: PathConfig) -> float:
    """Kinetic + reference - action."""
    return PathTarget(gs, table, cfg).log_density(validate_path(path, cfg))


# ---------------------------------------------------------------------------
# Chain state and moves
# ---------------------------------------------------------------------------

@dataclass
class ChainState:
    """Mutable state of one chain; `rng` is its private stream."""
    chain_id: int
    path: np.ndarray
    rng: np.random.Generator
    sweep: int = 0
    kinetic: float = 0.0
    reference: float = 0.0
    action: float = 0.0
    tuning: dict = field(default_factory=dict)
    tallies: dict = field(default_factory=lambda: {m: [0, 0] for m in MOVES})
    window: dict = field(default_factory=lambda: {m: [0, 0] for m in MOVES})
    frozen: bool = False

    def acceptance_rates(self) -> dict:
        return {m: (acc / prop if prop else float("nan")) for m, (prop, acc) in self.tallies.items()}


def initial_state(target: PathTarget, mcmc: McmcSettings, rng: np.random.Generator, chain_id: int = 0,
                  path: Optional[np.ndarray] = None) -> ChainState:
    """Constant path at a nu0 draw unless a path is given."""
    if path is None:
        start = sample_nu0(target.gs, 1, rng)[0]
        path = np.tile(start, (target.n, 1))
    path = validate_path(path, target.cfg).copy()
    state = ChainState(chain_id=chain_id, path=path, rng=rng)
    state.tuning = {
        "step_size": float(mcmc.step_size),
        "block_length": int(min(mcmc.block_length, target.n - 1)),
        "tail_length": int(max(1, min(mcmc.block_length, target.n - 1))),
    }
    resync(state, target)
    return state


def resync(state: ChainState, target: PathTarget) -> float:
    """Recompute cached terms from scratch; returns the largest relative drift found."""
    fresh = (target.kinetic(state.path), target.reference(state.path), target.action(state.path))
    cached = (state.kinetic, state.reference, state.action)
    drift = max(abs(c - f) / max(abs(f), 1.0) for c, f in zip(cached, fresh))
    state.kinetic, state.reference, state.action = fresh
    return drift


def _single_bead(state: ChainState, target: PathTarget, rng: np.random.Generator):
    n, path = target.n, state.path
    i = int(rng.integers(n))
    new = path[i] + state.tuning["step_size"] * rng.standard_normal(path.shape[1])
    d_kin = 0.0
    for j in (i - 1, i + 1):
        if 0 <= j < n:
            d_kin -= (np.sum((new - path[j]) ** 2) - np.sum((path[i] - path[j]) ** 2)) / (2.0 * target.dt)
    return np.array([i]), new[None, :], float(d_kin)


def _bridge_block(state: ChainState, target: PathTarget, rng: np.random.Generator):
    n, path = target.n, state.path
    L = state.tuning["block_length"]
    a = int(rng.integers(0, n - L))
    b = a + L
    idx = np.arange(a + 1, b)
    noise = rng.standard_normal((idx.size, path.shape[1]))
    new = np.empty((idx.size, path.shape[1]))
    prev = path[a]
    for k, i in enumerate(idx):
        remaining = b - i + 1
        mean = prev + (path[b] - prev) / remaining
        prev = mean + np.sqrt(target.dt * (remaining - 1) / remaining) * noise[k]
        new[k] = prev
    return idx, new, 0.0


def _endpoint_tail(state: ChainState, target: PathTarget, rng: np.random.Generator):
    n, path = target.n, state.path
    m = min(state.tuning["tail_length"], n - 1)
    noise = np.sqrt(target.dt) * rng.standard_normal((m, path.shape[1]))
    if rng.integers(2) == 0:
        idx = np.arange(m - 1, -1, -1)
        anchor = path[m]
    else:
        idx = np.arange(n - m, n)
        anchor = path[n - m - 1]
    new = anchor + np.cumsum(noise, axis=0)
    return idx, new, 0.0


_PROPOSALS = {"single": _single_bead, "bridge": _bridge_block, "endpoint": _endpoint_tail}


def mcmc_step(state: ChainState, target: PathTarget, mcmc: McmcSettings) -> ChainState:
    """
    One Metropolis-Hastings update from the move mix.

    Bridge and tail proposals are drawn from the free Brownian law, so their
    kinetic terms cancel against the proposal density; only reference and
    action changes enter. Acceptance never reads the cached totals.
    """
    rng = state.rng
    move = MOVES[int(rng.choice(3, p=mcmc.move_probabilities()))]
    idx, new, d_kin = _PROPOSALS[move](state, target, rng)
    u = rng.random()

    d_ref = target.reference_delta(state.path, idx, new)
    accepted = False
    if np.isfinite(d_ref):
        d_act = target.action_delta(state.path, idx, new)
        log_alpha = d_kin + d_ref - d_act
        if log_alpha >= 0.0 or np.log(u) < log_alpha:
            accepted = True
            state.path[idx] = new
            state.kinetic = state.kinetic + d_kin if move == "single" else target.kinetic(state.path)
            state.reference += d_ref
            state.action += d_act

    for book in (state.tallies, state.window):
        book[move][0] += 1
        book[move][1] += int(accepted)
    return state


def metropolis_update(state: ChainState, gs: RadialGroundState, table: Optional[Callable], cfg: RunConfig,
                      rng: np.random.Generator) -> ChainState:
    """
    mcmc_step from its ingredients: the target is assembled from (gs, table, cfg.path)
    and the chain draws from rng from here on.
    """
    state.rng = rng
    return mcmc_step(state, PathTarget(gs, table, cfg.path), cfg.mcmc)


def tune(state: ChainState, mcmc: McmcSettings, n_beads: int) -> None:
    """Adapt step size and block lengths toward the acceptance window, then reset the window tallies."""
    low, high = mcmc.accept_low, mcmc.accept_high
    for move, (prop, acc) in state.window.items():
        if prop < 20:
            continue
        rate = acc / prop
        if move == "single":
            if rate < low:
                state.tuning["step_size"] *= 0.7
            elif rate > high:
                state.tuning["step_size"] *= 1.4
        else:
            key, floor = ("block_length", 2) if move == "bridge" else ("tail_length", 1)
            length = state.tuning[key]
            if rate < low:
                length = max(floor, int(length * 0.7))
            elif rate > high:
                length = min(n_beads - 1, max(length + 1, int(length * 1.4)))
            state.tuning[key] = int(length)
    state.window = {m: [0, 0] for m in MOVES}


def sweep(state: ChainState, target: PathTarget, mcmc: McmcSettings) -> ChainState:
    """n_beads moves, then resync, tuning and freeze bookkeeping."""
    for _ in range(target.n):
        mcmc_step(state, target, mcmc)
    state.sweep += 1
    if state.sweep % mcmc.resync_interval == 0:
        drift = resync(state, target)
        if drift > RESYNC_TOL:
            console.warn(f"chain {state.chain_id}: cached log-density drifted by {drift:.2e}; resynchronised", once=False)
    if not state.frozen:
        if state.sweep % mcmc.tune_interval == 0:
            tune(state, mcmc, target.n)
        if state.sweep >= mcmc.burn_in:
            state.frozen = True
    return state


# ---------------------------------------------------------------------------
# Observables (picklable callables of (path, target))
# ---------------------------------------------------------------------------

class Observable:
    name = "observable"

    def __call__(self, path: np.ndarray, target: PathTarget) -> float:
        raise NotImplementedError


class ConstantObservable(Observable):
    name = "one"

    def __call__(self, path, target):
        return 1.0


class BeadSquaredRadius(Observable):
    """|q_t|^2 at one bead time."""

    def __init__(self, t: float = 0.0):
        self.t = float(t)
        self.name = f"q2_t{self.t:g}"

    def __call__(self, path, target):
        q = path[target.cfg.index_of(self.t)]
        return float(q @ q)


class CenterRadius(Observable):
    """|q_0|."""
    name = "r0"

    def __call__(self, path, target):
        return float(np.linalg.norm(path[target.cfg.center]))


class LagProduct(Observable):
    """q_0 . q_t."""

    def __init__(self, t: float):
        self.t = float(t)
        self.name = f"q0qt_{self.t:g}"

    def __call__(self, path, target):
        return float(path[target.cfg.center] @ path[target.cfg.index_of(self.t)])


class SupNorm(Observable):
    """sup |q_t| over |t| <= window (whole path by default)."""

    def __init__(self, window: Optional[float] = None):
        self.window = window
        self.name = "sup_norm" if window is None else f"sup_norm_{window:g}"

    def __call__(self, path, target):
        mask = slice(None) if self.window is None else np.abs(target.times) <= self.window + 1e-12
        return float(np.max(np.linalg.norm(path[mask], axis=-1)))


class InteractionAction(Observable):
    name = "action"

    def __call__(self, path, target):
        return target.action(path)


class CrossActionExp(Observable):
    """exp(cross action); bounded by 1 since the cross action is <= 0."""
    name = "exp_cross_action"

    def __call__(self, path, target):
        return float(np.exp(target.cross(path)))


class MeanPotential(Observable):
    """(1/2T) int V(q_t) dt."""
    name = "mean_potential"

    def __call__(self, path, target):
        radii = np.linalg.norm(path, axis=-1)
        return float(target.weights @ target.gs.potential(radii) / (2.0 * target.cfg.T))


def energy_observables() -> list[Observable]:
    return [InteractionAction(), CrossActionExp(), MeanPotential()]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _encode_rng(value):
    if isinstance(value, np.ndarray):
        return {"__ndarray__": [int(v) for v in value.ravel()], "dtype": str(value.dtype), "shape": list(value.shape)}
    if isinstance(value, dict):
        return {k: _encode_rng(v) for k, v in value.items()}
    if isinstance(value, np.integer):
        return int(value)
    return value


def _decode_rng(value):
    if isinstance(value, dict) and "__ndarray__" in value:
        return np.array(value["__ndarray__"], dtype=value["dtype"]).reshape(value["shape"])
    if isinstance(value, dict):
        return {k: _decode_rng(v) for k, v in value.items()}
    return value


def save_checkpoint(path: Path, state: ChainState, traces: dict, kept_paths: list, config_hash: str) -> Path:
    """NIRC1: chain bookkeeping in the header, path first then traces as float64."""
    header = {
        "config_hash": config_hash,
        "chain_id": state.chain_id,
        "sweep": state.sweep,
        "rng_state": _encode_rng(state.rng.bit_generator.state),
        "caches": [state.kinetic, state.reference, state.action],
        "tuning": state.tuning,
        "tallies": state.tallies,
        "window": state.window,
        "frozen": state.frozen,
        "trace_names": list(traces),
    }
    arrays = {"path": state.path}
    for name, values in traces.items():
        arrays[f"trace:{name}"] = np.asarray(values, dtype=float)
    n, d = state.path.shape
    arrays["kept_paths"] = np.asarray(kept_paths, dtype=float).reshape(len(kept_paths), n, d)
    return write_binary(path, CHECKPOINT_MAGIC, header, arrays)


def load_checkpoint(path: Path, config_hash: str) -> tuple[ChainState, dict, list]:
    """
    Restore a chain exactly as saved.

    Raises:
        CheckpointMismatchError: If the checkpoint was written under another config
    """
    header, arrays = read_binary(path, CHECKPOINT_MAGIC)
    if header.get("config_hash") != config_hash:
        raise CheckpointMismatchError(
            f"{path} was written with config hash {header.get('config_hash')}, current run has {config_hash}"
        )
    bit_gen = np.random.Philox()
    bit_gen.state = _decode_rng(header["rng_state"])
    state = ChainState(
        chain_id=int(header["chain_id"]),
        path=arrays["path"].copy(),
        rng=np.random.Generator(bit_gen),
        sweep=int(header["sweep"]),
        tuning=header["tuning"],
        tallies={k: list(v) for k, v in header["tallies"].items()},
        window={k: list(v) for k, v in header["window"].items()},
        frozen=bool(header["frozen"]),
    )
    state.kinetic, state.reference, state.action = header["caches"]
    traces = {name: list(arrays[f"trace:{name}"]) for name in header["trace_names"]}
    kept = list(arrays["kept_paths"])
    return state, traces, kept


# ---------------------------------------------------------------------------
# Running chains
# ---------------------------------------------------------------------------

@dataclass
class ChainResult:
    """Traces and bookkeeping of one finished chain."""
    chain_id: int
    traces: dict
    acceptance: dict
    tuning: dict
    paths: list = field(default_factory=list)
    final_path: Optional[np.ndarray] = None

    @property
    def estimates(self) -> dict[str, Estimate]:
        return {name: estimate(values, name) for name, values in self.traces.items()}


def run_chain(
    cfg: RunConfig,
    gs: RadialGroundState,
    table: Optional[Callable],
    observables: Sequence[Observable],
    n_steps: Optional[int] = None,
    seed: Optional[int] = None,
    chain_id: int = 0,
    point_id: int = 0,
    checkpoint: Optional[Path] = None,
    config_hash: str = "",
    keep_paths: int = 0,
    initial_path: Optional[np.ndarray] = None,
) -> ChainResult:
    """
    Run one chain for n_steps sweeps, recording observables every `thin`
    sweeps after burn-in.

    Args:
        cfg: Run configuration (path window, MCMC settings)
        gs: Ground state of the particle Hamiltonian
        table: Pair-potential evaluator W(r, t) or None for e = 0
        observables: Picklable observables
        n_steps: Sweeps (default cfg.mcmc.steps)
        seed: Master seed (default cfg.mcmc.seed)
        chain_id: Chain index; selects the random stream
        point_id: Curve-point index; selects the random stream
        checkpoint: File to write checkpoints to and resume from
        config_hash: Hash stored in (and required of) checkpoints
        keep_paths: Number of thinned post-burn-in paths to keep
        initial_path: Starting path (default: constant at a nu0 draw)

    Returns:
        ChainResult

    Raises:
        NonFiniteObservableError: With the sweep index of the first NaN/Inf
        CheckpointMismatchError: If the checkpoint belongs to another config
    """
    mcmc = cfg.mcmc
    n_steps = mcmc.steps if n_steps is None else int(n_steps)
    if n_steps < mcmc.burn_in:
        raise ValueError(f"n_steps={n_steps} must be >= burn_in={mcmc.burn_in}")
    seed = mcmc.seed if seed is None else int(seed)
    target = PathTarget(gs, table, cfg.path)

    if checkpoint is not None and Path(checkpoint).exists():
        state, traces, kept = load_checkpoint(Path(checkpoint), config_hash)
    else:
        rng = make_stream(seed, chain_id, point_id)
        state = initial_state(target, mcmc, rng, chain_id, initial_path)
        traces = {obs.name: [] for obs in observables}
        kept = []

    while state.sweep < n_steps:
        sweep(state, target, mcmc)
        after = state.sweep - mcmc.burn_in
        if after > 0 and after % mcmc.thin == 0:
            for obs in observables:
                value = obs(state.path, target)
                if not np.isfinite(value):
                    raise NonFiniteObservableError(obs.name, state.sweep)
                traces[obs.name].append(float(value))
            if len(kept) < keep_paths:
                kept.append(state.path.copy())
        if checkpoint is not None and (state.sweep % mcmc.checkpoint_every == 0 or state.sweep == n_steps):
            save_checkpoint(Path(checkpoint), state, traces, kept, config_hash)

    return ChainResult(
        chain_id=state.chain_id,
        traces={k: np.asarray(v) for k, v in traces.items()},
        acceptance=state.acceptance_rates(),
        tuning=dict(state.tuning),
        paths=kept,
        final_path=state.path.copy(),
    )


def _chain_worker(args: tuple) -> ChainResult:
    return run_chain(*args[:4], **args[4])


@dataclass
class PooledResult:
    """Chains of one curve point merged in chain-id order."""
    chains: list[ChainResult]

    @property
    def estimates(self) -> dict[str, Estimate]:
        names = list(self.chains[0].traces)
        return {name: pool_chains([c.traces[name] for c in self.chains], name) for name in names}

    def trace(self, name: str) -> np.ndarray:
        return np.concatenate([c.traces[name] for c in self.chains])

    @property
    def paths(self) -> list:
        return [p for c in self.chains for p in c.paths]


def run_chains(
    cfg: RunConfig,
    gs: RadialGroundState,
    table: Optional[Callable],
    observables: Sequence[Observable],
    point_id: int = 0,
    checkpoint_for: Optional[Callable[[int], Path]] = None,
    config_hash: str = "",
    keep_paths: int = 0,
) -> PooledResult:
    """Run cfg.mcmc.chains independent chains, in worker processes when NIRSIM_THREADS > 1."""
    jobs = []
    for chain_id in range(cfg.mcmc.chains):
        kwargs = {
            "chain_id": chain_id,
            "point_id": point_id,
            "checkpoint": checkpoint_for(chain_id) if checkpoint_for else None,
            "config_hash": config_hash,
            "keep_paths": keep_paths,
        }
        jobs.append((cfg, gs, table, list(observables), kwargs))

    workers = min(worker_count(), len(jobs))
    if workers == 1:
        results = [_chain_worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chain_worker, jobs))
    results.sort(key=lambda r: r.chain_id)
    return PooledResult(results)


# ---------------------------------------------------------------------------
# Exhaustive lattice check
# ---------------------------------------------------------------------------

def _lattice_path(lattice: np.ndarray, state: tuple, d: int) -> np.ndarray:
    path = np.zeros((len(state), d))
    path[:, 0] = lattice[list(state)]
    return path


def lattice_boltzmann(target: PathTarget, lattice: Sequence[float]) -> np.ndarray:
    """Normalised target law over all placements of the beads on lattice points along the first axis."""
    lattice = np.asarray(lattice, dtype=float)
    m, n, d = lattice.size, target.n, target.cfg.d
    logp = np.empty((m,) * n)
    for state in itertools.product(range(m), repeat=n):
        logp[state] = target.log_density(_lattice_path(lattice, state, d))
    p = np.exp(logp - logp.max())
    return p / p.sum()


def lattice_metropolis(
    target: PathTarget, lattice: Sequence[float], n_steps: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """
    Single-bead Metropolis chain on the lattice with uniform proposals.

    Returns:
        (visit frequencies shaped like lattice_boltzmann, transition counts between flat states)
    """
    lattice = np.asarray(lattice, dtype=float)
    m, n, d = lattice.size, target.n, target.cfg.d
    shape = (m,) * n
    cache: dict[tuple, float] = {}

    def logp(state):
        if state not in cache:
            cache[state] = target.log_density(_lattice_path(lattice, state, d))
        return cache[state]

    state = (m // 2,) * n
    visits = np.zeros(shape)
    transitions = np.zeros((m ** n, m ** n))
    for _ in range(n_steps):
        bead = int(rng.integers(n))
        proposal = list(state)
        proposal[bead] = int(rng.integers(m))
        proposal = tuple(proposal)
        u = rng.random()
        new = proposal if np.log(u) < logp(proposal) - logp(state) else state
        transitions[np.ravel_multi_index(state, shape), np.ravel_multi_index(new, shape)] += 1
        state = new
        visits[state] += 1
    return visits / visits.sum(), transitions


# ---------------------------------------------------------------------------
# Path statistics
# ---------------------------------------------------------------------------

@dataclass
class RegularityReport:
    """Empirical Hoelder-1/8 modulus and sup-norm envelope of sampled paths."""
    deltas: np.ndarray
    modulus_median: np.ndarray
    modulus_p99: np.ndarray
    windows: np.ndarray
    sup_p99: np.ndarray
    C1: float
    C2: float
    residuals: np.ndarray

    def as_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def path_regularity_stats(
    paths: Sequence[np.ndarray],
    cfg: PathConfig,
    pot_alpha: float,
    deltas: Optional[Sequence[float]] = None,
    windows: Optional[Sequence[float]] = None,
) -> RegularityReport:
    """
    Modulus ratios sup_{|t-s|<=delta} |q_t - q_s| / delta^(1/8) per delta, and the
    99th percentile of sup_{|t|<=T'} |q_t| fitted against C1 (ln(T'+1))^(1/(alpha+1)) + C2.

    Raises:
        InsufficientDataError: With fewer than 100 paths
    """
    if len(paths) < 100:
        raise InsufficientDataError(f"path regularity needs at least 100 paths, got {len(paths)}")
    stack = np.asarray(paths, dtype=float)
    n = cfg.n_beads
    if deltas is None:
        deltas = [cfg.dt * 2 ** j for j in range(int(np.log2(max(n // 4, 1))) + 1)]
    if windows is None:
        windows = [cfg.T * 2.0 ** -j for j in range(4, -1, -1) if cfg.T * 2.0 ** -j >= cfg.dt]

    lags = [max(1, int(round(delta / cfg.dt))) for delta in deltas]
    med, p99 = [], []
    running = np.zeros(stack.shape[0])
    lag_done = 0
    for lag, delta in zip(lags, deltas):
        for k in range(lag_done + 1, min(lag, n - 1) + 1):
            step = np.linalg.norm(stack[:, k:] - stack[:, :-k], axis=-1).max(axis=1)
            running = np.maximum(running, step)
        lag_done = max(lag_done, lag)
        ratio = running / delta ** 0.125
        med.append(np.median(ratio))
        p99.append(np.percentile(ratio, 99))

    norms = np.linalg.norm(stack, axis=-1)
    times = cfg.times
    sup_p99 = np.array([np.percentile(norms[:, np.abs(times) <= w + 1e-12].max(axis=1), 99) for w in windows])
    x = np.log(np.asarray(windows) + 1.0) ** (1.0 / (pot_alpha + 1.0))
    if len(windows) >= 2:
        fit = stats.linregress(x, sup_p99)
        c1, c2 = float(fit.slope), float(fit.intercept)
    else:
        c1, c2 = 0.0, float(sup_p99[0])
    return RegularityReport(
        deltas=np.asarray(deltas, dtype=float),
        modulus_median=np.asarray(med),
        modulus_p99=np.asarray(p99),
        windows=np.asarray(windows, dtype=float),
        sup_p99=sup_p99,
        C1=c1,
        C2=c2,
        residuals=sup_p99 - (c1 * x + c2),
    )


def sup_exceedance(paths: Sequence[np.ndarray], lam: float, T: float, cfg: PathConfig) -> Estimate:
    """Fraction of paths with sup_{|t|<=T} |q_t| >= T^lam, with binomial error."""
    stack = np.asarray(paths, dtype=float)
    if stack.shape[0] < 1:
        raise InsufficientDataError("no paths")
    mask = np.abs(cfg.times) <= T + 1e-12
    sups = np.linalg.norm(stack[:, mask], axis=-1).max(axis=1)
    hits = sups >= T ** lam
    p = float(hits.mean())
    n = hits.size
    return Estimate(mean=p, stderr=float(np.sqrt(p * (1.0 - p) / n)), ess=float(n), n_samples=n)
