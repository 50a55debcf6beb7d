"""Monte Carlo error estimation: batch means, effective sample size, chain pooling."""
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import InsufficientDataError, NonFiniteObservableError
from .models import Estimate

MIN_SAMPLES = 4


def _as_samples(samples, name: str = "observable") -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_SAMPLES:
        raise InsufficientDataError(f"{name}: need at least {MIN_SAMPLES} samples, got {x.size}")
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise NonFiniteObservableError(name, int(bad[0]))
    return x


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalised autocorrelation function via zero-padded FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    centred = x - x.mean()
    size = 1 << int(np.ceil(np.log2(2 * n)))
    spectrum = np.fft.rfft(centred, size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n]
    if acov[0] <= 0.0:
        return np.concatenate(([1.0], np.zeros(n - 1)))
    return acov / acov[0]


def integrated_autocorrelation_time(samples) -> float:
    """
    tau = 1 + 2 sum rho_k, truncated by Geyer's initial positive sequence.

    Pairs rho_{2m} + rho_{2m+1} are summed while positive and forced monotone.
    """
    x = _as_samples(samples)
    rho = autocorrelation(x)
    if rho[0] == 1.0 and np.all(rho[1:] == 0.0):
        return 1.0
    n_pairs = (rho.size - 1) // 2
    pairs = rho[: 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    positive = np.flatnonzero(pairs <= 0.0)
    cut = positive[0] if positive.size else pairs.size
    pairs = np.minimum.accumulate(pairs[:cut])
    tau = -1.0 + 2.0 * pairs.sum()
    return float(max(tau, 1.0 / x.size))


def effective_sample_size(samples) -> float:
    """n / tau, capped at n; a constant chain has ESS = n."""
    x = _as_samples(samples)
    if np.ptp(x) == 0.0:
        return float(x.size)
    return float(min(x.size, x.size / integrated_autocorrelation_time(x)))


def batch_means_stderr(samples, n_batches: int | None = None) -> float:
    """
    Standard error of the mean from non-overlapping batch means.

    Args:
        samples: One chain of observable values
        n_batches: Number of batches (default about sqrt(n))

    Returns:
        Standard error estimate (0 for a constant chain)
    """
    x = _as_samples(samples)
    n = x.size
    if n_batches is None:
        n_batches = max(2, int(np.sqrt(n)))
    n_batches = min(n_batches, n // 2)
    if n_batches < 2:
        raise InsufficientDataError("batch means need at least 2 batches of 2 samples")
    size = n // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def estimate(samples, name: str = "observable") -> Estimate:
    """Mean, batch-means stderr and ESS of one chain."""
    x = _as_samples(samples, name)
    return Estimate(
        mean=float(x.mean()),
        stderr=batch_means_stderr(x),
        ess=effective_sample_size(x),
        n_samples=int(x.size),
    )


def pool_chains(chains: Sequence, name: str = "observable") -> Estimate:
    """
    Pool independent chains: per-chain means combined with the spread
    of chain means when there are several chains, batch means otherwise.
    """
    per_chain = [_as_samples(c, name) for c in chains]
    if not per_chain:
        raise InsufficientDataError(f"{name}: no chains to pool")
    if len(per_chain) == 1:
        return estimate(per_chain[0], name)

    singles = [estimate(c, name) for c in per_chain]
    sizes = np.array([e.n_samples for e in singles], dtype=float)
    means = np.array([e.mean for e in singles])
    mean = float(np.average(means, weights=sizes))
    within = np.sqrt(np.sum((sizes / sizes.sum()) ** 2 * np.array([e.stderr for e in singles]) ** 2))
    between = means.std(ddof=1) / np.sqrt(len(means))
    return Estimate(
        mean=mean,
        stderr=float(max(within, between)),
        ess=float(sum(e.ess for e in singles)),
        n_samples=int(sizes.sum()),
    )


def ratio_estimate(numerator, denominator, name: str = "ratio") -> Estimate:
    """
    Ratio of means E[a]/E[b] with delta-method error from batch means.
    """
    a = _as_samples(numerator, name)
    b = _as_samples(denominator, name)
    if a.size != b.size:
        raise ValueError("numerator and denominator must have equal length")
    mb = b.mean()
    if mb == 0.0:
        raise InsufficientDataError(f"{name}: denominator mean is zero")
    r = a.mean() / mb
    linear = (a - r * b) / mb
    return Estimate(
        mean=float(r),
        stderr=batch_means_stderr(linear),
        ess=effective_sample_size(linear) if np.ptp(linear) > 0 else float(a.size),
        n_samples=int(a.size),
    )


def confidence_interval(est: Estimate, level: float = 0.95) -> tuple[float, float]:
    """Normal-approximation interval around an estimate."""
    z = stats.norm.ppf(0.5 + 0.5 * level)
    return est.mean - z * est.stderr, est.mean + z * est.stderr
