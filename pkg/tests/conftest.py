"""Shared fixtures: ground states, small run configurations and a cheap pair kernel."""
import numpy as np
import pytest

from src.models import McmcSettings, ModelParams, PathConfig, PotentialSpec, RunConfig
from src.schrodinger import solve_ground_state

HARMONIC = PotentialSpec(pot_C=0.5, pot_alpha=1.0)


@pytest.fixture(scope="session")
def harmonic_gs():
    """H = -1/2 Laplacian + |q|^2 / 2 in d = 3: E = 3/2, psi ~ exp(-|q|^2 / 2)."""
    return solve_ground_state(HARMONIC, 3, grid_points=1500)


@pytest.fixture(scope="session")
def quartic_gs():
    return solve_ground_state(PotentialSpec(pot_C=1.0, pot_alpha=2.0), 3, grid_points=800)


class GaussianPairKernel:
    """Smooth negative stand-in for W, vectorised like a KernelTable."""

    def __init__(self, strength: float = 0.5):
        self.strength = strength
        self.params = ModelParams(e=1.0)

    def __call__(self, r, t):
        r, t = np.asarray(r, dtype=float), np.asarray(t, dtype=float)
        return -self.strength * np.exp(-(r * r + t * t))


@pytest.fixture
def pair_kernel():
    return GaussianPairKernel()


def small_run(e: float = 0.0, T: float = 1.0, dt: float = 0.1, steps: int = 60, burn_in: int = 20,
              chains: int = 1, seed: int = 7, **mcmc) -> RunConfig:
    settings = dict(steps=steps, burn_in=burn_in, chains=chains, seed=seed, thin=1, tune_interval=10,
                    resync_interval=25, checkpoint_every=10)
    settings.update(mcmc)
    return RunConfig(
        model=ModelParams(e=e, pot_C=0.5, pot_alpha=1.0),
        path=PathConfig(T=T, dt=dt, d=3),
        mcmc=McmcSettings(**settings),
    )


@pytest.fixture
def tiny_run():
    return small_run()
