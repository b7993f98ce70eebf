import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from conemv.models.market import build_levy_model


@pytest.fixture
def brownian():
    """Driftless Brownian motion"""
    return build_levy_model(dim=1, drift=0.0, diffusion=1.0, horizon=1.0)


@pytest.fixture
def black_scholes():
    """Excess return 0.08, variance 0.04"""
    return build_levy_model(dim=1, drift=0.08, diffusion=0.04, horizon=1.0)


@pytest.fixture
def poisson():
    """Standard Poisson process: b = 1 (h(x) = x), one atom u = 1 with intensity 1"""
    return build_levy_model(dim=1, drift=1.0, diffusion=0.0, jump_atoms=[(1.0, 1.0)], horizon=1.0)


@pytest.fixture
def continuous_2d():
    """Two correlated assets with nonnegative excess returns"""
    return build_levy_model(
        dim=2,
        drift=[0.08, 0.005],
        diffusion=[[0.04, 0.01], [0.01, 0.09]],
        horizon=1.0,
    )


@pytest.fixture
def jump_diffusion_2d():
    return build_levy_model(
        dim=2,
        drift=[0.1, 0.05],
        diffusion=[[0.05, 0.01], [0.01, 0.03]],
        jump_atoms=[([0.2, -0.1], 0.5), ([-0.3, 0.1], 0.8)],
        horizon=1.0,
    )


def random_model(rng: np.random.Generator, dim: int, n_atoms: int, diffusion_scale: float = 0.05):
    """Random jump-diffusion with moderate coefficients"""
    a = rng.normal(size=(dim, dim)) * np.sqrt(diffusion_scale / dim)
    diffusion = a @ a.T + 0.5 * diffusion_scale * np.eye(dim)
    drift = rng.normal(scale=0.1, size=dim)
    atoms = [(rng.normal(scale=0.2, size=dim), float(rng.uniform(0.1, 1.0))) for _ in range(n_atoms)]
    return build_levy_model(dim=dim, drift=drift, diffusion=diffusion, jump_atoms=atoms, horizon=1.0)


@pytest.fixture
def model_factory():
    return random_model
