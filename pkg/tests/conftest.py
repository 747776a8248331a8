"""Shared fixtures: small lossless networks and synthetic GP surrogates."""

import copy

import numpy as np
import pytest

from gp_ccopf.gp.kernel import KernelParams
from gp_ccopf.gp.model import GpModel, MultiGpModel
from gp_ccopf.grid.case import GridCase

TWO_BUS = {
    "name": "two_bus",
    "base_mva": 100.0,
    "buses": [
        {"id": 1, "kind": "slack", "v_min": 0.9, "v_max": 1.1, "v_set": 1.0},
        {"id": 2, "kind": "pq", "v_min": 0.9, "v_max": 1.1},
    ],
    "lines": [{"from_bus": 1, "to_bus": 2, "g": 0.0, "b": -5.0, "s_max": 2.0}],
    "generators": [
        {"bus": 1, "p_min": 0.0, "p_max": 2.0, "q_min": -2.0, "q_max": 2.0, "p_ref": 0.5,
         "c2": 10.0, "c1": 5.0, "c0": 0.0},
    ],
    "loads": [{"bus": 2, "p_ref": 0.5, "q_ref": 0.1, "gamma": 0.2, "sigma": 0.05}],
    "renewables": [],
}

THREE_BUS = {
    "name": "three_bus",
    "base_mva": 100.0,
    "buses": [
        {"id": 1, "kind": "slack", "v_min": 0.9, "v_max": 1.1, "v_set": 1.0},
        {"id": 2, "kind": "pv", "v_min": 0.9, "v_max": 1.1, "v_set": 1.0},
        {"id": 3, "kind": "pq", "v_min": 0.9, "v_max": 1.1},
    ],
    "lines": [
        {"from_bus": 1, "to_bus": 2, "g": 0.0, "b": -10.0, "s_max": 5.0},
        {"from_bus": 1, "to_bus": 3, "g": 0.0, "b": -10.0, "s_max": 5.0},
        {"from_bus": 2, "to_bus": 3, "g": 0.0, "b": -10.0, "s_max": 5.0},
    ],
    "generators": [
        {"bus": 1, "p_min": 0.0, "p_max": 2.0, "q_min": -5.0, "q_max": 5.0, "p_ref": 0.5,
         "c2": 10.0, "c1": 5.0, "c0": 0.0},
        {"bus": 2, "p_min": 0.0, "p_max": 2.0, "q_min": -5.0, "q_max": 5.0, "p_ref": 0.5,
         "c2": 10.0, "c1": 5.0, "c0": 0.0},
    ],
    "loads": [{"bus": 3, "p_ref": 1.0, "q_ref": 0.2, "gamma": 0.2, "sigma": 0.05}],
    "renewables": [],
}


@pytest.fixture
def two_bus_document():
    return copy.deepcopy(TWO_BUS)


@pytest.fixture
def two_bus_case():
    return GridCase.from_document(copy.deepcopy(TWO_BUS))


@pytest.fixture
def three_bus_document():
    return copy.deepcopy(THREE_BUS)


@pytest.fixture
def three_bus_case():
    return GridCase.from_document(copy.deepcopy(THREE_BUS))


def linear_surrogate(
    weights: np.ndarray,
    low: np.ndarray,
    high: np.ndarray,
    n: int = 40,
    seed: int = 0,
    lengthscale: float = 3.0,
) -> MultiGpModel:
    """GP fitted (with fixed hyperparameters) to ``y = weights @ x`` on a box."""
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    rng = np.random.default_rng(seed)
    X = rng.uniform(low, high, size=(n, len(low)))
    params = KernelParams(sf2=4.0, lengthscales=np.full(len(low), lengthscale), sn2=1e-6)
    models = [GpModel.from_params(X, X @ w, params, center=True) for w in weights]
    return MultiGpModel(models=models, y_labels=[f"y{a}" for a in range(len(models))])


@pytest.fixture
def make_surrogate():
    return linear_surrogate
