"""
Shared pytest fixtures
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from sketchcomm.fabric import Backend
from sketchcomm.rng import Distribution, SketchSeed


@pytest.fixture(params=[Backend.LOCKSTEP, Backend.THREADED], ids=["lockstep", "threaded"])
def backend(request):
    return request.param


@pytest.fixture
def seed():
    return SketchSeed(0x5EED, Distribution.GAUSSIAN)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_matrix(rows: int, cols: int, seed: int = 7) -> np.ndarray:
    return np.asfortranarray(np.random.default_rng(seed).standard_normal((rows, cols)))


def random_spsd(n: int, rank: int, seed: int = 11) -> np.ndarray:
    g = random_matrix(n, rank, seed)
    m = g @ g.T
    return np.asfortranarray((m + m.T) / 2.0)
