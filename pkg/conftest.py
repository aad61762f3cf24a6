"""Shared pytest fixtures: small canonical instances used across the suites."""

from __future__ import annotations

from pathlib import Path
import sys

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from oclab.core import Alphabet, DistortionMatrix, Pmf  # noqa: E402


@pytest.fixture
def binary() -> Alphabet:
    return Alphabet((0.0, 1.0))


@pytest.fixture
def uniform_binary(binary: Alphabet) -> Pmf:
    return Pmf.uniform(binary)


@pytest.fixture
def skewed_binary(binary: Alphabet) -> Pmf:
    return Pmf(binary, np.array([0.25, 0.75]))


@pytest.fixture
def hamming(binary: Alphabet) -> DistortionMatrix:
    return DistortionMatrix.hamming(binary, binary)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def random_instance(seed: int, x_size: int, y_size: int):
    """Strictly positive mu, psi on 0..k-1 and a uniform random cost table."""

    gen = np.random.default_rng(seed)
    mu = Pmf.from_weights(Alphabet.range(x_size), gen.dirichlet(np.ones(x_size)) + 0.05)
    psi = Pmf.from_weights(Alphabet.range(y_size), gen.dirichlet(np.ones(y_size)) + 0.05)
    return mu, psi, DistortionMatrix(gen.random((x_size, y_size)))


@pytest.fixture
def make_instance():
    return random_instance
