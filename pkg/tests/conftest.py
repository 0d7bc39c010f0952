"""Shared helpers: random bounded instances for solver/oracle comparisons."""

from __future__ import annotations

import numpy as np
import pytest

from ocrt import Cardinality, FeasibleSet


def random_box_set(rng: np.random.Generator, K: int, with_eq: bool = True) -> FeasibleSet:
    """Random bounded convex set, nonempty by construction.

    Every coordinate gets an explicit upper bound (so brute-force grids have
    derivable boxes) and optional equality rows pass through a grid-aligned
    witness point, which keeps the set nonempty and the optimum grid-exact.
    """
    witness = rng.integers(1, 10, K) / 10.0
    ub = witness + rng.integers(1, 4, K) / 10.0
    ineq = [(row, float(u)) for row, u in zip(np.eye(K), ub)]
    eq = []
    if with_eq and K >= 2:
        coeffs = np.zeros(K)
        i, j = rng.choice(K, size=2, replace=False)
        coeffs[i], coeffs[j] = 1.0, 1.0 if rng.random() < 0.5 else -1.0
        eq.append((coeffs, float(coeffs @ witness)))
    return FeasibleSet(K, eq=eq, ineq=ineq, nonneg=True)


def random_cardinality_set(rng: np.random.Generator, K: int = 4):
    """Uniform-sum cardinality set with grid-friendly parameters."""
    s = int(rng.integers(1, K))
    total = float(rng.integers(10, 50) * 0.02)
    big_m = float(rng.integers(max(1, int(np.ceil(total / s / 0.02))), 60) * 0.02)
    total = min(total, s * big_m)
    return FeasibleSet(
        K, eq=[(np.ones(K), total)], nonneg=True, cardinality=Cardinality(s, big_m)
    )


def random_rows(rng: np.random.Generator, m: int, K: int, lo=-0.5, hi=1.5) -> np.ndarray:
    return rng.uniform(lo, hi, size=(m, K))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
