"""Seeded generators for the synthetic, aggregate-demand, and end-to-end data.

Synthetic targets are sums of randomly parameterized elementary functions of
the features, projected row-wise onto the equality constraints only (so
nonnegativity can still be violated, a deliberate noise layer), then
perturbed with Gaussian noise.

The aggregate-demand ("hts") generator produces sparse rows that sum to a
fixed total with a bounded number of nonzeros. How features map to demand is
not pinned down by any external source; the construction here (support from
the top scores of a seeded linear map, mass from a softmax over those
scores) is a stand-in chosen so trees have learnable signal. Noisy variants
perturb every coordinate, breaking feasibility almost surely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Cardinality, Dataset, FeasibleSet, InfeasibleSetError
from .downstream import TwoGroupKnapsack
from .projection import project_capped_simplex, project_equalities

FUNCTION_POOL = ("sine", "cosine", "tangent", "linear", "polynomial")

# Features take one of 11 evenly spaced values on [0, 1].
_FEATURE_LEVELS = 11


@dataclass(frozen=True)
class SyntheticRecipe:
    n: int = 500
    p: int = 6
    K: int = 5
    seed: int = 0
    noise_sd: float = 0.05
    # parameter ranges for the random target functions (none are pinned by
    # any external source; all are plain configuration)
    weight_range: tuple[float, float] = (0.5, 2.0)
    linear_range: tuple[float, float] = (-1.0, 1.0)
    poly_degrees: tuple[int, ...] = (2, 3)
    poly_coef_range: tuple[float, float] = (-1.0, 1.0)
    trig_freq_range: tuple[float, float] = (1.0, 3.0)
    tan_input_scale: float = 1.2
    tan_clip: float = 10.0
    function_pool: tuple[str, ...] = FUNCTION_POOL

    def __post_init__(self) -> None:
        if self.n < 1 or self.p < 1 or self.K < 1:
            raise ValueError("need n >= 1, p >= 1, K >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")


@dataclass(frozen=True)
class HtsRecipe:
    big_m: float  # indicator bound; no default on purpose
    n: int = 500
    p: int = 6
    K: int = 13
    seed: int = 0
    total: float = 15.0
    max_support: int = 4
    noisy: bool = False
    noise_sd: float = 0.5

    def __post_init__(self) -> None:
        if self.n < 1 or self.p < 1 or self.K < 1:
            raise ValueError("need n >= 1, p >= 1, K >= 1")
        if not 1 <= self.max_support <= self.K:
            raise ValueError("max_support must lie in [1, K]")
        if self.total < 0 or self.noise_sd < 0:
            raise ValueError("total and noise_sd must be >= 0")
        if self.total > self.max_support * self.big_m:
            raise InfeasibleSetError("total exceeds max_support * big_m")


def build_synthetic_constraints(K: int) -> FeasibleSet:
    """Equality family over paired coordinates plus a fixed leading-half sum.

    With half = floor(K/2), coordinate pairs (k_j - 1, k_j) for
    k_j = half + 2j carry the gaps (j + 1)/10 while j stays in
    [0, floor((K - half)/2) - 1] (1-based coordinates); the first half sums
    to one; all coordinates are nonnegative. Small K can leave the pair
    family empty.
    """
    if K < 2:
        raise ValueError("need at least two targets")
    half = K // 2
    eq = []
    j_max = (K - half) // 2 - 1
    for j in range(0, j_max + 1):
        k_j = half + 2 * j
        a = np.zeros(K)
        a[k_j - 2] = 1.0
        a[k_j - 1] = -1.0
        eq.append((a, (j + 1) / 10.0))
    a_sum = np.zeros(K)
    a_sum[:half] = 1.0
    eq.append((a_sum, 1.0))
    return FeasibleSet(K, eq=eq, nonneg=True)


def _sample_features(rng: np.random.Generator, n: int, p: int) -> np.ndarray:
    return rng.integers(0, _FEATURE_LEVELS, size=(n, p)) / (_FEATURE_LEVELS - 1)


def _sample_term(rng: np.random.Generator, recipe: SyntheticRecipe, x: np.ndarray) -> np.ndarray:
    kind = recipe.function_pool[rng.integers(len(recipe.function_pool))]
    if kind == "sine":
        freq = rng.uniform(*recipe.trig_freq_range)
        return np.sin(2.0 * np.pi * freq * x)
    if kind == "cosine":
        freq = rng.uniform(*recipe.trig_freq_range)
        return np.cos(2.0 * np.pi * freq * x)
    if kind == "tangent":
        u = recipe.tan_input_scale * (2.0 * x - 1.0)
        return np.clip(np.tan(u), -recipe.tan_clip, recipe.tan_clip)
    if kind == "linear":
        slope = rng.uniform(*recipe.linear_range)
        intercept = rng.uniform(*recipe.linear_range)
        return slope * x + intercept
    if kind == "polynomial":
        degree = int(rng.choice(recipe.poly_degrees))
        coefs = rng.uniform(*recipe.poly_coef_range, size=degree + 1)
        return sum(c * x**i for i, c in enumerate(coefs))
    raise ValueError(f"unknown function kind {kind!r}")


def gen_synthetic(recipe: SyntheticRecipe) -> tuple[Dataset, FeasibleSet]:
    """Random functional targets, equality-projected, then noise-perturbed."""
    rng = np.random.default_rng(recipe.seed)
    x = _sample_features(rng, recipe.n, recipe.p)
    raw = np.zeros((recipe.n, recipe.K))
    for k in range(recipe.K):
        for j in range(recipe.p):
            w = rng.uniform(*recipe.weight_range)
            raw[:, k] += w * _sample_term(rng, recipe, x[:, j])
    fset = build_synthetic_constraints(recipe.K)
    y = project_equalities(raw, fset.A_eq, fset.b_eq)
    if recipe.noise_sd > 0:
        y = y + rng.normal(0.0, recipe.noise_sd, size=y.shape)
    return Dataset(x, y), fset


def build_hts_constraints(K: int, total: float, max_support: int, big_m: float) -> FeasibleSet:
    """Fixed aggregate sum with nonnegativity and a support limit.

    When the support limit is vacuous (max_support >= K) it simplifies to a
    convex set: the indicator bound reduces to plain per-coordinate upper
    bounds.
    """
    if not 1 <= max_support:
        raise ValueError("max_support must be >= 1")
    if big_m <= 0:
        raise ValueError("big_m must be positive")
    if total < 0 or total > min(max_support, K) * big_m:
        raise InfeasibleSetError("total unreachable under the support/bound limits")
    a_sum = np.ones(K)
    if max_support >= K:
        bounds = [(row, big_m) for row in np.eye(K)]
        return FeasibleSet(K, eq=[(a_sum, total)], ineq=bounds, nonneg=True)
    return FeasibleSet(
        K, eq=[(a_sum, total)], nonneg=True, cardinality=Cardinality(max_support, big_m)
    )


def gen_hts(recipe: HtsRecipe) -> tuple[Dataset, FeasibleSet]:
    """Sparse fixed-sum demand rows; the noisy variant breaks feasibility."""
    rng = np.random.default_rng(recipe.seed)
    x = _sample_features(rng, recipe.n, recipe.p)
    scores = x @ rng.normal(0.0, 1.0, size=(recipe.K, recipe.p)).T
    order = np.argsort(-scores, axis=1, kind="stable")[:, : recipe.max_support]
    chosen = np.take_along_axis(scores, order, axis=1)
    shifted = np.exp(chosen - chosen.max(axis=1, keepdims=True))
    mass = recipe.total * shifted / shifted.sum(axis=1, keepdims=True)
    mass = project_capped_simplex(mass, recipe.total, recipe.big_m)
    y = np.zeros((recipe.n, recipe.K))
    np.put_along_axis(y, order, mass, axis=1)
    if recipe.noisy:
        y = y + rng.normal(0.0, recipe.noise_sd, size=y.shape)
    fset = build_hts_constraints(recipe.K, recipe.total, recipe.max_support, recipe.big_m)
    return Dataset(x, y), fset


def gen_end_to_end(
    n: int = 500, p: int = 6, K: int = 5, seed: int = 0, noise_sd: float = 0.05
) -> tuple[Dataset, FeasibleSet, TwoGroupKnapsack]:
    """Synthetic profit vectors paired with the two-group knapsack downstream."""
    dataset, fset = gen_synthetic(SyntheticRecipe(n=n, p=p, K=K, seed=seed, noise_sd=noise_sd))
    return dataset, fset, TwoGroupKnapsack(K)
