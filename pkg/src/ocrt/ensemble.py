"""Random forests over any tree method, aggregated by convex combination.

Averaging feasible leaf predictions stays feasible exactly when the feasible
set is convex; on non-convex sets (cardinality restrictions) the averaged
support can exceed the limit, so training logs a warning and benchmark runs
report the realized infeasibility rate instead of assuming zero.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .tree import Tree, train_tree, TrainConfig, tree_from_dict, tree_predict, tree_predict_matrix, tree_to_dict

logger = logging.getLogger(__name__)

FOREST_BASE = {"e_rf": "e_ocrt", "ep_rf": "ep_ocrt", "m_rf": "m_ocrt"}


@dataclass(eq=False)
class Forest:
    trees: list[Tree]
    weights: np.ndarray
    base_method: str
    bootstrap_seeds: tuple[int, ...]

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.trees):
            raise ValueError("one weight per tree required")
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to one")
        self.weights = w


def train_forest(
    dataset: Dataset,
    config: TrainConfig,
    n_trees: int = 20,
    rng_seed: int = 0,
    bootstrap: bool = True,
) -> Forest:
    """Bag n_trees trees on bootstrap resamples with per-split feature subsets.

    Feature subsets default to ceil(p/3) per split. The m_ocrt base method is
    an alias for e_ocrt here (identical trees, so it is not trained
    separately). Deterministic for a fixed rng_seed.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    method = config.method
    if method == "m_ocrt":
        logger.info("m_ocrt forest base aliases e_ocrt (identical trees)")
        method = "e_ocrt"
    if (
        config.feasible_set is not None
        and not config.feasible_set.is_convex
        and method != "cart"
    ):
        logger.warning(
            "feasible set is not convex: averaged forest predictions are not "
            "guaranteed feasible"
        )
    subsample = config.feature_subsample or max(1, math.ceil(dataset.p / 3))
    rng = np.random.default_rng(rng_seed)
    seed_pairs = rng.integers(0, 2**31 - 1, size=(n_trees, 2))
    trees: list[Tree] = []
    boot_seeds: list[int] = []
    for boot_seed, tree_seed in seed_pairs:
        boot_seeds.append(int(boot_seed))
        if bootstrap:
            idx = np.random.default_rng(int(boot_seed)).integers(0, dataset.n, dataset.n)
        else:
            idx = np.arange(dataset.n)
        tree_config = replace(
            config,
            method=method,
            feature_subsample=subsample,
            rng_seed=int(tree_seed),
        )
        trees.append(train_tree(dataset.subset(idx), tree_config))
    weights = np.full(n_trees, 1.0 / n_trees)
    return Forest(trees, weights, method, tuple(boot_seeds))


def forest_predict(forest: Forest, x: np.ndarray) -> np.ndarray:
    preds = [w * tree_predict(t, x) for t, w in zip(forest.trees, forest.weights)]
    return np.sum(preds, axis=0)


def forest_predict_matrix(forest: Forest, x: np.ndarray) -> np.ndarray:
    out = None
    for t, w in zip(forest.trees, forest.weights):
        block = w * tree_predict_matrix(t, x)
        out = block if out is None else out + block
    return out


def forest_to_dict(forest: Forest) -> dict:
    return {
        "kind": "forest",
        "base_method": forest.base_method,
        "weights": [float(w) for w in forest.weights],
        "bootstrap_seeds": list(forest.bootstrap_seeds),
        "trees": [tree_to_dict(t) for t in forest.trees],
    }


def forest_from_dict(doc: dict) -> Forest:
    return Forest(
        [tree_from_dict(t) for t in doc["trees"]],
        np.asarray(doc["weights"], dtype=float),
        str(doc["base_method"]),
        tuple(int(s) for s in doc["bootstrap_seeds"]),
    )


def forest_to_json(forest: Forest) -> str:
    return json.dumps(forest_to_dict(forest), sort_keys=True)


def forest_from_json(text: str) -> Forest:
    return forest_from_dict(json.loads(text))
