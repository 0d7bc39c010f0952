"""Binary multi-target regression trees grown by recursive partitioning.

Four training methods share one enumeration engine:

  cart     unconstrained splits and leaf means (baseline)
  e_ocrt   exhaustive split search with constrained predictions at every
           candidate split
  m_ocrt   per-node exact split optimization; the one-hot feature choice and
           the finitely many thresholds per feature let plain enumeration
           with constrained predictions solve each node problem to global
           optimality, so it shares the e_ocrt engine (restricted to
           average-form losses)
  ep_ocrt  unconstrained growth followed by a constrained repair of every
           leaf prediction

Split convention: rows with x_j < v go left, x_j >= v go right. Candidate
thresholds are midpoints of consecutive distinct sorted feature values. A
split is accepted only when it strictly reduces the node's weighted loss.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import (
    Dataset,
    FeasibleSet,
    Loss,
    UnsupportedError,
    loss_eval,
)
from .prediction import (
    _cardinality_best_vector,
    predict_constrained,
    predict_unconstrained,
)
from .projection import project_polyhedron

METHODS = ("cart", "e_ocrt", "m_ocrt", "ep_ocrt")
CONSTRAINED_METHODS = ("e_ocrt", "m_ocrt")

# A split must beat the parent loss by more than this slack to be accepted.
_GAIN_SLACK = 1e-12


class SplitRejectedError(Exception):
    """A candidate split violates the minimum leaf size."""


@dataclass
class TrainConfig:
    method: str = "cart"
    max_depth: int = 5
    min_samples_split: int = 10
    min_samples_leaf: int = 5
    loss: Loss = field(default_factory=Loss.mse)
    feasible_set: FeasibleSet | None = None
    feature_subsample: int | None = None
    rng_seed: int = 0
    node_time_budget: float | None = 120.0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_samples_split < 2 * self.min_samples_leaf:
            raise ValueError("min_samples_split must be at least twice min_samples_leaf")
        if self.method != "cart" and self.feasible_set is None:
            raise ValueError(f"method {self.method!r} requires a feasible_set")
        if self.method == "m_ocrt" and self.loss.kind not in ("mse", "mad"):
            raise ValueError("node-exact optimization is defined for mse or mad")
        if self.feature_subsample is not None and self.feature_subsample < 1:
            raise ValueError("feature_subsample must be >= 1")


@dataclass(eq=False)
class SplitDecision:
    feature: int
    threshold: float
    left_indices: np.ndarray
    right_indices: np.ndarray
    left_pred: np.ndarray
    right_pred: np.ndarray
    weighted_loss: float
    left_loss: float
    right_loss: float


@dataclass(eq=False)
class Leaf:
    prediction: np.ndarray
    n_samples: int
    train_loss: float
    indices: np.ndarray | None = None


@dataclass(eq=False)
class Branch:
    feature: int
    threshold: float
    left: "Branch | Leaf"
    right: "Branch | Leaf"
    train_loss: float | None = None
    n_samples: int | None = None


@dataclass(eq=False)
class Tree:
    root: Branch | Leaf
    n_features: int
    n_targets: int
    method: str
    deadline_hits: int = 0


def _growth_loss(config: TrainConfig) -> Loss:
    """Loss driving tree growth.

    Constrained methods optimize the configured loss throughout; baseline
    growth (cart, and the ep_ocrt tree before its repair pass) uses plain
    squared error whenever the configured loss has no unconstrained
    prediction written in closed form.
    """
    if config.method in CONSTRAINED_METHODS:
        return config.loss
    if config.loss.kind in ("mse", "mad", "poisson"):
        return config.loss
    return Loss.mse()


def _make_predictor(config: TrainConfig, loss: Loss) -> Callable[[np.ndarray], np.ndarray]:
    if config.method in CONSTRAINED_METHODS:
        fset = config.feasible_set
        return lambda rows: predict_constrained(rows, fset, loss).yhat
    return lambda rows: predict_unconstrained(rows, loss)


def _mean_solver(config: TrainConfig, loss: Loss):
    """Mean-to-prediction map for the squared loss, or None when inapplicable.

    Under squared error the optimal constrained prediction depends on the
    subset only through its mean, so split enumeration can run on prefix
    means with one solve per candidate.
    """
    if loss.kind != "mse":
        return None
    if config.method not in CONSTRAINED_METHODS:
        return lambda mu: mu
    fset = config.feasible_set
    if fset.cardinality is not None:
        return lambda mu: _cardinality_best_vector(mu, fset)[0]
    return lambda mu: project_polyhedron(mu, fset).yhat


def split_gain(
    features: np.ndarray,
    targets: np.ndarray,
    row_indices: np.ndarray,
    feature: int,
    threshold: float,
    predictor: Callable[[np.ndarray], np.ndarray],
    loss: Loss,
    min_samples_leaf: int = 1,
) -> SplitDecision:
    """Evaluate one candidate split: size-weighted sum of child mean losses."""
    row_indices = np.asarray(row_indices)
    vals = features[row_indices, feature]
    left = row_indices[vals < threshold]
    right = row_indices[vals >= threshold]
    if len(left) < min_samples_leaf or len(right) < min_samples_leaf:
        raise SplitRejectedError(
            f"split on feature {feature} at {threshold} leaves an undersized child"
        )
    left_pred = predictor(targets[left])
    right_pred = predictor(targets[right])
    left_loss = loss_eval(loss, left_pred, targets[left])
    right_loss = loss_eval(loss, right_pred, targets[right])
    m = len(row_indices)
    weighted = (len(left) * left_loss + len(right) * right_loss) / m
    return SplitDecision(
        feature, float(threshold), left, right, left_pred, right_pred,
        float(weighted), float(left_loss), float(right_loss),
    )


def _candidate_boundaries(sorted_vals: np.ndarray, min_leaf: int):
    m = len(sorted_vals)
    lo, hi = min_leaf - 1, m - min_leaf - 1
    if hi < lo:
        return ()
    positions = np.arange(lo, hi + 1)
    return positions[sorted_vals[positions] < sorted_vals[positions + 1]]


def best_split_exhaustive(
    features: np.ndarray,
    targets: np.ndarray,
    row_indices: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator | None = None,
    deadline: float | None = None,
    counters: dict | None = None,
) -> SplitDecision | None:
    """Minimum weighted-loss split over all feature/threshold candidates.

    Ties break toward the lowest feature index, then the lowest threshold.
    Returns None when no admissible candidate exists. When the node deadline
    passes mid-enumeration the best split found so far is returned and the
    event is counted.
    """
    row_indices = np.asarray(row_indices)
    m = len(row_indices)
    if m < config.min_samples_split:
        return None
    p = features.shape[1]
    if config.feature_subsample is not None and config.feature_subsample < p:
        if rng is None:
            rng = np.random.default_rng(config.rng_seed)
        feats = np.sort(rng.choice(p, size=config.feature_subsample, replace=False))
    else:
        feats = np.arange(p)

    loss = _growth_loss(config)
    mean_solver = _mean_solver(config, loss)
    min_leaf = config.min_samples_leaf

    best: tuple[float, int, float] | None = None
    best_payload = None
    timed_out = False
    memo: dict[bytes, np.ndarray] = {}

    def solve_mean(mu: np.ndarray) -> np.ndarray:
        key = mu.tobytes()
        hit = memo.get(key)
        if hit is None:
            hit = mean_solver(mu)
            memo[key] = hit
        return hit

    for j in feats:
        x = features[row_indices, j]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        boundaries = _candidate_boundaries(xs, min_leaf)
        if not len(boundaries):
            continue

        if mean_solver is not None:
            ys = targets[row_indices[order]]
            pref = np.cumsum(ys, axis=0)
            pref_sq = np.cumsum(np.sum(ys**2, axis=1))
            tot_sum, tot_sq = pref[-1], pref_sq[-1]
            for t in boundaries:
                if deadline is not None and time.monotonic() > deadline:
                    timed_out = True
                    break
                ml = int(t) + 1
                mr = m - ml
                mu_l = pref[t] / ml
                mu_r = (tot_sum - pref[t]) / mr
                sse_l = max(pref_sq[t] - ml * float(mu_l @ mu_l), 0.0)
                sse_r = max(tot_sq - pref_sq[t] - mr * float(mu_r @ mu_r), 0.0)
                y_l = solve_mean(mu_l)
                y_r = solve_mean(mu_r)
                err = sse_l + ml * float(np.sum((y_l - mu_l) ** 2))
                err += sse_r + mr * float(np.sum((y_r - mu_r) ** 2))
                f_val = err / (2.0 * m)
                if best is None or f_val < best[0]:
                    v = 0.5 * (xs[t] + xs[t + 1])
                    best = (f_val, int(j), float(v))
                    best_payload = None
        else:
            predictor = _make_predictor(config, loss)
            for t in boundaries:
                if deadline is not None and time.monotonic() > deadline:
                    timed_out = True
                    break
                v = 0.5 * (xs[t] + xs[t + 1])
                try:
                    dec = split_gain(
                        features, targets, row_indices, int(j), float(v),
                        predictor, loss, min_leaf,
                    )
                except SplitRejectedError:
                    continue
                if best is None or dec.weighted_loss < best[0]:
                    best = (dec.weighted_loss, int(j), float(v))
                    best_payload = dec
        if timed_out:
            break

    if timed_out and counters is not None:
        counters["deadline_hits"] = counters.get("deadline_hits", 0) + 1
    if best is None:
        return None
    if best_payload is not None:
        return best_payload
    predictor = _make_predictor(config, loss)
    return split_gain(
        features, targets, row_indices, best[1], best[2], predictor, loss, min_leaf
    )


def solve_split_mip_exact(
    features: np.ndarray,
    targets: np.ndarray,
    row_indices: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator | None = None,
    deadline: float | None = None,
    counters: dict | None = None,
) -> SplitDecision | None:
    """Exact single-depth node optimization with constrained predictions.

    The node problem picks one feature (a one-hot choice), one threshold
    (finitely many distinct values per feature), and feasible child
    predictions minimizing the total loss, subject to a minimum child size.
    Enumerating feature/threshold pairs with an optimal constrained
    prediction per side visits every vertex of that search space, so the
    enumeration result is a global optimum of the node problem. Restricted
    to average-form losses, where the objective matches the weighted gain.
    """
    if config.loss.kind not in ("mse", "mad"):
        raise UnsupportedError("exact node optimization is defined for mse or mad")
    if config.method not in CONSTRAINED_METHODS:
        raise UnsupportedError("exact node optimization runs with constrained predictions")
    return best_split_exhaustive(
        features, targets, row_indices, config, rng=rng, deadline=deadline, counters=counters
    )


def grow_tree(dataset: Dataset, config: TrainConfig) -> Tree:
    """Grow one tree by recursive partitioning under the configured method."""
    features, targets = dataset.features, dataset.targets
    loss = _growth_loss(config)
    predictor = _make_predictor(config, loss)
    rng = np.random.default_rng(config.rng_seed)
    counters = {"deadline_hits": 0}
    searcher = solve_split_mip_exact if config.method == "m_ocrt" else best_split_exhaustive

    def build(rows: np.ndarray, depth: int, pred=None, node_loss=None):
        if pred is None:
            pred = predictor(targets[rows])
            node_loss = loss_eval(loss, pred, targets[rows])
        if depth >= config.max_depth or len(rows) < config.min_samples_split:
            return Leaf(pred, len(rows), node_loss, rows)
        deadline = (
            time.monotonic() + config.node_time_budget
            if config.node_time_budget is not None
            else None
        )
        dec = searcher(
            features, targets, rows, config, rng=rng, deadline=deadline, counters=counters
        )
        if dec is None or not (dec.weighted_loss < node_loss - _GAIN_SLACK):
            return Leaf(pred, len(rows), node_loss, rows)
        left = build(dec.left_indices, depth + 1, dec.left_pred, dec.left_loss)
        right = build(dec.right_indices, depth + 1, dec.right_pred, dec.right_loss)
        return Branch(dec.feature, dec.threshold, left, right, node_loss, len(rows))

    root = build(np.arange(dataset.n), 0)
    return Tree(root, dataset.p, dataset.n_targets, config.method, counters["deadline_hits"])


def postprocess_leaves(tree: Tree, dataset: Dataset, fset: FeasibleSet, loss: Loss) -> Tree:
    """Replace every leaf prediction by its constrained optimum; structure kept."""

    def walk(node):
        if isinstance(node, Leaf):
            if node.indices is None:
                raise ValueError("leaf sample indices were not retained")
            rows = dataset.targets[node.indices]
            res = predict_constrained(rows, fset, loss)
            return Leaf(res.yhat, node.n_samples, res.objective, node.indices)
        return Branch(
            node.feature, node.threshold, walk(node.left), walk(node.right),
            node.train_loss, node.n_samples,
        )

    return Tree(walk(tree.root), tree.n_features, tree.n_targets, tree.method, tree.deadline_hits)


def train_tree(dataset: Dataset, config: TrainConfig) -> Tree:
    """Train a tree; ep_ocrt grows unconstrained and repairs leaves afterwards."""
    if config.method == "ep_ocrt":
        grown = grow_tree(dataset, replace(config, method="cart"))
        repaired = postprocess_leaves(grown, dataset, config.feasible_set, config.loss)
        repaired.method = "ep_ocrt"
        return repaired
    return grow_tree(dataset, config)


def tree_predict(tree: Tree, x: np.ndarray) -> np.ndarray:
    """Route a single input to its leaf; ties at the threshold go right."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != tree.n_features:
        raise ValueError(f"expected {tree.n_features} features, got {x.shape[0]}")
    node = tree.root
    while isinstance(node, Branch):
        node = node.left if x[node.feature] < node.threshold else node.right
    return node.prediction


def tree_predict_matrix(tree: Tree, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != tree.n_features:
        raise ValueError(f"expected {tree.n_features} features, got {x.shape[1]}")
    out = np.empty((x.shape[0], tree.n_targets))

    def fill(node, idx):
        if isinstance(node, Leaf):
            out[idx] = node.prediction
            return
        mask = x[idx, node.feature] < node.threshold
        fill(node.left, idx[mask])
        fill(node.right, idx[~mask])

    fill(tree.root, np.arange(x.shape[0]))
    return out


def iter_leaves(tree: Tree):
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if isinstance(node, Leaf):
            yield node
        else:
            stack.append(node.right)
            stack.append(node.left)


def _node_to_dict(node) -> dict:
    if isinstance(node, Leaf):
        return {
            "leaf": {
                "pred": [float(v) for v in node.prediction],
                "n": int(node.n_samples),
                "loss": float(node.train_loss),
            }
        }
    return {
        "branch": {
            "j": int(node.feature),
            "v": float(node.threshold),
            "left": _node_to_dict(node.left),
            "right": _node_to_dict(node.right),
        }
    }


def _node_from_dict(doc: dict):
    if "leaf" in doc:
        leaf = doc["leaf"]
        return Leaf(np.asarray(leaf["pred"], dtype=float), int(leaf["n"]), float(leaf["loss"]))
    br = doc["branch"]
    return Branch(int(br["j"]), float(br["v"]), _node_from_dict(br["left"]), _node_from_dict(br["right"]))


def tree_to_dict(tree: Tree) -> dict:
    return {
        "kind": "tree",
        "method": tree.method,
        "n_features": tree.n_features,
        "n_targets": tree.n_targets,
        "deadline_hits": tree.deadline_hits,
        "node": _node_to_dict(tree.root),
    }


def tree_from_dict(doc: dict) -> Tree:
    return Tree(
        _node_from_dict(doc["node"]),
        int(doc["n_features"]),
        int(doc["n_targets"]),
        str(doc["method"]),
        int(doc.get("deadline_hits", 0)),
    )


def tree_to_json(tree: Tree) -> str:
    return json.dumps(tree_to_dict(tree), sort_keys=True)


def tree_from_json(text: str) -> Tree:
    return tree_from_dict(json.loads(text))
