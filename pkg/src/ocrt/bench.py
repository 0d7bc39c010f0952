"""Cross-validated benchmark harness and experiment presets.

Each experiment cell (dataset x method x depth x fold) trains one model and
reports test error, the relative error gap against the unconstrained
baseline, the rate of infeasible test predictions, and wall-clock training
time. Cells run in a process pool capped by OCRT_THREADS; results are merged
in sorted order so output bytes do not depend on scheduling. Gap aggregation
is per-fold relative gap, then an unweighted mean, recorded in the run
metadata. Reported MSE is conventional (squared error summed over targets,
averaged over rows).
"""

from __future__ import annotations

import json
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, FeasibleSet, Loss, check_feasibility
from .datagen import HtsRecipe, SyntheticRecipe, gen_end_to_end, gen_hts, gen_synthetic
from .downstream import regret_metrics
from .ensemble import FOREST_BASE, forest_predict_matrix, train_forest
from .tree import METHODS as TREE_METHODS
from .tree import TrainConfig, train_tree, tree_predict_matrix

BASELINE_METHOD = "cart"
ALL_METHODS = TREE_METHODS + tuple(FOREST_BASE)

CSV_COLUMNS = (
    "dataset",
    "method",
    "depth",
    "fold",
    "test_mse",
    "delta",
    "infeasibility_rate",
    "train_time_s",
    "regret",
    "squared_regret",
    "weighted_loss",
    "error",
)


class ConfigError(Exception):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    name: str
    datasets: list[dict]
    methods: list[str]
    depths: list[int]
    loss: dict = field(default_factory=lambda: {"kind": "mse"})
    min_samples_split: int = 10
    min_samples_leaf: int = 5
    n_trees: int = 20
    folds: int = 5
    fold_seed: int = 0
    node_time_budget: float = 120.0
    experiment: str = "cv"
    description: str = ""

    def __post_init__(self) -> None:
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; valid: {sorted(ALL_METHODS)}")
        if not self.datasets:
            raise ConfigError("at least one dataset is required")
        if self.experiment not in ("cv", "depth-tradeoff"):
            raise ConfigError("experiment must be 'cv' or 'depth-tradeoff'")

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentConfig":
        fields = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - fields
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class MetricsRow:
    dataset: str
    method: str
    depth: int
    fold: int
    test_mse: float | None = None
    delta: float | None = None
    infeasibility_rate: float | None = None
    train_time_s: float | None = None
    regret: float | None = None
    squared_regret: float | None = None
    weighted_loss: float | None = None
    error: str | None = None

    def to_csv_values(self) -> list[str]:
        out = []
        for col in CSV_COLUMNS:
            val = getattr(self, col)
            if val is None:
                out.append("")
            elif isinstance(val, float):
                out.append(repr(val))
            else:
                out.append(str(val))
        return out

    @classmethod
    def from_csv_values(cls, values: list[str]) -> "MetricsRow":
        kw: dict = dict(zip(CSV_COLUMNS, values))
        for key in ("depth", "fold"):
            kw[key] = int(kw[key])
        for key in (
            "test_mse", "delta", "infeasibility_rate", "train_time_s",
            "regret", "squared_regret", "weighted_loss",
        ):
            kw[key] = float(kw[key]) if kw[key] != "" else None
        if kw["error"] == "":
            kw["error"] = None
        return cls(**kw)


# ---------------------------------------------------------------------------
# Dataset materialization
# ---------------------------------------------------------------------------
_DATASET_CACHE: dict[str, tuple] = {}


def dataset_id(spec: dict) -> str:
    if "id" in spec:
        return str(spec["id"])
    kind = spec.get("kind")
    seed = spec.get("seed", 0)
    if kind == "synthetic":
        base = f"syn-n{spec.get('n', 500)}-K{spec.get('K', 5)}-p{spec.get('p', 6)}-s{seed}"
    elif kind == "hts":
        base = f"hts-n{spec.get('n', 500)}-K{spec.get('K', 13)}-s{seed}"
        if spec.get("noisy", False):
            base += "-noisy"
    elif kind == "end_to_end":
        base = f"e2e-n{spec.get('n', 500)}-K{spec.get('K', 5)}-s{seed}"
    elif kind == "files":
        base = Path(spec["data"]).stem
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    if "weight_seed" in spec:
        base += f"-w{spec['weight_seed']}"
    return base


def materialize_dataset(spec: dict):
    """(id, Dataset, FeasibleSet, knapsack-or-None) for a dataset spec dict."""
    key = json.dumps(spec, sort_keys=True)
    if key in _DATASET_CACHE:
        return _DATASET_CACHE[key]
    kind = spec.get("kind")
    knapsack = None
    if kind == "synthetic":
        recipe = SyntheticRecipe(
            n=spec.get("n", 500), p=spec.get("p", 6), K=spec.get("K", 5),
            seed=spec.get("seed", 0), noise_sd=spec.get("noise_sd", 0.05),
        )
        ds, fs = gen_synthetic(recipe)
    elif kind == "hts":
        recipe = HtsRecipe(
            big_m=spec["big_m"], n=spec.get("n", 500), p=spec.get("p", 6),
            K=spec.get("K", 13), seed=spec.get("seed", 0),
            total=spec.get("total", 15.0), max_support=spec.get("max_support", 4),
            noisy=spec.get("noisy", False), noise_sd=spec.get("noise_sd", 0.5),
        )
        ds, fs = gen_hts(recipe)
    elif kind == "end_to_end":
        ds, fs, knapsack = gen_end_to_end(
            n=spec.get("n", 500), p=spec.get("p", 6), K=spec.get("K", 5),
            seed=spec.get("seed", 0), noise_sd=spec.get("noise_sd", 0.05),
        )
    elif kind == "files":
        ds = Dataset.from_csv(spec["data"])
        fs = FeasibleSet.load(spec["constraints"])
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    value = (dataset_id(spec), ds, fs, knapsack)
    _DATASET_CACHE[key] = value
    return value


def _build_loss(loss_spec: dict, spec: dict, n_targets: int, knapsack) -> Loss:
    kind = loss_spec.get("kind", "mse")
    if kind == "weighted":
        seed = spec.get("weight_seed", loss_spec.get("weight_seed", 0))
        weights = np.random.default_rng([int(seed), 1913]).uniform(0.5, 2.0, n_targets)
        return Loss.weighted_linear(weights)
    if kind == "regret":
        if knapsack is None:
            raise ConfigError("regret loss requires an end_to_end dataset")
        return Loss.downstream_regret(knapsack)
    return Loss(kind)


def fold_assignment(n: int, folds: int, fold_seed: int, ds_id: str) -> np.ndarray:
    """Deterministic fold label per row, seeded by run seed and dataset id."""
    rng = np.random.default_rng([fold_seed, zlib.crc32(ds_id.encode())])
    labels = np.empty(n, dtype=int)
    for f, chunk in enumerate(np.array_split(rng.permutation(n), folds)):
        labels[chunk] = f
    return labels


def _cell_seed(ds_id: str, method: str, depth: int, fold: int) -> int:
    return zlib.crc32(f"{ds_id}|{method}|{depth}|{fold}".encode())


def _run_cell(payload: dict) -> dict:
    """Train and evaluate a single experiment cell; errors become row data."""
    spec = payload["dataset"]
    method = payload["method"]
    depth = payload["depth"]
    fold = payload["fold"]
    row = {"dataset": None, "method": method, "depth": depth, "fold": fold}
    try:
        ds_id, ds, fs, knapsack = materialize_dataset(spec)
        row["dataset"] = ds_id
        labels = fold_assignment(ds.n, payload["folds"], payload["fold_seed"], ds_id)
        test_mask = labels == fold
        train_ds = ds.subset(np.flatnonzero(~test_mask))
        x_test = ds.features[test_mask]
        y_test = ds.targets[test_mask]
        loss = _build_loss(payload["loss"], spec, ds.n_targets, knapsack)
        seed = _cell_seed(ds_id, method, depth, fold)
        config = TrainConfig(
            method=FOREST_BASE.get(method, method),
            max_depth=depth,
            min_samples_split=payload["min_samples_split"],
            min_samples_leaf=payload["min_samples_leaf"],
            loss=loss,
            feasible_set=fs,
            rng_seed=seed,
            node_time_budget=payload["node_time_budget"],
        )
        start = time.perf_counter()
        if method in FOREST_BASE:
            model = train_forest(train_ds, config, n_trees=payload["n_trees"], rng_seed=seed)
            predict = forest_predict_matrix
        else:
            model = train_tree(train_ds, config)
            predict = tree_predict_matrix
        row["train_time_s"] = time.perf_counter() - start

        preds = predict(model, x_test)
        row["test_mse"] = float(np.mean(np.sum((preds - y_test) ** 2, axis=1)))
        feas = [check_feasibility(pred, fs).feasible for pred in preds]
        row["infeasibility_rate"] = float(1.0 - np.mean(feas))
        if knapsack is not None:
            q_true = np.array([knapsack.solve(r) for r in y_test])
            gaps = np.empty(len(y_test))
            sq = np.empty(len(y_test))
            for i, pred in enumerate(preds):
                snapped = np.where(np.abs(pred) < 1e-9, 0.0, pred)
                gaps[i], sq[i] = regret_metrics(
                    y_test[i : i + 1], q_true[i : i + 1], knapsack.solve(snapped)
                )
            row["regret"] = float(np.mean(gaps))
            row["squared_regret"] = float(np.mean(sq))
        if loss.kind == "weighted":
            w = loss.weights
            row["weighted_loss"] = float(np.mean((y_test @ w - preds @ w) ** 2))
    except Exception as exc:  # noqa: BLE001 - per-row error capture, run continues
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _fill_deltas(rows: list[MetricsRow]) -> None:
    baseline = {
        (r.dataset, r.depth, r.fold): r.test_mse
        for r in rows
        if r.method == BASELINE_METHOD and r.error is None and r.test_mse
    }
    for r in rows:
        base = baseline.get((r.dataset, r.depth, r.fold))
        if base and r.error is None and r.test_mse is not None:
            r.delta = (r.test_mse - base) / base


def _max_workers(n_cells: int) -> int:
    env = os.environ.get("OCRT_THREADS")
    if env:
        try:
            cap = max(1, int(env))
        except ValueError as exc:
            raise ConfigError("OCRT_THREADS must be an integer") from exc
    else:
        cap = min(os.cpu_count() or 1, 8)
    return max(1, min(cap, n_cells))


def run_cv_benchmark(
    config: ExperimentConfig,
    out_csv: str | Path | None = None,
    figures: bool = True,
    workers: int | None = None,
) -> list[MetricsRow]:
    """Run every (dataset, method, depth, fold) cell and collect metric rows."""
    payload_base = {
        "folds": config.folds,
        "fold_seed": config.fold_seed,
        "loss": config.loss,
        "min_samples_split": config.min_samples_split,
        "min_samples_leaf": config.min_samples_leaf,
        "n_trees": config.n_trees,
        "node_time_budget": config.node_time_budget,
    }
    cells = [
        dict(payload_base, dataset=spec, method=method, depth=depth, fold=fold)
        for spec in config.datasets
        for method in config.methods
        for depth in config.depths
        for fold in range(config.folds)
    ]
    n_workers = workers or _max_workers(len(cells))
    if n_workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            raw = list(pool.map(_run_cell, cells, chunksize=1))
    else:
        raw = [_run_cell(cell) for cell in cells]

    rows = [MetricsRow(**r) for r in raw]
    rows.sort(key=lambda r: (r.dataset or "", r.method, r.depth, r.fold))
    _fill_deltas(rows)

    if out_csv is not None:
        write_metrics_csv(rows, out_csv)
        _write_meta(config, out_csv)
        if figures:
            from .report import render_benchmark_figures

            render_benchmark_figures(rows, Path(out_csv))
    return rows


def write_metrics_csv(rows: list[MetricsRow], path: str | Path) -> None:
    import csv as _csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.to_csv_values())


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ConfigError("unexpected metrics CSV schema")
        return [MetricsRow.from_csv_values(vals) for vals in reader]


def _write_meta(config: ExperimentConfig, out_csv: str | Path) -> None:
    assignments = {}
    for spec in config.datasets:
        ds_id, ds, _, _ = materialize_dataset(spec)
        assignments[ds_id] = fold_assignment(
            ds.n, config.folds, config.fold_seed, ds_id
        ).tolist()
    meta = {
        "config": config.to_json_dict(),
        "delta_aggregation": (
            "per-fold relative gap (mse_method - mse_cart) / mse_cart; summary "
            "statistics are unweighted means over folds and datasets"
        ),
        "mse_convention": "squared error summed over targets, averaged over rows",
        "timing_note": (
            "train_time_s covers model training only and is excluded from "
            "determinism comparisons"
        ),
        "fold_assignments": assignments,
    }
    Path(str(out_csv) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def summarize_mean(rows: list[MetricsRow], attr: str) -> dict[str, float]:
    """Unweighted mean of one metric per method, skipping error rows/blanks."""
    acc: dict[str, list[float]] = {}
    for r in rows:
        val = getattr(r, attr)
        if r.error is None and val is not None:
            acc.setdefault(r.method, []).append(val)
    return {m: float(np.mean(v)) for m, v in acc.items()}


def depth_tradeoff_experiment(
    n: int = 4000,
    K: int = 5,
    p: int = 6,
    seed: int = 0,
    depths: range | list[int] = range(1, 13),
    noise_sd: float = 0.05,
    test_fraction: float = 0.25,
    out_csv: str | Path | None = None,
    figures: bool = True,
):
    """Unconstrained-tree accuracy/feasibility trade-off across depths.

    Returns (rows, best_depth) where each row carries depth, test_mse, and
    infeasible_pct, and best_depth minimizes test MSE.
    """
    ds, fs = gen_synthetic(SyntheticRecipe(n=n, p=p, K=K, seed=seed, noise_sd=noise_sd))
    rng = np.random.default_rng([seed, 7])
    perm = rng.permutation(ds.n)
    n_test = max(1, int(round(test_fraction * ds.n)))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    train_ds = ds.subset(train_idx)
    x_test, y_test = ds.features[test_idx], ds.targets[test_idx]

    rows = []
    for depth in depths:
        config = TrainConfig(method="cart", max_depth=int(depth), rng_seed=seed)
        tree = train_tree(train_ds, config)
        preds = tree_predict_matrix(tree, x_test)
        mse = float(np.mean(np.sum((preds - y_test) ** 2, axis=1)))
        feas = [check_feasibility(pred, fs).feasible for pred in preds]
        rows.append(
            {
                "depth": int(depth),
                "test_mse": mse,
                "infeasible_pct": float(100.0 * (1.0 - np.mean(feas))),
            }
        )
    best_depth = min(rows, key=lambda r: r["test_mse"])["depth"]

    if out_csv is not None:
        import csv as _csv

        path = Path(out_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["depth", "test_mse", "infeasible_pct"])
            for row in rows:
                writer.writerow([row["depth"], repr(row["test_mse"]), repr(row["infeasible_pct"])])
        if figures:
            from .report import render_depth_tradeoff_figure

            render_depth_tradeoff_figure(rows, best_depth, path.with_suffix(".png"))
    return rows, best_depth


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------
PRESET_NAMES = (
    "synthetic-grid",
    "synthetic-large",
    "hts",
    "generalized-loss",
    "end-to-end",
    "depth-tradeoff",
)

# Indicator bound used by the aggregate-demand presets. Any value at least
# the fixed total leaves the bound slack; it is configuration, not a claim.
HTS_PRESET_BIG_M = 15.0


def preset(name: str) -> ExperimentConfig:
    """Named experiment configurations for the standard study layouts."""
    if name == "synthetic-grid":
        datasets = [
            {"kind": "synthetic", "n": n, "K": k, "p": 6, "seed": s}
            for n in (500, 1000, 2000)
            for k in (5, 9)
            for s in (0, 1, 2)
        ]
        return ExperimentConfig(
            name=name,
            datasets=datasets,
            methods=["cart", "ep_ocrt", "e_ocrt", "m_ocrt", "ep_rf", "e_rf"],
            depths=[5, 7],
            description="3 seeds x sizes {500,1000,2000} x targets {5,9}, 18 datasets",
        )
    if name == "synthetic-large":
        datasets = [
            {"kind": "synthetic", "n": n, "K": 5, "p": 6, "seed": s}
            for n in (1000, 2000, 4000)
            for s in (0, 1, 2)
        ] + [
            {"kind": "synthetic", "n": 1000, "K": 5, "p": p, "seed": s}
            for p in (9, 12)
            for s in (0, 1, 2)
        ]
        return ExperimentConfig(
            name=name,
            datasets=datasets,
            methods=["cart", "ep_ocrt", "e_ocrt", "ep_rf", "e_rf"],
            depths=[5, 7],
            description=(
                "scaling study over sizes and feature counts; desk-scale "
                "variant caps n at 4000 (full-scale runs used n up to 10000)"
            ),
        )
    if name == "hts":
        datasets = [
            {
                "kind": "hts", "n": 500, "K": 13, "p": 6, "seed": s,
                "total": 15.0, "max_support": 4, "big_m": HTS_PRESET_BIG_M,
                "noisy": noisy,
            }
            for s in range(5)
            for noisy in (False, True)
        ]
        return ExperimentConfig(
            name=name,
            datasets=datasets,
            methods=["cart", "ep_ocrt", "e_ocrt"],
            depths=[5, 7],
            description="5 aggregate-demand datasets, noise-free and noisy variants",
        )
    if name == "generalized-loss":
        datasets = [
            {"kind": "synthetic", "n": 500, "K": 5, "p": 6, "seed": s, "weight_seed": w}
            for s in (0, 1, 2)
            for w in (0, 1, 2)
        ]
        return ExperimentConfig(
            name=name,
            datasets=datasets,
            methods=["cart", "ep_ocrt", "e_ocrt"],
            depths=[5],
            loss={"kind": "weighted"},
            description="weighted-linear loss, 3 data seeds x 3 weight vectors",
        )
    if name == "end-to-end":
        datasets = [
            {"kind": "end_to_end", "n": 500, "K": 5, "p": 6, "seed": s} for s in (0, 1, 2)
        ]
        return ExperimentConfig(
            name=name,
            datasets=datasets,
            methods=["cart", "ep_ocrt", "e_ocrt"],
            depths=[5, 7],
            loss={"kind": "regret"},
            description="two-group knapsack downstream; cart rows are the two-stage baseline",
        )
    if name == "depth-tradeoff":
        return ExperimentConfig(
            name=name,
            datasets=[{"kind": "synthetic", "n": 4000, "K": 5, "p": 6, "seed": 0}],
            methods=["cart"],
            depths=list(range(1, 13)),
            experiment="depth-tradeoff",
            description="accuracy/feasibility trade-off of unconstrained trees, n=4000",
        )
    raise ConfigError(f"unknown preset {name!r}; valid names: {', '.join(PRESET_NAMES)}")
