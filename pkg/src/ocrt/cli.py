"""Command-line interface.

Subcommands:
  generate  write a dataset CSV, constraint JSON, and recipe sidecar
  train     fit a tree or forest and save it as JSON
  predict   apply a saved model to a dataset CSV
  check     audit every leaf prediction of a saved model for feasibility
  bench     run an experiment preset or config; writes metrics CSV,
            run metadata, and summary figures

Exit codes: 0 success, 2 infeasible constraint system (or failed feasibility
audit), 3 configuration error. OCRT_THREADS caps the benchmark work pool.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .bench import (
    ConfigError,
    ExperimentConfig,
    PRESET_NAMES,
    depth_tradeoff_experiment,
    materialize_dataset,
    preset,
    run_cv_benchmark,
)
from .data import Dataset, FeasibleSet, InfeasibleSetError, Loss, UnsupportedError, check_feasibility
from .ensemble import (
    FOREST_BASE,
    forest_from_dict,
    forest_predict_matrix,
    forest_to_dict,
    train_forest,
)
from .tree import METHODS as TREE_METHODS
from .tree import TrainConfig, iter_leaves, train_tree, tree_from_dict, tree_predict_matrix, tree_to_dict

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - config errors exit with code 3
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _cmd_generate(args) -> int:
    spec = json.loads(Path(args.recipe).read_text())
    ds_id, ds, fs, _ = materialize_dataset(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds.to_csv(out / "data.csv")
    fs.save(out / "constraints.json")
    (out / "recipe.json").write_text(json.dumps(spec, indent=2, sort_keys=True))
    print(f"wrote {ds_id}: {ds.n} rows, {ds.p} features, {ds.n_targets} targets -> {out}")
    return EXIT_OK


def _load_model(path: str):
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") == "forest":
        return forest_from_dict(doc), forest_predict_matrix
    return tree_from_dict(doc), tree_predict_matrix


def _cmd_train(args) -> int:
    ds = Dataset.from_csv(args.data)
    fs = FeasibleSet.load(args.constraints) if args.constraints else None
    loss = Loss(args.loss)
    config = TrainConfig(
        method=FOREST_BASE.get(args.method, args.method),
        max_depth=args.depth,
        min_samples_split=args.min_samples_split,
        min_samples_leaf=args.min_samples_leaf,
        loss=loss,
        feasible_set=fs,
        rng_seed=args.seed,
        node_time_budget=args.node_time_budget,
    )
    if args.method in FOREST_BASE:
        model = train_forest(ds, config, n_trees=args.n_trees, rng_seed=args.seed)
        doc = forest_to_dict(model)
    else:
        model = train_tree(ds, config)
        doc = tree_to_dict(model)
    Path(args.out).write_text(json.dumps(doc, sort_keys=True))
    print(f"trained {args.method} on {ds.n} rows -> {args.out}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    model, predict = _load_model(args.model)
    ds = Dataset.from_csv(args.data)
    preds = predict(model, ds.features)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"y{k + 1}" for k in range(preds.shape[1])])
        for row in preds:
            writer.writerow([repr(float(v)) for v in row])
    print(f"wrote {len(preds)} predictions -> {args.out}")
    return EXIT_OK


def _cmd_check(args) -> int:
    model, _ = _load_model(args.model)
    fs = FeasibleSet.load(args.constraints)
    trees = model.trees if hasattr(model, "trees") else [model]
    bad = 0
    total = 0
    worst = 0.0
    for tree in trees:
        for leaf in iter_leaves(tree):
            total += 1
            report = check_feasibility(leaf.prediction, fs, tol=args.tol)
            if not report.feasible:
                bad += 1
                worst = max(worst, report.max_abs_eq_violation, report.max_ineq_violation)
    print(f"audited {total} leaf predictions: {total - bad} feasible, {bad} infeasible")
    if hasattr(model, "trees") and not fs.is_convex:
        print("note: feasible leaves do not guarantee feasible averaged predictions "
              "on a non-convex set")
    if bad:
        print(f"worst violation magnitude: {worst:g}")
        return EXIT_INFEASIBLE
    return EXIT_OK


def _cmd_bench(args) -> int:
    if bool(args.preset) == bool(args.config):
        raise ConfigError("provide exactly one of --preset or --config")
    if args.preset:
        config = preset(args.preset)
    else:
        config = ExperimentConfig.from_json_dict(json.loads(Path(args.config).read_text()))
    out_csv = Path(args.out)
    if config.experiment == "depth-tradeoff":
        spec = config.datasets[0]
        rows, best_depth = depth_tradeoff_experiment(
            n=spec.get("n", 4000), K=spec.get("K", 5), p=spec.get("p", 6),
            seed=spec.get("seed", 0), depths=config.depths,
            out_csv=out_csv, figures=not args.no_figures,
        )
        at_best = next(r for r in rows if r["depth"] == best_depth)
        print(f"best depth {best_depth}: test MSE {at_best['test_mse']:.4f}, "
              f"{at_best['infeasible_pct']:.1f}% infeasible")
    else:
        rows = run_cv_benchmark(
            config, out_csv=out_csv, figures=not args.no_figures, workers=args.workers
        )
        failures = sum(1 for r in rows if r.error is not None)
        print(f"wrote {len(rows)} rows -> {out_csv} ({failures} cell errors)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ocrt", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="generate a dataset from a recipe JSON")
    p_gen.add_argument("--recipe", required=True, help="recipe JSON (dataset spec dict)")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.set_defaults(func=_cmd_generate)

    p_train = sub.add_parser("train", help="train a tree or forest")
    p_train.add_argument("--data", required=True, help="dataset CSV (x1..xp,y1..yK)")
    p_train.add_argument("--constraints", help="feasible set JSON")
    p_train.add_argument("--method", required=True,
                         choices=sorted(TREE_METHODS) + sorted(FOREST_BASE))
    p_train.add_argument("--depth", type=int, required=True)
    p_train.add_argument("--loss", default="mse", choices=["mse", "mad", "poisson"])
    p_train.add_argument("--n-trees", type=int, default=20)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--min-samples-split", type=int, default=10)
    p_train.add_argument("--min-samples-leaf", type=int, default=5)
    p_train.add_argument("--node-time-budget", type=float, default=120.0)
    p_train.add_argument("--out", required=True, help="model JSON path")
    p_train.set_defaults(func=_cmd_train)

    p_pred = sub.add_parser("predict", help="apply a saved model to a dataset")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", required=True)
    p_pred.set_defaults(func=_cmd_predict)

    p_check = sub.add_parser("check", help="audit leaf predictions for feasibility")
    p_check.add_argument("--model", required=True)
    p_check.add_argument("--constraints", required=True)
    p_check.add_argument("--tol", type=float, default=1e-6)
    p_check.set_defaults(func=_cmd_check)

    p_bench = sub.add_parser("bench", help="run an experiment preset or config")
    p_bench.add_argument("--preset", choices=PRESET_NAMES)
    p_bench.add_argument("--config", help="experiment config JSON")
    p_bench.add_argument("--out", default="bench_results.csv", help="metrics CSV path")
    p_bench.add_argument("--workers", type=int, default=None)
    p_bench.add_argument("--no-figures", action="store_true")
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleSetError as exc:
        print(f"infeasible constraint system: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, UnsupportedError, ValueError, KeyError, OSError,
            json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
