"""Batch command-line runner.

Four subcommands cover the full study: `train` runs one graph-model
configuration end to end, `sweep` scans neighborhood sizes, `rf` tunes and
evaluates the random-forest baseline, and `compare` merges finished runs
into one table plus per-sample error-band data. Every command writes CSV
and JSON artifacts (atomically) and renders matplotlib figures next to them.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .dataset import (
    FeatureTable,
    SplitMasks,
    apply_feature_group,
    build_feature_table,
    get_group,
    load_config,
    load_csv,
    split,
)
from .errors import InvalidConfig, NoResultsFound, TabsageError
from .forest import (
    ForestConfig,
    cross_validate,
    default_grid,
    fit_forest,
    importance,
    predict_forest,
)
from .knn import graph_from_order, neighbor_order, write_edge_list
from .metrics import compute_metrics
from .plots import (
    save_history_figure,
    save_importance_figure,
    save_scatter_figure,
    save_sweep_figure,
)
from .sage import ModelConfig, init_model, save_checkpoint
from .trainer import TrainConfig, predict, train

SCHEMA_VERSION = 1


# --- small shared helpers ----------------------------------------------------


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text)
    os.replace(tmp, path)


def _write_json(path: str, payload: dict) -> None:
    _atomic_write_text(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _resolve_seed(flag_seed: int | None, config: dict) -> int:
    if flag_seed is not None:
        return flag_seed
    return int(config.get("seed", 42))


def _load_run_config(path: str | None) -> dict:
    return load_config(path) if path else {}


def _worker_count(n_tasks: int) -> int:
    cap_text = os.environ.get("TABSAGE_THREADS", "").strip()
    cap = None
    if cap_text:
        try:
            cap = int(cap_text)
        except ValueError:
            raise InvalidConfig(f"TABSAGE_THREADS must be an integer, got {cap_text!r}") from None
        if cap < 1:
            raise InvalidConfig(f"TABSAGE_THREADS must be positive, got {cap}")
    workers = min(n_tasks, os.cpu_count() or 1)
    if cap is not None:
        workers = min(workers, cap)
    return max(workers, 1)


def _prepare_table(args, config: dict) -> tuple[FeatureTable, SplitMasks, int]:
    raw = load_csv(args.data, config.get("column_map"))
    group = get_group(args.feature_group)
    table = build_feature_table(raw, group)
    seed = _resolve_seed(args.seed, config)
    masks = split(table.n_rows, seed)
    return table, masks, seed


def _write_predictions(
    path: str,
    actual_mpa: np.ndarray,
    pred_mpa: np.ndarray,
    split_labels: dict[str, np.ndarray],
) -> None:
    lines = ["row_index,split,actual_mpa,predicted_mpa"]
    labeled = np.empty(actual_mpa.shape[0], dtype=object)
    for label, idx in split_labels.items():
        labeled[idx] = label
    for i in range(actual_mpa.shape[0]):
        if labeled[i] is None:
            continue
        lines.append(f"{i},{labeled[i]},{float(actual_mpa[i])!r},{float(pred_mpa[i])!r}")
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _metrics_block(pred_mpa: np.ndarray, actual_mpa: np.ndarray, masks: SplitMasks) -> dict:
    return {
        "train": compute_metrics(pred_mpa[masks.train], actual_mpa[masks.train]).as_dict(),
        "val": compute_metrics(pred_mpa[masks.val], actual_mpa[masks.val]).as_dict(),
        "test": compute_metrics(pred_mpa[masks.test], actual_mpa[masks.test]).as_dict(),
        "val_test": compute_metrics(
            pred_mpa[masks.val_test], actual_mpa[masks.val_test]
        ).as_dict(),
    }


def _train_one(
    table: FeatureTable,
    masks: SplitMasks,
    order: np.ndarray,
    k: int,
    task: str,
    model_seed: int,
    train_config: TrainConfig,
):
    graph = graph_from_order(order, k)
    model = init_model(table.features.shape[1], ModelConfig(), seed=model_seed)
    model, history = train(model, graph, table, masks, train_config, task)
    pred_mpa = predict(model, graph, table, task)
    return graph, model, history, pred_mpa


# --- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    config = _load_run_config(args.config)
    if args.k < 1:
        raise InvalidConfig(f"--k must be at least 1, got {args.k}")
    started = time.perf_counter()
    table, masks, seed = _prepare_table(args, config)
    order = neighbor_order(table.features)
    train_config = TrainConfig(seed=seed, max_epochs=args.max_epochs)
    graph, model, history, pred_mpa = _train_one(
        table, masks, order, args.k, args.task, seed, train_config
    )
    os.makedirs(args.out, exist_ok=True)
    history_path = os.path.join(args.out, "history.csv")
    checkpoint_path = os.path.join(args.out, "checkpoint.json")
    predictions_path = os.path.join(args.out, "predictions.csv")
    results_path = os.path.join(args.out, "results.json")
    figures = {
        "history": os.path.join(args.out, "history.png"),
        "scatter_test": os.path.join(args.out, "scatter_test.png"),
    }
    history.to_csv(history_path)
    save_checkpoint(
        checkpoint_path,
        model,
        table.normalizer,
        extra={"feature_group": table.group_tag, "k": args.k, "task": args.task},
    )
    _write_predictions(
        predictions_path,
        table.target_mpa,
        pred_mpa,
        {"train": masks.train, "val": masks.val, "test": masks.test},
    )
    save_history_figure(history.rows, figures["history"])
    save_scatter_figure(
        table.target_mpa[masks.test],
        pred_mpa[masks.test],
        f"group {table.group_tag}, K={args.k}, {args.task}-level",
        figures["scatter_test"],
    )
    if args.dump_graph:
        write_edge_list(graph, os.path.join(args.out, "graph_edges.txt"))
    results = {
        "schema_version": SCHEMA_VERSION,
        "kind": "gnn",
        "config": {
            "data": args.data,
            "feature_group": table.group_tag,
            "k": args.k,
            "task": args.task,
            "seed": seed,
            "model": {"hidden": 128, "depth": 3, "dropout": 0.25},
            "train": {
                "lr": train_config.lr,
                "beta1": train_config.beta1,
                "beta2": train_config.beta2,
                "eps": train_config.eps,
                "max_epochs": train_config.max_epochs,
                "patience": train_config.patience,
                "min_delta": train_config.min_delta,
            },
        },
        "best_epoch": history.best_epoch,
        "stop_epoch": history.stop_epoch,
        "stop_reason": history.stop_reason,
        "best_val_loss": history.best_val_loss,
        "metrics": _metrics_block(pred_mpa, table.target_mpa, masks),
        "artifacts": {
            "history_csv": os.path.basename(history_path),
            "checkpoint": os.path.basename(checkpoint_path),
            "predictions_csv": os.path.basename(predictions_path),
            "figures": sorted(os.path.basename(p) for p in figures.values()),
        },
        "timing": {"seconds": time.perf_counter() - started},
    }
    _write_json(results_path, results)
    test = results["metrics"]["test"]
    print(
        f"train group={table.group_tag} k={args.k} task={args.task} seed={seed}: "
        f"test R2={test['r2']:.4f} MAE={test['mae']:.2f} MPa "
        f"(best epoch {history.best_epoch}, stopped {history.stop_epoch})"
    )
    return 0


# --- sweep -------------------------------------------------------------------


def cmd_sweep(args) -> int:
    config = _load_run_config(args.config)
    started = time.perf_counter()
    table, masks, seed = _prepare_table(args, config)
    if not 1 <= args.k_min <= args.k_max < table.n_rows:
        raise InvalidConfig(
            f"need 1 <= k-min <= k-max < {table.n_rows}, got [{args.k_min}, {args.k_max}]"
        )
    order = neighbor_order(table.features)
    ks = list(range(args.k_min, args.k_max + 1))
    train_config = TrainConfig(seed=seed, max_epochs=args.max_epochs)

    def run(k: int) -> dict:
        # Everything except K is held fixed, including the model seed, so any
        # row can be reproduced exactly by the train command at the same seed.
        _, _, history, pred_mpa = _train_one(
            table, masks, order, k, args.task, seed, train_config
        )
        report = compute_metrics(pred_mpa[masks.test], table.target_mpa[masks.test])
        return {
            "k": k,
            "r2": report.r2,
            "mae": report.mae,
            "rmse": report.rmse,
            "mape": report.mape,
            "best_epoch": history.best_epoch,
            "stop_epoch": history.stop_epoch,
        }

    workers = _worker_count(len(ks))
    if workers == 1:
        rows = [run(k) for k in ks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, ks))
    best = max(rows, key=lambda row: row["r2"])
    os.makedirs(args.out, exist_ok=True)
    csv_lines = ["k,r2,mae,rmse,mape"]
    for row in rows:
        csv_lines.append(
            f"{row['k']},{row['r2']!r},{row['mae']!r},{row['rmse']!r},{row['mape']!r}"
        )
    _atomic_write_text(os.path.join(args.out, "sweep.csv"), "\n".join(csv_lines) + "\n")
    save_sweep_figure(
        [row["k"] for row in rows],
        [row["r2"] for row in rows],
        os.path.join(args.out, "sweep.png"),
    )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "sweep",
        "config": {
            "data": args.data,
            "feature_group": table.group_tag,
            "task": args.task,
            "seed": seed,
            "k_min": args.k_min,
            "k_max": args.k_max,
        },
        "best_k": best["k"],
        "best_r2": best["r2"],
        "rows": rows,
        "timing": {"seconds": time.perf_counter() - started},
    }
    _write_json(os.path.join(args.out, "sweep.json"), payload)
    print(
        f"sweep group={table.group_tag} task={args.task} seed={seed} "
        f"K={args.k_min}..{args.k_max}: best K={best['k']} (test R2={best['r2']:.4f})"
    )
    return 0


# --- rf ----------------------------------------------------------------------


def _load_grid(path: str | None, d: int) -> list[ForestConfig]:
    if path is None:
        return default_grid(d)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            entries = json.load(handle)
    except OSError as exc:
        raise InvalidConfig(f"cannot open grid file {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"cannot parse grid file {path!r}: {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise InvalidConfig("grid file must hold a nonempty list of configs")
    grid = []
    for entry in entries:
        if not isinstance(entry, dict) or not {"n_trees", "m"} <= set(entry):
            raise InvalidConfig("each grid entry needs n_trees and m")
        grid.append(ForestConfig(n_trees=int(entry["n_trees"]), m=int(entry["m"])))
    return grid


def cmd_rf(args) -> int:
    config = _load_run_config(args.config)
    started = time.perf_counter()
    raw = load_csv(args.data, config.get("column_map"))
    group = get_group(args.feature_group)
    X = apply_feature_group(raw, group)
    y = raw.target
    seed = _resolve_seed(args.seed, config)
    masks = split(X.shape[0], seed)
    grid = _load_grid(args.grid_file, X.shape[1])
    train_idx, test_idx = masks.train, masks.val_test
    cv = cross_validate(X[train_idx], y[train_idx], grid, n_folds=10, seed=seed)
    final_config = ForestConfig(n_trees=cv.best.n_trees, m=cv.best.m, seed=seed)
    forest = fit_forest(X[train_idx], y[train_idx], final_config)
    pred_all = predict_forest(forest, X)
    scores = importance(forest)
    names = list(group.feature_names)
    ranked = sorted(zip(names, scores.tolist()), key=lambda item: -item[1])
    os.makedirs(args.out, exist_ok=True)
    importance_path = os.path.join(args.out, "importance.csv")
    _atomic_write_text(
        importance_path,
        "\n".join(["feature,importance"] + [f"{n},{float(s)!r}" for n, s in ranked]) + "\n",
    )
    _write_predictions(
        os.path.join(args.out, "predictions.csv"),
        y,
        pred_all,
        {"train": train_idx, "test": test_idx},
    )
    save_importance_figure(
        [n for n, _ in ranked], [s for _, s in ranked], os.path.join(args.out, "importance.png")
    )
    save_scatter_figure(
        y[test_idx],
        pred_all[test_idx],
        f"random forest, group {group.tag}",
        os.path.join(args.out, "scatter_test.png"),
    )
    results = {
        "schema_version": SCHEMA_VERSION,
        "kind": "rf",
        "config": {
            "data": args.data,
            "feature_group": group.tag,
            "seed": seed,
            "n_trees": final_config.n_trees,
            "m": final_config.m,
        },
        "cv": {
            "folds": 10,
            "scores": [
                {"n_trees": c.n_trees, "m": c.m, "mean_r2": score} for c, score in cv.scores
            ],
        },
        "metrics": {
            "train": compute_metrics(pred_all[train_idx], y[train_idx]).as_dict(),
            "test": compute_metrics(pred_all[test_idx], y[test_idx]).as_dict(),
        },
        "importance": {n: s for n, s in ranked},
        "artifacts": {
            "importance_csv": "importance.csv",
            "predictions_csv": "predictions.csv",
            "figures": ["importance.png", "scatter_test.png"],
        },
        "timing": {"seconds": time.perf_counter() - started},
    }
    _write_json(os.path.join(args.out, "results.json"), results)
    test = results["metrics"]["test"]
    print(
        f"rf group={group.tag} seed={seed}: n_trees={final_config.n_trees} m={final_config.m} "
        f"test R2={test['r2']:.4f} MAE={test['mae']:.2f} MPa"
    )
    return 0


# --- compare -------------------------------------------------------------------


def _gather_results(results_dir: str) -> list[tuple[str, dict]]:
    found = []
    for root, _, files in sorted(os.walk(results_dir)):
        for name in sorted(files):
            if not name.endswith(".json"):
                continue
            path = os.path.join(root, name)
            try:
                with open(path, "r", encoding="utf-8") as handle:
                    payload = json.load(handle)
            except (OSError, json.JSONDecodeError):
                continue
            if isinstance(payload, dict) and payload.get("kind") in ("gnn", "rf"):
                found.append((path, payload))
    return found


def _run_label(payload: dict) -> str:
    cfg = payload["config"]
    if payload["kind"] == "gnn":
        return f"gnn_{cfg['task']}_{cfg['feature_group']}_k{cfg['k']}_seed{cfg['seed']}"
    return f"rf_{cfg['feature_group']}_seed{cfg['seed']}"


def cmd_compare(args) -> int:
    found = _gather_results(args.results)
    if len(found) < 2:
        raise NoResultsFound(
            f"need at least 2 results files under {args.results!r}, found {len(found)}"
        )
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for path, payload in found:
        cfg = payload["config"]
        test = payload["metrics"]["test"]
        rows.append(
            {
                "label": _run_label(payload),
                "kind": payload["kind"],
                "task": cfg.get("task", "rf"),
                "feature_group": cfg["feature_group"],
                "k": cfg.get("k", ""),
                "r2": test["r2"],
                "mae": test["mae"],
                "rmse": test["rmse"],
                "mape": test["mape"],
                "path": path,
            }
        )
    rows.sort(key=lambda r: (r["kind"], r["task"], str(r["feature_group"]), str(r["k"])))
    table_lines = ["label,kind,task,feature_group,k,r2,mae,rmse,mape"]
    for r in rows:
        table_lines.append(
            f"{r['label']},{r['kind']},{r['task']},{r['feature_group']},{r['k']},"
            f"{r['r2']!r},{r['mae']!r},{r['rmse']!r},{r['mape']!r}"
        )
    _atomic_write_text(os.path.join(args.out, "comparison.csv"), "\n".join(table_lines) + "\n")

    band_lines = ["label,row_index,actual_mpa,predicted_mpa,within_10pct"]
    for r in rows:
        run_dir = os.path.dirname(r["path"])
        pred_path = os.path.join(run_dir, "predictions.csv")
        if not os.path.exists(pred_path):
            continue
        with open(pred_path, "r", encoding="utf-8") as handle:
            header = handle.readline()
            for line in handle:
                index, split_label, actual, predicted = line.strip().split(",")
                if split_label != "test":
                    continue
                a, p = float(actual), float(predicted)
                inside = int(abs(p - a) <= 0.10 * abs(a))
                band_lines.append(f"{r['label']},{index},{actual},{predicted},{inside}")
    _atomic_write_text(os.path.join(args.out, "predictions_band.csv"), "\n".join(band_lines) + "\n")

    print(f"compare: {len(rows)} runs -> comparison.csv, predictions_band.csv")
    for r in rows:
        print(f"  {r['label']}: test R2={r['r2']:.4f} MAE={r['mae']:.2f}")
    return 0


# --- argument parsing ------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabsage",
        description="k-NN graph regression experiments on tabular mixture data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, with_group: bool = True) -> None:
        p.add_argument("--data", required=True, help="input CSV path")
        p.add_argument("--config", default=None, help="optional JSON config (column_map, seed)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed (default 42)")
        if with_group:
            p.add_argument(
                "--feature-group",
                default="A",
                choices=["A", "B", "C", "D", "E"],
                help="input variable selection",
            )

    p_train = sub.add_parser("train", help="train one graph model configuration")
    add_common(p_train)
    p_train.add_argument("--k", type=int, default=3, help="neighbors per node")
    p_train.add_argument("--task", default="node", choices=["node", "graph"])
    p_train.add_argument("--max-epochs", type=int, default=2000)
    p_train.add_argument("--dump-graph", action="store_true", help="also write the edge list")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="train across a range of neighborhood sizes")
    add_common(p_sweep)
    p_sweep.add_argument("--k-min", type=int, default=2)
    p_sweep.add_argument("--k-max", type=int, default=30)
    p_sweep.add_argument("--task", default="node", choices=["node", "graph"])
    p_sweep.add_argument("--max-epochs", type=int, default=2000)
    p_sweep.set_defaults(func=cmd_sweep)

    p_rf = sub.add_parser("rf", help="tune and evaluate the random-forest baseline")
    add_common(p_rf)
    p_rf.add_argument("--grid-file", default=None, help="JSON list of {n_trees, m} configs")
    p_rf.set_defaults(func=cmd_rf)

    p_cmp = sub.add_parser("compare", help="combine finished runs into one report")
    p_cmp.add_argument("--results", required=True, help="directory containing results JSON files")
    p_cmp.add_argument("--out", required=True, help="output directory")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TabsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
