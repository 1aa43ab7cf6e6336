"""Command-line interface: dataset stats, walks, training, sweeps, influence.

Every command is deterministic given its inputs and seed.  Exit codes:
0 success, 1 usage/config error, 2 runtime/numerics error.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .exceptions import (DegenerateWalkError, EmptyInfluenceError, FormatError,
                         NumericsError, ShapeError, TooLargeError)
from .graph import grid_torus, load_dataset, shortest_path_summary
from .influence import verify_theorem
from .model import ModelConfig, fit_model, save_checkpoint
from .walks import WalkParams, pathgen, write_paths

log = logging.getLogger("flowpath")

# config-file-addressable keys and their defaults; flags override the file,
# the file overrides these
DEFAULTS = {
    "layers": 2,
    "hidden": 50,
    "path_len": 6,
    "walk_p": 1000.0,
    "walk_q": 1.0,
    "restarts": 10,
    "lr": 1e-4,
    "weight_decay": 1e-5,
    "epochs": 100,
    "patience": 10,
    "seed": 0,
    "runs": 1,
    "jobs": 1,
    "resample_per_epoch": False,
    "batch_mode": "full",
    "batch_nodes": 256,
}


class UsageError(Exception):
    """Bad flags, config file, or grid spec."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_config_file(path) -> dict:
    """Flat key=value lines, '#' comments; values coerced to the default's type."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        default = DEFAULTS[key]
        value = value.strip()
        try:
            if isinstance(default, bool):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                values[key] = value.lower() in ("true", "1")
            elif isinstance(default, int):
                values[key] = int(value)
            elif isinstance(default, float):
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return values


def merged_config(args) -> dict:
    """Resolve every config key with precedence flags > file > defaults."""
    file_values = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    merged = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None and key in file_values and flag != file_values[key]:
            log.info("flag --%s=%r overrides config file value %r",
                     key.replace("_", "-"), flag, file_values[key])
        merged[key] = flag if flag is not None else file_values.get(key, default)
    return merged


def _config_hash(cfg: dict, dataset_name: str) -> str:
    hashed = {k: v for k, v in cfg.items() if k != "jobs"}
    hashed["dataset"] = dataset_name
    blob = json.dumps(hashed, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _model_config(cfg: dict, seed: int) -> ModelConfig:
    return ModelConfig(layers=cfg["layers"], hidden=cfg["hidden"],
                       learning_rate=cfg["lr"], weight_decay=cfg["weight_decay"],
                       epochs=cfg["epochs"], patience=cfg["patience"],
                       seed=seed, resample_per_epoch=cfg["resample_per_epoch"],
                       batch_mode=cfg["batch_mode"], batch_nodes=cfg["batch_nodes"])


def _walk_params(cfg: dict, seed: int) -> WalkParams:
    return WalkParams(p=cfg["walk_p"], q=cfg["walk_q"], path_len=cfg["path_len"],
                      restarts=cfg["restarts"], seed=seed)


def _add_config_flags(sub, training: bool = True) -> None:
    sub.add_argument("--config", help="key=value config file (flags take precedence)")
    sub.add_argument("--path-len", dest="path_len", type=int)
    sub.add_argument("--walk-p", dest="walk_p", type=float)
    sub.add_argument("--walk-q", dest="walk_q", type=float)
    sub.add_argument("--restarts", type=int)
    sub.add_argument("--seed", type=int)
    if training:
        sub.add_argument("--layers", type=int)
        sub.add_argument("--hidden", type=int)
        sub.add_argument("--lr", type=float)
        sub.add_argument("--weight-decay", dest="weight_decay", type=float)
        sub.add_argument("--epochs", type=int)
        sub.add_argument("--patience", type=int)
        sub.add_argument("--runs", type=int)
        sub.add_argument("--jobs", type=int)
        sub.add_argument("--resample-per-epoch", dest="resample_per_epoch",
                         action="store_const", const=True)
        sub.add_argument("--batch-mode", dest="batch_mode",
                         choices=("full", "path-batch"))
        sub.add_argument("--batch-nodes", dest="batch_nodes", type=int)


def cmd_stats(args) -> int:
    bundle = load_dataset(args.dataset)
    graph = bundle.graph
    counts = bundle.split_counts()
    sp = shortest_path_summary(graph, seed=merged_config(args)["seed"])
    print(f"dataset            {bundle.name}")
    print(f"nodes              {graph.num_nodes}")
    print(f"edges              {graph.num_edges}")
    print(f"classes            {bundle.num_classes}")
    print(f"feature dim        {bundle.num_features}")
    print(f"train/val/test     {counts['train']}/{counts['val']}/{counts['test']}"
          f" (unlabeled {counts['unlabeled']})")
    detail = "sampled from %d sources, 95%% CI +/- %.3f" % (sp["sources"], sp["ci95"]) \
        if sp["sampled"] else "exact"
    print(f"avg shortest path  {sp['mean']:.4f} ({detail})")
    if sp["disconnected"]:
        print(f"note: graph is disconnected; average shortest path uses the "
              f"largest component ({sp['lcc_size']} of {graph.num_nodes} nodes), "
              f"which may differ from conventions that treat components differently")
    return 0


def _run_metrics(bundle, cfg: dict, seed: int) -> tuple:
    result = fit_model(bundle, _model_config(cfg, seed), _walk_params(cfg, seed))
    metrics = {"seed": seed,
               "train_acc": result.report.accuracy["train"],
               "val_acc": result.report.accuracy["val"],
               "test_acc": result.report.accuracy["test"],
               "best_epoch": result.report.best_epoch}
    return result, metrics


def cmd_train(args) -> int:
    cfg = merged_config(args)
    bundle = load_dataset(args.dataset)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = cfg["runs"]
    per_run = []
    for i in range(runs):
        seed = cfg["seed"] + i
        result, metrics = _run_metrics(bundle, cfg, seed)
        per_run.append(metrics)
        suffix = f"_run{i}" if runs > 1 else ""
        save_checkpoint(out_dir / f"model{suffix}.ckpt", result.params,
                        {**cfg, "seed": seed, "dataset": bundle.name})
        result.report.write_csv(out_dir / f"report{suffix}.csv")
        log.info("run %d: test_acc=%.4f best_epoch=%d", i,
                 metrics["test_acc"], metrics["best_epoch"])

    payload = {"schema": 1, "config_hash": _config_hash(cfg, bundle.name)}
    if runs == 1:
        payload.update(per_run[0])
    else:
        accs = np.array([m["test_acc"] for m in per_run])
        payload.update({"runs": per_run,
                        "mean_test_acc": float(accs.mean()),
                        "std_test_acc": float(accs.std(ddof=1)) if runs > 1 else 0.0})
    (out_dir / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True),
                                          encoding="utf-8")
    if runs == 1:
        print(f"test accuracy {per_run[0]['test_acc']:.4f} "
              f"(best epoch {per_run[0]['best_epoch']})")
    else:
        print(f"test accuracy {payload['mean_test_acc']:.4f} "
              f"+/- {payload['std_test_acc']:.4f} over {runs} runs")
    return 0


def _parse_grid_values(spec: str | None, kind, name: str):
    if spec is None:
        return None
    values = [v for v in (tok.strip() for tok in spec.split(",")) if v]
    if not values:
        raise UsageError(f"empty grid for {name}")
    try:
        return [kind(v) for v in values]
    except ValueError:
        raise UsageError(f"bad {name} grid value in {spec!r}") from None


def _sweep_cell(payload: dict) -> dict:
    bundle = load_dataset(payload["dataset"])
    cfg = payload["cfg"]
    accs = []
    for i in range(cfg["runs"]):
        _, metrics = _run_metrics(bundle, cfg, cfg["seed"] + i)
        accs.append(metrics["test_acc"])
    accs = np.array(accs)
    return {"l": cfg["path_len"], "q": cfg["walk_q"], "K": cfg["layers"],
            "test_acc": float(accs.mean()),
            "std": float(accs.std(ddof=1)) if len(accs) > 1 else 0.0}


def cmd_sweep(args) -> int:
    cfg = merged_config(args)
    grids = {"l": _parse_grid_values(args.sweep_l, int, "l"),
             "q": _parse_grid_values(args.sweep_q, float, "q"),
             "K": _parse_grid_values(args.sweep_k, int, "K")}
    active = [k for k, v in grids.items() if v is not None]
    if len(active) not in (1, 2):
        raise UsageError("sweep needs values for exactly one or two of "
                         "--sweep-l / --sweep-q / --sweep-k")
    l_values = grids["l"] or [cfg["path_len"]]
    q_values = grids["q"] or [cfg["walk_q"]]
    k_values = grids["K"] or [cfg["layers"]]

    cells = []
    for l, q, k in itertools.product(l_values, q_values, k_values):
        cell_cfg = {**cfg, "path_len": l, "walk_q": q, "layers": k}
        cells.append({"dataset": args.dataset, "cfg": cell_cfg})

    jobs = cfg["jobs"]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]

    lines = ["l,q,K,test_acc,std"]
    lines += [f"{r['l']},{r['q']},{r['K']},{r['test_acc']:.6f},{r['std']:.6f}"
              for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        log.info("wrote %d sweep rows to %s", len(rows), args.out)
    print(text, end="")
    return 0


def cmd_influence(args) -> int:
    report = verify_theorem(args.rows, args.cols, args.k, args.samples,
                            seed=args.seed if args.seed is not None else 0)
    passed = report.tv < args.tv_threshold
    print(f"tv={report.tv:.6f} threshold={args.tv_threshold} "
          f"-> {'PASS' if passed else 'FAIL'}")
    if args.out:
        report.write_json(args.out)
        log.info("wrote influence report to %s", args.out)
    return 0


def cmd_walks(args) -> int:
    if (args.dataset is None) == (args.torus is None):
        raise UsageError("walks needs exactly one of --dataset or --torus RxC")
    if args.torus:
        try:
            rows, cols = (int(v) for v in args.torus.lower().split("x"))
        except ValueError:
            raise UsageError(f"bad --torus spec {args.torus!r}, expected RxC") from None
        graph = grid_torus(rows, cols)
    else:
        graph = load_dataset(args.dataset).graph
    cfg = merged_config(args)
    params = _walk_params(cfg, cfg["seed"])
    tic = time.perf_counter()
    paths = pathgen(graph, params)
    elapsed = time.perf_counter() - tic
    write_paths(paths, args.out)
    rate = len(paths) / elapsed if elapsed > 0 else float("inf")
    print(f"{len(paths)} paths -> {args.out} ({rate:.0f} paths/sec, "
          f"{paths.skipped_isolated} isolated nodes skipped)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowpath",
                     description="Flow-path propagation networks: walks, training, "
                                 "sweeps, and influence verification.")
    sub = parser.add_subparsers(dest="command")

    p_stats = sub.add_parser("stats", help="dataset statistics")
    p_stats.add_argument("--dataset", required=True)
    _add_config_flags(p_stats, training=False)
    p_stats.set_defaults(func=cmd_stats)

    p_train = sub.add_parser("train", help="train and evaluate a model")
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--out", help="output directory (default .)")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="grid sweep over l, q, or K")
    p_sweep.add_argument("--dataset", required=True)
    p_sweep.add_argument("--sweep-l", dest="sweep_l")
    p_sweep.add_argument("--sweep-q", dest="sweep_q")
    p_sweep.add_argument("--sweep-k", dest="sweep_k")
    p_sweep.add_argument("--out", help="CSV output path")
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_infl = sub.add_parser("influence", help="verify the grid influence equivalence")
    p_infl.add_argument("--rows", type=int, required=True)
    p_infl.add_argument("--cols", type=int, required=True)
    p_infl.add_argument("--k", type=int, required=True)
    p_infl.add_argument("--samples", type=int, required=True)
    p_infl.add_argument("--seed", type=int)
    p_infl.add_argument("--tv-threshold", dest="tv_threshold", type=float, default=0.05)
    p_infl.add_argument("--out", help="JSON report path")
    p_infl.set_defaults(func=cmd_influence)

    p_walks = sub.add_parser("walks", help="generate and dump flow paths")
    p_walks.add_argument("--dataset")
    p_walks.add_argument("--torus", help="RxC wraparound grid instead of a dataset")
    p_walks.add_argument("--out", required=True)
    _add_config_flags(p_walks, training=False)
    p_walks.set_defaults(func=cmd_walks)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_help(sys.stderr)
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ShapeError, DegenerateWalkError, NumericsError,
            TooLargeError, EmptyInfluenceError, ValueError, IndexError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
