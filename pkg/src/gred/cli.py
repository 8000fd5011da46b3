"""Command-line interface: preprocess, train, eval, verify, dump-eigenvalues,
gen-data.

Every run writes a resolved-config snapshot into the output directory. Exit
codes: 0 on success, 1 for validation errors, 2 for runtime or numerical
failures. All randomness derives from --seed; --deterministic forces
single-threaded preprocessing and byte-stable metrics output.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .errors import NumericsError, ValidationError
from .graphs import (gen_regression_dataset, gen_tree_neighbors_match,
                     gen_wl_counterexample_pair)
from .lru import eigen_spectrum
from .model import (ModelConfig, attach_layer_views, config_from_dict, presets,
                    with_overrides)
from .layer import lru_params_view
from .optim import load_checkpoint
from .training import (evaluate, split_dataset, train, write_metrics_csv)
from .verification import injectivity_search_check, run_verification_suite
from . import plots


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _collect_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValidationError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = _parse_value(value.strip())
    return out


def _resolve_config(args) -> ModelConfig:
    if getattr(args, "preset", None):
        if args.preset not in presets():
            raise ValidationError(
                f"unknown preset {args.preset!r}; available: {sorted(presets())}"
            )
        cfg = presets()[args.preset]
    elif getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            cfg = config_from_dict(json.load(f))
    else:
        raise ValidationError("provide --preset or --config")
    return with_overrides(cfg, _collect_overrides(args.set))


def _out_dir(args, subcommand: str) -> Path:
    out = Path(args.out) if args.out else Path("out") / subcommand
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_snapshot(out: Path, args, cfg: ModelConfig | None = None) -> None:
    snap = {"command": args.command, "seed": args.seed,
            "deterministic": args.deterministic, "threads": args.threads}
    for key in ("data", "depth", "count", "k", "task", "checkpoint", "split"):
        if hasattr(args, key):
            value = getattr(args, key)
            snap[key] = str(value) if isinstance(value, Path) else value
    if cfg is not None:
        snap["config"] = cfg.to_dict()
    with open(out / "config.json", "w", encoding="utf-8") as f:
        json.dump(snap, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_dataset_with_masks(data_path: str, k_hops: int):
    graphs = dataio.read_dataset(data_path)
    k_file, parts = dataio.read_masks(dataio.sidecar_path(data_path))
    if len(parts) != len(graphs):
        raise ValidationError("mask sidecar and dataset have different graph counts")
    if k_hops > k_file:
        raise ValidationError(
            f"masks were preprocessed with K={k_file} but the model needs "
            f"K={k_hops}; re-run preprocess with --k {k_hops} or larger"
        )
    return graphs, parts


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    out = _out_dir(args, "gen-data")
    _write_snapshot(out, args)
    if args.task == "tree":
        if args.depth is None:
            raise ValidationError("gen-data tree requires --depth")
        graphs = gen_tree_neighbors_match(args.depth, seed=args.seed, count=args.count)
        path = out / f"tree-r{args.depth}.jsonl"
    elif args.task == "wl-pair":
        graphs = list(gen_wl_counterexample_pair())
        path = out / "wl-pair.jsonl"
    elif args.task == "regression":
        graphs = gen_regression_dataset(args.count, seed=args.seed)
        path = out / "regression.jsonl"
    else:
        raise ValidationError(f"unknown gen-data task {args.task!r}")
    dataio.write_dataset(path, graphs)
    print(f"wrote {len(graphs)} graphs to {path}")
    return 0


def cmd_preprocess(args) -> int:
    out = _out_dir(args, "preprocess")
    _write_snapshot(out, args)
    graphs = dataio.read_dataset(args.data)
    threads = 1 if args.deterministic else args.threads
    parts = dataio.preprocess_dataset(graphs, args.k, threads=threads)
    sidecar = dataio.sidecar_path(args.data)
    dataio.write_masks(sidecar, parts, args.k)
    print(f"wrote hop masks for {len(graphs)} graphs (K={args.k}) to {sidecar}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, "train")
    _write_snapshot(out, args, cfg)
    graphs, parts = _load_dataset_with_masks(args.data, cfg.k_hops)
    run = train(cfg, graphs, parts, seed=args.seed, out_dir=out,
                deterministic=args.deterministic)
    plots.save_training_curves(run.metrics, out / "training_curves.png")
    last_train = run.rows("train")[-1]
    print(f"final train metric {last_train['metric']:.6f}; "
          f"best val metric {run.best_val_metric}; outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, "eval")
    _write_snapshot(out, args, cfg)
    graphs, parts = _load_dataset_with_masks(args.data, cfg.k_hops)
    store, _ = load_checkpoint(args.checkpoint)
    model = attach_layer_views(cfg, store)
    splits = split_dataset(len(graphs), args.seed)
    names = ("train", "val", "test")
    index = splits[names.index(args.split)]
    if not len(index):
        raise ValidationError(f"split {args.split!r} is empty")
    loss, metric = evaluate(model, graphs, parts, index, cfg.batch_size)
    rows = [{"epoch": 0, "split": args.split, "loss": loss, "metric": metric,
             "lr": 0.0, "seconds": 0.0}]
    write_metrics_csv(out / "eval.csv", rows)
    print(f"{args.split}: loss {loss:.10g} metric {metric:.10g}")
    return 0


def cmd_verify(args) -> int:
    out = _out_dir(args, "verify")
    _write_snapshot(out, args)
    report = run_verification_suite(seed=args.seed)
    path = out / "verify.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    inj = injectivity_search_check(np.array([0.0, 1.0, 2.0]), k_max=3,
                                   n_trials=1000, seed=args.seed)
    plots.save_margin_plot(inj["lambdas"], inj["margins"],
                           out / "injectivity_margins.png")
    for check in report["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"{status} {check['name']} ({check['seconds']}s)")
    print(f"report written to {path}")
    return 0 if report["all_passed"] else 2


def cmd_dump_eigenvalues(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, "dump-eigenvalues")
    _write_snapshot(out, args, cfg)
    store, _ = load_checkpoint(args.checkpoint)
    model = attach_layer_views(cfg, store)
    rows = []
    for li, layer in enumerate(model.layer_params):
        for ch, (mag, phase) in enumerate(eigen_spectrum(lru_params_view(layer))):
            rows.append((li, ch, mag, phase))
    path = out / "eigenvalues.csv"
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(("layer_index", "channel", "magnitude", "phase"))
        for li, ch, mag, phase in rows:
            writer.writerow((li, ch, f"{mag:.12g}", f"{phase:.12g}"))
    plots.save_eigenvalue_plot(rows, out / "eigenvalues.png")
    print(f"wrote {len(rows)} eigenvalues to {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gred", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config: bool = False):
        p.add_argument("--seed", type=int, default=0, help="master RNG seed")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker parallelism cap for preprocessing")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded, byte-stable outputs")
        if config:
            p.add_argument("--config", type=str, default=None,
                           help="JSON config file (flat key-value)")
            p.add_argument("--preset", type=str, default=None,
                           help=f"named preset: {', '.join(sorted(presets()))}")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="config override (repeatable)")

    p = sub.add_parser("gen-data", help="generate synthetic datasets")
    p.add_argument("task", choices=("tree", "wl-pair", "regression"))
    p.add_argument("--depth", type=int, default=None, help="tree depth r")
    p.add_argument("--count", type=int, default=1000, help="number of graphs")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("preprocess", help="compute and persist hop masks")
    p.add_argument("--data", required=True, help="dataset JSONL path")
    p.add_argument("--k", type=int, required=True, help="hop limit K")
    common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset JSONL path")
    common(p, config=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="val")
    common(p, config=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the verification suite")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("dump-eigenvalues", help="export the learned spectrum")
    p.add_argument("--checkpoint", required=True)
    common(p, config=True)
    p.set_defaults(func=cmd_dump_eigenvalues)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericsError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
