"""Command line entry point: ``causalflow <subcommand> ...``.

Node indices on the command line are 1-based, matching the ``x1..xd``
column names of every data file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import scm as scm_lib
from .causal import CounterfactualQuery, InterventionQuery, counterfactual, intervene, write_rows
from .checkpoint import load_checkpoint, read_meta, save_checkpoint
from .data import atomic_write_text, generate_dataset, load_german, read_csv_matrix, save_dataset
from .errors import CausalFlowError, ConfigError
from .experiments import (
    GERMAN_DESIGN,
    GERMAN_TRAIN,
    ExperimentConfig,
    ablation_grid,
    german_model_factory,
    load_config,
    output_root,
    run_ablation,
    run_bench,
    save_config,
    train_one,
)
from .fairness import AuditConfig, audit, format_report, write_report
from .flows.model import DesignChoice
from .flows.oracle import OracleFlow
from .graph import condense_partial
from .metrics import Protocol, aggregate, evaluate, format_table, pairplot_data, write_results
from .train import TrainConfig

log = logging.getLogger("causalflow")


def _out_dir(args, default: str) -> Path:
    path = Path(args.out) if args.out else output_root() / default
    path.mkdir(parents=True, exist_ok=True)
    return path


def _record_args(out: Path, args) -> None:
    """Store the resolved arguments of a command that has no experiment config."""
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    atomic_write_text(out / "command.json", json.dumps(resolved, indent=2, sort_keys=True) + "\n")


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "scm", None):
        cfg = replace(cfg, dataset=args.scm)
    design = cfg.design.to_dict()
    for flag, key in (("design", "direction"), ("mask", "mask_source"), ("layers", "num_layers"),
                      ("transformer", "transformer"), ("base", "base")):
        value = getattr(args, flag, None)
        if value is not None:
            design[key] = value
    if getattr(args, "hidden", None):
        design["hidden"] = args.hidden
    train = cfg.train.to_dict()
    for flag, key in (("epochs", "epochs"), ("lr", "learning_rate"), ("batch_size", "batch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            train[key] = value
    if getattr(args, "regularize", False):
        train["regularizer_on"] = True
    cfg = replace(cfg, design=DesignChoice.from_dict(design), train=TrainConfig.from_dict(train))
    if getattr(args, "seeds", None):
        cfg = replace(cfg, seeds=tuple(args.seeds))
    if getattr(args, "sizes", None):
        cfg = replace(cfg, sizes=tuple(args.sizes))
    return cfg


def _node(args, d: int) -> int:
    if not 1 <= args.node <= d:
        raise ConfigError(f"--node must lie in 1..{d}")
    return args.node - 1


# -- subcommands ------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    scm = scm_lib.get_scm(args.scm)
    out = _out_dir(args, f"data/{args.scm}/seed{args.seed}")
    _record_args(out, args)
    splits = generate_dataset(scm, tuple(args.sizes), seed=args.seed)
    for path in save_dataset(splits, out, scm.name, args.seed):
        print(path)
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args, f"train/{cfg.dataset}")
    cfg = replace(cfg, output_dir=str(out))
    save_config(cfg, out / "config.json")
    for seed in cfg.seeds:
        model, history, _ = train_one(cfg, seed)
        ckpt = save_checkpoint(model, out / f"model_seed{seed}.npz", history,
                               extra={"dataset": cfg.dataset, "seed": seed})
        history.to_csv(out / f"history_seed{seed}.csv", include_timing=False)
        print(ckpt)
    return 0


def _dataset_of(ckpt, args) -> str:
    if getattr(args, "scm", None):
        return args.scm
    name = read_meta(ckpt).get("extra", {}).get("dataset")
    if not name:
        raise ConfigError(f"{ckpt}: no dataset recorded; pass --scm")
    return name


def cmd_eval(args) -> int:
    protocol = Protocol()
    if args.config:
        protocol = load_config(args.config).protocol
    rows = []
    if args.oracle:
        scm = scm_lib.get_scm(args.scm or "triangle-nlin")
        rows.append(evaluate(scm, OracleFlow(scm), "oracle", 0, protocol, with_timing=False))
    for ckpt in args.checkpoint or []:
        model = load_checkpoint(ckpt)
        name = _dataset_of(ckpt, args)
        seed = int(read_meta(ckpt).get("extra", {}).get("seed", 0))
        label = f"{model.design.direction}/{model.design.mask_source}/L={model.design.num_layers}"
        rows.append(evaluate(scm_lib.get_scm(name), model, label, seed, replace(protocol, seed=seed),
                             with_timing=not args.no_timing))
    if not rows:
        raise ConfigError("nothing to evaluate: give --checkpoint files or --oracle")
    out = _out_dir(args, "eval")
    _record_args(out, args)
    write_results(rows, out / "results.csv")
    print(format_table(aggregate(rows)))
    print(out / "results.csv")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    if not args.config:
        cfg = replace(cfg, dataset=args.scm or "chain4-lin", seeds=tuple(args.seeds or (0, 1)))
    out = _out_dir(args, f"ablate/{cfg.dataset}")
    save_config(cfg, out / "config.json")
    cells = ablation_grid(tuple(args.layer_grid), cfg.design)
    rows = run_ablation(cfg, cells, cache_dir=out / "cache")
    cols = ("cell", "direction", "mask", "layers", "regularized", "seed", "kl", "consistency", "ate_rmse", "cf_rmse")
    with open(out / "ablation.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(str(r[c]) for c in cols) + "\n")
    print(out / "ablation.csv")
    return 0


def cmd_intervene(args) -> int:
    model = load_checkpoint(args.checkpoint)
    i = _node(args, model.d)
    x = intervene(model, InterventionQuery(i, args.value, args.n, args.seed))
    out = _out_dir(args, "intervene")
    _record_args(out, args)
    write_rows(out / "samples.csv", x)
    print(out / "samples.csv")
    name = read_meta(args.checkpoint).get("extra", {}).get("dataset") if not args.scm else args.scm
    if name and name != "german":
        scm = scm_lib.get_scm(name)
        truth = scm_lib.intervene_true(scm, i, args.value, args.n, seed=args.seed)
        print(pairplot_data(truth, x, out / "pairplot"))
    return 0


def cmd_cf(args) -> int:
    model = load_checkpoint(args.checkpoint)
    i = _node(args, model.d)
    factual, names = read_csv_matrix(args.factual)
    x_cf = counterfactual(model, CounterfactualQuery(factual, i, args.value))
    out = _out_dir(args, "cf")
    _record_args(out, args)
    write_rows(out / "counterfactuals.csv", np.atleast_2d(x_cf), names)
    print(out / "counterfactuals.csv")
    return 0


def cmd_audit(args) -> int:
    data, spec = load_german(args.data, seed=args.seed)
    blocks = condense_partial(spec)
    train = replace(GERMAN_TRAIN, epochs=args.epochs) if args.epochs is not None else GERMAN_TRAIN
    config = AuditConfig(folds=args.folds, seed=args.seed)
    report = audit(german_model_factory(blocks, GERMAN_DESIGN, train), data, blocks, config)
    out = _out_dir(args, "audit")
    _record_args(out, args)
    write_report(report, out / "fairness.csv")
    text = format_report(report)
    (out / "fairness.txt").write_text(text + "\n")
    print(text)
    print(out / "fairness.csv")
    return 0


def cmd_bench(args) -> int:
    rows = run_bench(tuple(args.dims), reps=args.reps)
    out = _out_dir(args, "bench")
    _record_args(out, args)
    cols = ("d", "dataset", "direction", "train_step_us", "eval_us", "sample_us")
    with open(out / "timing.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(str(r[c]) for c in cols) + "\n")
            print(f"d={r['d']} {r['direction']:<10} eval {r['eval_us']:.2f}us  sample {r['sample_us']:.2f}us")
    print(out / "timing.csv")
    return 0


# -- parser -----------------------------------------------------------------------


def _design_flags(p):
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--scm", help="SCM name")
    p.add_argument("--design", choices=("abductive", "generative"))
    p.add_argument("--mask", choices=("graph", "ordering"))
    p.add_argument("--layers", type=int)
    p.add_argument("--transformer", choices=("affine", "spline"))
    p.add_argument("--base", choices=("normal", "laplace"))
    p.add_argument("--hidden", type=int, nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--regularize", action="store_true")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--sizes", type=int, nargs=3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample train/val/test splits from an SCM")
    p.add_argument("--scm", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", type=int, nargs=3, default=[20000, 2500, 2500])
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a causal flow")
    _design_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="results table for trained checkpoints")
    p.add_argument("--checkpoint", nargs="+")
    p.add_argument("--scm")
    p.add_argument("--config")
    p.add_argument("--oracle", action="store_true", help="evaluate the ground-truth SCM wrapped as a flow")
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="design-choice grid on a chain SCM")
    _design_flags(p)
    p.add_argument("--layer-grid", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("intervene", help="sample from do(x_node = value)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--node", type=int, required=True, help="1-based node index")
    p.add_argument("--value", type=float, required=True)
    p.add_argument("-n", type=int, default=2500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scm")
    p.add_argument("--out")
    p.set_defaults(func=cmd_intervene)

    p = sub.add_parser("cf", help="counterfactuals of factual rows")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--factual", required=True, help="CSV with a header row")
    p.add_argument("--node", type=int, required=True, help="1-based node index")
    p.add_argument("--value", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cf)

    p = sub.add_parser("audit", help="counterfactual-fairness audit on German Credit")
    p.add_argument("--data", help="path to german.data (default: $CAUSALFLOW_DATA_DIR/german/german.data)")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("bench", help="per-sample evaluation and sampling cost")
    p.add_argument("--dims", type=int, nargs="+", default=[3, 5, 9])
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        warnings.showwarning = _show_warning
        try:
            return args.func(args)
        except CausalFlowError as exc:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
