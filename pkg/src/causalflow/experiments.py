"""Config-driven experiment runs with on-disk result caching.

Each (config, seed) run is keyed by a hash of its resolved configuration, so
repeated invocations reuse finished results.  Used by the command line and by
the acceptance suite.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import scm as scm_lib
from .causal import consistency_score
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DEFAULT_SIZES, atomic_write_text, generate_dataset
from .errors import ConfigError, DiameterWarning
from .flows.model import DesignChoice, build_flow
from .metrics import Protocol, ResultRow, evaluate, timing
from .train import TrainConfig, fit

log = logging.getLogger(__name__)

OUTPUT_ENV = "CAUSALFLOW_OUTPUT_DIR"
CACHE_ENV = "CAUSALFLOW_CACHE_DIR"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def cache_root() -> Path:
    return Path(os.environ.get(CACHE_ENV, output_root() / ".cache"))


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "triangle-nlin"
    design: DesignChoice = DesignChoice()
    train: TrainConfig = TrainConfig()
    protocol: Protocol = Protocol()
    sizes: tuple[int, int, int] = DEFAULT_SIZES
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    kl_n: int = 2500
    output_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(self.sizes) != 3:
            raise ConfigError("sizes needs three entries (train, val, test)")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.dataset != "german":
            scm_lib.get_scm(self.dataset)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "design": self.design.to_dict(),
            "train": self.train.to_dict(),
            "protocol": self.protocol.to_dict(),
            "sizes": list(self.sizes),
            "seeds": list(self.seeds),
            "kl_n": self.kl_n,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "design" in data:
            data["design"] = DesignChoice.from_dict(data["design"])
        if "train" in data:
            data["train"] = TrainConfig.from_dict(data["train"])
        if "protocol" in data:
            protocol = dict(data["protocol"])
            if "contrasts" in protocol:
                protocol["contrasts"] = tuple(tuple(c) for c in protocol["contrasts"])
            data["protocol"] = Protocol.from_dict(protocol)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def run_key(self, seed: int) -> str:
        """Hash of everything that determines the outcome of one seed."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("seeds")
        d["seed"] = seed
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:20]


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return ExperimentConfig.from_dict(data)


def save_config(config: ExperimentConfig, path) -> Path:
    return atomic_write_text(path, json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


# -- single runs ----------------------------------------------------------------


def train_one(config: ExperimentConfig, seed: int):
    """Generate the data of ``seed`` and fit a fresh flow on it."""
    scm = scm_lib.get_scm(config.dataset)
    splits = generate_dataset(scm, config.sizes, seed=seed)
    model = build_flow(config.design, scm.graph, seed=seed)
    train_cfg = replace(config.train, seed=seed)
    model, history = fit(model, splits["train"].x, splits["val"].x, train_cfg, graph=scm.graph)
    return model, history, splits


def run_seed(config: ExperimentConfig, seed: int, cache_dir=None, with_timing: bool = True,
             keep_checkpoint: bool = True) -> dict:
    """Train and evaluate one seed, reusing a cached result when present."""
    cache_dir = Path(cache_dir) if cache_dir is not None else cache_root()
    key = config.run_key(seed)
    result_path = cache_dir / f"{key}.json"
    if result_path.exists():
        return json.loads(result_path.read_text())
    scm = scm_lib.get_scm(config.dataset)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DiameterWarning)
        model, history, splits = train_one(config, seed)
    label = design_label(config.design, config.train.regularizer_on)
    row = evaluate(scm, model, label, seed, replace(config.protocol, seed=seed), config.kl_n,
                   with_timing=with_timing)
    test = splits["test"].x[:500]
    result = {
        "key": key,
        "config": config.to_dict(),
        "seed": seed,
        "row": {c: getattr(row, c) for c in ("dataset", "model", "seed", "kl", "kl_se", "ate_rmse",
                                               "cf_rmse", "train_us", "eval_us", "sample_us")},
        "consistency": consistency_score(model, test, scm.graph),
        "epochs_run": len(history),
        "best_epoch": history.best_epoch,
        "final_val_nll": history.val_nll[-1] if len(history) else None,
    }
    if keep_checkpoint:
        save_checkpoint(model, cache_dir / f"{key}.npz", history, extra={"dataset": config.dataset, "seed": seed})
    atomic_write_text(result_path, json.dumps(result, indent=2, sort_keys=True, default=float) + "\n")
    return result


def run_experiment(config: ExperimentConfig, cache_dir=None, with_timing: bool = True) -> list[dict]:
    return [run_seed(config, s, cache_dir, with_timing) for s in config.seeds]


def result_rows(results: Iterable[dict]) -> list[ResultRow]:
    return [ResultRow(**r["row"]) for r in results]


def cached_model(config: ExperimentConfig, seed: int, cache_dir=None):
    cache_dir = Path(cache_dir) if cache_dir is not None else cache_root()
    return load_checkpoint(cache_dir / f"{config.run_key(seed)}.npz")


# -- ablation -------------------------------------------------------------------


def design_label(design: DesignChoice, regularized: bool = False) -> str:
    arrow = "x->u" if design.direction == "abductive" else "u->x"
    return f"{design.direction}({arrow})/{design.mask_source}/L={design.num_layers}{'*' if regularized else ''}"


@dataclass(frozen=True)
class AblationCell:
    design: DesignChoice
    regularized: bool

    @property
    def label(self) -> str:
        return design_label(self.design, self.regularized)


def ablation_grid(layers: Sequence[int] = (1, 2, 3, 4, 5), base: DesignChoice = DesignChoice(),
                  directions=("abductive", "generative"), masks=("graph", "ordering"),
                  regularization=(False, True)) -> list[AblationCell]:
    return [
        AblationCell(replace(base, direction=dr, mask_source=m, num_layers=L), reg)
        for dr in directions for m in masks for L in layers for reg in regularization
    ]


def run_ablation(base: ExperimentConfig, cells: Sequence[AblationCell], cache_dir=None) -> list[dict]:
    out = []
    for cell in cells:
        cfg = replace(base, design=cell.design, train=replace(base.train, regularizer_on=cell.regularized))
        for seed in base.seeds:
            res = run_seed(cfg, seed, cache_dir, with_timing=False, keep_checkpoint=False)
            out.append({
                "cell": cell.label,
                "direction": cell.design.direction,
                "mask": cell.design.mask_source,
                "layers": cell.design.num_layers,
                "regularized": cell.regularized,
                "seed": seed,
                "kl": res["row"]["kl"],
                "consistency": res["consistency"],
                "ate_rmse": res["row"]["ate_rmse"],
                "cf_rmse": res["row"]["cf_rmse"],
            })
    return out


# -- timing benchmark -------------------------------------------------------------

BENCH_GRAPHS = {3: "chain3-lin", 5: "chain5-lin", 9: "largebd-nlin"}


def run_bench(dims: Sequence[int] = (3, 5, 9), directions=("abductive", "generative"),
              base: DesignChoice = DesignChoice(), batch: int = 256, reps: int = 30,
              rounds: int = 5) -> list[dict]:
    """Per-sample costs of untrained flows on graphs of growing size (median over ``rounds``)."""
    rows = []
    for d in dims:
        scm = scm_lib.get_scm(BENCH_GRAPHS[d])
        for direction in directions:
            design = replace(base, direction=direction)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DiameterWarning)
                model = build_flow(design, scm.graph, seed=0)
            t = timing(model, n=rounds, batch=batch, reps=reps)
            rows.append({"d": d, "dataset": scm.name, "direction": direction, **t})
    return rows


def median_by(rows: Sequence[dict], key: str, value: str) -> dict:
    groups: dict = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r[value])
    return {k: float(np.median(v)) for k, v in groups.items()}


# -- fairness ---------------------------------------------------------------------

GERMAN_DESIGN = DesignChoice(transformer="spline", num_layers=1, hidden=(32, 32, 32))
GERMAN_TRAIN = TrainConfig(epochs=1000, learning_rate=0.01, plateau_decay=0.9, plateau_patience=60)


def german_model_factory(blocks, design: DesignChoice = GERMAN_DESIGN, train: TrainConfig = GERMAN_TRAIN):
    def factory(fold, train_data, val_data):
        model = build_flow(design, blocks, seed=fold)
        model, _ = fit(model, train_data.x, val_data.x, replace(train, seed=fold))
        return model
    return factory
