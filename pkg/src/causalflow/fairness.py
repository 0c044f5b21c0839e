"""Counterfactual-fairness auditing of simple classifiers on top of a causal flow.

Four feature sets are compared:

``full``    every observed variable
``unaware`` every observed variable except the sensitive one
``fair_x``  observed variables outside the descendants of the sensitive block
``fair_u``  the flow's exogenous variables except those of the sensitive block

Observed features are fed to the classifiers as integer codes (the floor of
the dequantized values); exogenous features are used as they come.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import accuracy_score, f1_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import LinearSVC

from .causal import CounterfactualQuery, counterfactual
from .data import SplitSpec, TabularData, requantize, split_indices
from .errors import ConfigError, DegenerateLabelsError
from .graph import BlockGraph

log = logging.getLogger(__name__)

FEATURE_SETS = ("full", "unaware", "fair_x", "fair_u")
CLASSIFIERS = ("logistic", "linear-margin")


@dataclass(frozen=True)
class AuditConfig:
    sensitive: int = 0
    classifier_kinds: tuple[str, ...] = CLASSIFIERS
    feature_sets: tuple[str, ...] = FEATURE_SETS
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classifier_kinds", tuple(self.classifier_kinds))
        object.__setattr__(self, "feature_sets", tuple(self.feature_sets))
        bad = set(self.classifier_kinds) - set(CLASSIFIERS) | set(self.feature_sets) - set(FEATURE_SETS)
        if bad:
            raise ConfigError(f"unknown classifier kinds or feature sets: {sorted(bad)}")
        if self.folds < 1:
            raise ConfigError("folds must be >= 1")


def _block_closure(blocks: BlockGraph) -> np.ndarray:
    k = len(blocks.blocks)
    reach = np.eye(k, dtype=bool) | (np.asarray(blocks.block_adjacency) != 0)
    for m in range(k):
        reach |= reach[:, [m]] & reach[[m], :]
    return reach  # reach[e, c]: block c is an ancestor of (or equal to) block e


def feature_columns(blocks: BlockGraph, sensitive: int, d: int) -> dict[str, list[int]]:
    """Column indices of each feature set (``fair_u`` indexes exogenous columns)."""
    s_block = blocks.block_of(sensitive)
    reach = _block_closure(blocks)
    s_members = set(blocks.blocks[s_block])
    fair_x = sorted(v for b, members in enumerate(blocks.blocks) if not reach[b, s_block] for v in members)
    if not fair_x:
        raise ConfigError("the sensitive attribute has no non-descendants; fair_x is empty")
    return {
        "full": list(range(d)),
        "unaware": [v for v in range(d) if v != sensitive],
        "fair_x": fair_x,
        "fair_u": [v for v in range(d) if v not in s_members],
    }


def _abduct(model, x) -> np.ndarray:
    with torch.no_grad():
        u, _ = model.forward(torch.as_tensor(x, dtype=torch.float64))
    return u.numpy()


def feature_sets(model, x, blocks: BlockGraph, sensitive: int, u=None) -> dict[str, np.ndarray]:
    """The four feature matrices for (dequantized) observations ``x``."""
    x = np.asarray(x, dtype=float)
    cols = feature_columns(blocks, sensitive, x.shape[1])
    codes = requantize(x).astype(float)
    u = _abduct(model, x) if u is None else np.asarray(u)
    return {
        "full": codes[:, cols["full"]],
        "unaware": codes[:, cols["unaware"]],
        "fair_x": codes[:, cols["fair_x"]],
        "fair_u": u[:, cols["fair_u"]],
    }


def train_classifier(features, labels, kind: str = "logistic", seed: int = 0):
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise DegenerateLabelsError("both classes must be present to train a classifier")
    if kind == "logistic":
        clf = LogisticRegression(max_iter=5000, random_state=seed)
    elif kind == "linear-margin":
        clf = LinearSVC(loss="hinge", C=1.0, max_iter=100_000, random_state=seed)
    else:
        raise ConfigError(f"unknown classifier kind {kind!r}")
    return make_pipeline(StandardScaler(), clf).fit(np.asarray(features, dtype=float), labels)


def counterfactual_arms(model, x, blocks: BlockGraph, sensitive: int,
                        values: Sequence[float] = (0.5, 1.5)) -> list[dict[str, np.ndarray]]:
    """Feature sets of the counterfactuals of ``x`` under each ``do(x_S = value)``.

    The default values are the centres of the two integer bins of a binary
    dequantized attribute.
    """
    arms = []
    for value in values:
        x_cf, u_cf = counterfactual(model, CounterfactualQuery(x, sensitive, value), return_u=True)
        arms.append(feature_sets(model, x_cf, blocks, sensitive, u=u_cf))
    return arms


def unfairness(classifier, arms: Sequence[dict[str, np.ndarray]], feature_set: str) -> float:
    """Mean absolute difference of the predictions between the two counterfactual arms."""
    a, b = (classifier.predict(arm[feature_set]) for arm in arms)
    return float(np.mean(np.abs(a.astype(float) - b.astype(float))))


def arms_identical(arms: Sequence[dict[str, np.ndarray]], feature_set: str) -> bool:
    return bool(np.array_equal(arms[0][feature_set], arms[1][feature_set]))


def audit_fold(model, data: TabularData, blocks: BlockGraph, split: dict[str, np.ndarray],
               config: AuditConfig = AuditConfig()) -> list[dict]:
    train, test = data.subset(split["train"]), data.subset(split["test"])
    s = config.sensitive
    feats_train = feature_sets(model, train.x, blocks, s)
    feats_test = feature_sets(model, test.x, blocks, s)
    arms = counterfactual_arms(model, test.x, blocks, s)
    rows = []
    for kind in config.classifier_kinds:
        for fs in config.feature_sets:
            clf = train_classifier(feats_train[fs], train.label, kind, config.seed)
            pred = clf.predict(feats_test[fs])
            rows.append({
                "feature_set": fs,
                "classifier": kind,
                "accuracy": float(accuracy_score(test.label, pred)),
                "f1": float(f1_score(test.label, pred)),
                "unfairness": unfairness(clf, arms, fs),
                "inputs_invariant": arms_identical(arms, fs),
            })
    return rows


REPORT_COLUMNS = ("feature_set", "classifier", "accuracy", "accuracy_std", "f1", "f1_std",
                  "unfairness", "unfairness_std", "accuracy_x100", "f1_x100", "unfairness_x100", "folds")


def audit(model_for_fold: Callable[[int, TabularData, TabularData], object], data: TabularData,
          blocks: BlockGraph, config: AuditConfig = AuditConfig()) -> dict:
    """Train every classifier on every fold and aggregate per feature set and classifier.

    ``model_for_fold(fold, train, val)`` returns the trained flow of a fold.
    """
    per_fold = []
    for fold in range(config.folds):
        split = split_indices(len(data), SplitSpec(fold=fold, folds=max(config.folds, 1), seed=config.seed))
        model = model_for_fold(fold, data.subset(split["train"]), data.subset(split["val"]))
        for row in audit_fold(model, data, blocks, split, config):
            per_fold.append({"fold": fold, **row})

    report_rows = []
    for kind in config.classifier_kinds:
        for fs in config.feature_sets:
            rs = [r for r in per_fold if r["classifier"] == kind and r["feature_set"] == fs]
            entry = {"feature_set": fs, "classifier": kind, "folds": len(rs)}
            for metric in ("accuracy", "f1", "unfairness"):
                vals = np.array([r[metric] for r in rs])
                entry[metric] = float(vals.mean())
                entry[metric + "_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
                entry[metric + "_x100"] = 100 * entry[metric]
            report_rows.append(entry)
    for kind in config.classifier_kinds:
        u = {r["feature_set"]: r["unfairness"] for r in report_rows if r["classifier"] == kind}
        if "full" in u and "unaware" in u and not u["full"] >= u["unaware"] > 0:
            log.warning("%s: expected unfairness(full) >= unfairness(unaware) > 0, got %.4f / %.4f",
                        kind, u["full"], u["unaware"])
    return {"rows": report_rows, "per_fold": per_fold, "config": config}


def write_report(report: dict, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in report["rows"]:
            w.writerow([r[c] if isinstance(r[c], str) else repr(r[c]) for c in REPORT_COLUMNS])
    return path


def format_report(report: dict) -> str:
    lines = [f"{'classifier':<15}{'features':<10}{'accuracy':>16}{'f1':>16}{'unfairness':>16}"]
    for r in report["rows"]:
        cells = "".join(
            f"{r[m + '_x100']:>9.2f}±{100 * r[m + '_std']:<6.2f}" for m in ("accuracy", "f1", "unfairness")
        )
        lines.append(f"{r['classifier']:<15}{r['feature_set']:<10}{cells}")
    return "\n".join(lines)
