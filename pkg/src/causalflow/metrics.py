"""Comparison of a flow against the SCM that generated its data."""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy import stats

from . import scm as scm_lib
from .causal import CounterfactualQuery, ate, counterfactual
from .errors import ConfigError
from .graph import transitive_closure

RESULT_COLUMNS = ("dataset", "model", "seed", "kl", "kl_se", "ate_rmse", "cf_rmse",
                  "train_us", "eval_us", "sample_us")


@dataclass(frozen=True)
class Protocol:
    """Grid of interventions used by :func:`ate_rmse` and :func:`cf_rmse`.

    Intervention values are the given percentiles of each target variable,
    estimated from ``n_reference`` observational draws of the SCM.  Targets
    default to every node with at least one child.  The model's ATE uses
    ``n_ate`` draws; the reference ATE uses ``n_ate_true`` so that its own
    Monte-Carlo error is negligible.
    """

    percentiles: tuple[float, ...] = (25.0, 50.0, 75.0)
    contrasts: tuple[tuple[float, float], ...] = ((25.0, 50.0), (50.0, 75.0), (25.0, 75.0))
    n_ate: int = 10_000
    n_ate_true: int = 1_000_000
    n_cf: int = 2048
    n_reference: int = 10_000
    nodes: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "percentiles", tuple(float(p) for p in self.percentiles))
        object.__setattr__(self, "contrasts", tuple((float(a), float(b)) for a, b in self.contrasts))
        if self.nodes is not None:
            object.__setattr__(self, "nodes", tuple(int(i) for i in self.nodes))
        for a, b in self.contrasts:
            if a not in self.percentiles or b not in self.percentiles:
                raise ConfigError(f"contrast ({a}, {b}) uses a percentile outside the grid")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Protocol":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown protocol keys: {sorted(unknown)}")
        return cls(**data)

    def targets(self, scm: scm_lib.SCMSpec) -> tuple[int, ...]:
        if self.nodes is not None:
            return self.nodes
        return tuple(i for i in range(scm.d) if scm.graph.children(i))

    def values(self, scm: scm_lib.SCMSpec) -> dict[int, dict[float, float]]:
        ref = scm_lib.sample(scm, self.n_reference, seed=self.seed + 7919).x
        return {
            i: dict(zip(self.percentiles, np.percentile(ref[:, i], self.percentiles)))
            for i in self.targets(scm)
        }


def kl_obs(scm: scm_lib.SCMSpec, model, n: int = 2500, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo ``KL(p_SCM || p_model)`` and its standard error."""
    x = scm_lib.sample(scm, n, seed=seed).x
    with torch.no_grad():
        lp_model = model.log_prob(x).numpy()
    diff = scm_lib.log_prob_true(scm, x) - lp_model
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def ate_errors(scm: scm_lib.SCMSpec, model, protocol: Protocol = Protocol()) -> np.ndarray:
    """Signed errors of the estimated ATE on every descendant coordinate of the grid."""
    closure = transitive_closure(scm.graph)
    values = protocol.values(scm)
    errors = []
    for i, vals in values.items():
        desc = [k for k in range(scm.d) if k != i and closure[k, i]]
        for a, b in protocol.contrasts:
            est = ate(model, i, vals[a], vals[b], protocol.n_ate, seed=protocol.seed)
            true = scm_lib.ate_true(scm, i, vals[a], vals[b], protocol.n_ate_true, seed=protocol.seed + 1)
            errors.append(est[desc] - true[desc])
    return np.concatenate(errors) if errors else np.zeros(0)


def ate_rmse(scm: scm_lib.SCMSpec, model, protocol: Protocol = Protocol()) -> float:
    err = ate_errors(scm, model, protocol)
    return float(np.sqrt(np.mean(err**2))) if err.size else 0.0


def cf_rmse(scm: scm_lib.SCMSpec, model, protocol: Protocol = Protocol()) -> float:
    """RMSE of counterfactuals over held-out factuals, all coordinates."""
    factual = scm_lib.sample(scm, protocol.n_cf, seed=protocol.seed + 104729).x
    sq = []
    for i, vals in protocol.values(scm).items():
        for p in protocol.percentiles:
            est = counterfactual(model, CounterfactualQuery(factual, i, vals[p]))
            true = scm_lib.counterfactual_true(scm, factual, i, vals[p])
            sq.append(((est - true) ** 2).ravel())
    return float(np.sqrt(np.mean(np.concatenate(sq)))) if sq else 0.0


# -- timing ---------------------------------------------------------------------


def _time_us(fn, reps: int, warmup: int) -> list[float]:
    for _ in range(warmup):
        fn()
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append((time.perf_counter() - t0) * 1e6)
    return out


def timing(model, n: int = 1, batch: int = 256, reps: int = 30, warmup: int = 10,
           seed: int = 0) -> dict[str, float]:
    """Per-sample microseconds for one training step, evaluation and sampling.

    Medians over ``reps`` repetitions after ``warmup`` discarded runs; means
    and standard deviations are reported alongside.  ``n`` repeats the whole
    measurement and keeps the median of the per-run medians.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        x = model.inverse(model.sample_base(batch, gen))
    train_model = model
    params = [p for p in train_model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=0.0) if params else None
    state = {k: v.clone() for k, v in model.state_dict().items()}

    def step():
        opt.zero_grad()
        (-model.log_prob(x).mean()).backward()
        opt.step()

    def evaluate():
        with torch.no_grad():
            model.log_prob(x)

    def draw():
        with torch.no_grad():
            model.inverse(model.sample_base(batch, gen))

    runs: dict[str, list[float]] = {"train_step_us": [], "eval_us": [], "sample_us": []}
    means: dict[str, list[float]] = {k: [] for k in runs}
    for _ in range(max(1, n)):
        for key, fn in (("train_step_us", step), ("eval_us", evaluate), ("sample_us", draw)):
            if fn is step and opt is None:
                continue
            per_sample = np.asarray(_time_us(fn, reps, warmup)) / batch
            runs[key].append(float(np.median(per_sample)))
            means[key].append(float(per_sample.mean()))
            means[key + "_std"] = means.get(key + "_std", []) + [float(per_sample.std())]
    model.load_state_dict(state)
    out = {k: statistics.median(v) for k, v in runs.items() if v}
    for k in runs:
        if means[k]:
            out[k.replace("_us", "_mean_us")] = statistics.mean(means[k])
            out[k.replace("_us", "_std_us")] = statistics.mean(means[k + "_std"])
    return out


# -- pair plots -----------------------------------------------------------------

_PLOT_SCRIPT = '''"""Render the pair-plot summaries in this directory (needs matplotlib)."""
import csv
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np

here = Path(__file__).parent
hist = defaultdict(list)
with open(here / "hist1d.csv") as fh:
    for row in csv.DictReader(fh):
        hist[(row["source"], int(row["var"]))].append((float(row["lo"]), float(row["hi"]), float(row["density"])))
kde = defaultdict(list)
with open(here / "kde2d.csv") as fh:
    for row in csv.DictReader(fh):
        kde[(row["source"], int(row["var_a"]), int(row["var_b"]))].append(
            (float(row["x"]), float(row["y"]), float(row["density"])))
d = 1 + max(v for _, v in hist)
fig, axes = plt.subplots(d, d, figsize=(2.2 * d, 2.2 * d), squeeze=False)
colors = {"true": "tab:blue", "model": "tab:orange"}
for (source, a, b), pts in kde.items():
    pts = np.array(pts)
    g = int(round(np.sqrt(len(pts))))
    axes[b, a].contour(pts[:, 0].reshape(g, g), pts[:, 1].reshape(g, g), pts[:, 2].reshape(g, g),
                       colors=colors[source], linewidths=0.8)
for (source, v), bins in hist.items():
    bins = np.array(bins)
    axes[v, v].stairs(bins[:, 2], np.append(bins[:, 0], bins[-1, 1]), color=colors[source])
for a in range(d):
    for b in range(a):
        axes[a, b].set_visible(False)
fig.tight_layout()
fig.savefig(here / "pairplot.png", dpi=120)
'''


def pairplot_data(samples_true, samples_model, path, bins: int = 30, grid: int = 40,
                  names: Sequence[str] | None = None) -> Path:
    """Write aligned samples, 1-D histograms and 2-D KDE grids for both sources.

    Both sources share bin edges and evaluation grids so their summaries are
    directly comparable.  A small ``plot_pairs.py`` is written next to them.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    sources = {"true": np.atleast_2d(np.asarray(samples_true, float)),
               "model": np.atleast_2d(np.asarray(samples_model, float))}
    d = sources["true"].shape[1]
    if sources["model"].shape[1] != d:
        raise ValueError("both sample sets need the same number of columns")
    names = list(names) if names else [f"x{k + 1}" for k in range(d)]
    both = np.vstack(list(sources.values()))
    lo, hi = both.min(axis=0), both.max(axis=0)
    flat = (hi - lo) <= 1e-9 * np.maximum(1.0, np.abs(lo))
    lo, hi = np.where(flat, lo - 0.5, lo), np.where(flat, hi + 0.5, hi)

    for source, x in sources.items():
        with open(path / f"samples_{source}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            w.writerows([[repr(float(v)) for v in row] for row in x])

    with open(path / "hist1d.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "var", "lo", "hi", "density"])
        for source, x in sources.items():
            for v in range(d):
                dens, edges = np.histogram(x[:, v], bins=bins, range=(lo[v], hi[v]), density=True)
                for k in range(bins):
                    w.writerow([source, v, repr(float(edges[k])), repr(float(edges[k + 1])), repr(float(dens[k]))])

    with open(path / "kde2d.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "var_a", "var_b", "x", "y", "density"])
        for source, x in sources.items():
            for a in range(d):
                for b in range(a + 1, d):
                    gx, gy = np.meshgrid(np.linspace(lo[a], hi[a], grid), np.linspace(lo[b], hi[b], grid))
                    pair = x[:, [a, b]].T
                    try:
                        dens = stats.gaussian_kde(pair)(np.vstack([gx.ravel(), gy.ravel()]))
                    except np.linalg.LinAlgError:  # degenerate pair, e.g. an intervened column
                        dens = np.zeros(gx.size)
                    for px, py, pd in zip(gx.ravel(), gy.ravel(), dens):
                        w.writerow([source, a, b, repr(float(px)), repr(float(py)), repr(float(pd))])

    (path / "plot_pairs.py").write_text(_PLOT_SCRIPT)
    return path


# -- results tables -------------------------------------------------------------


@dataclass
class ResultRow:
    dataset: str
    model: str
    seed: int
    kl: float = float("nan")
    kl_se: float = float("nan")
    ate_rmse: float = float("nan")
    cf_rmse: float = float("nan")
    train_us: float = float("nan")
    eval_us: float = float("nan")
    sample_us: float = float("nan")
    extra: dict = field(default_factory=dict, compare=False)

    def as_list(self) -> list:
        return [getattr(self, c) for c in RESULT_COLUMNS]


def evaluate(scm: scm_lib.SCMSpec, model, label: str, seed: int, protocol: Protocol = Protocol(),
             kl_n: int = 2500, with_timing: bool = True) -> ResultRow:
    """One results-table row for a model trained on data from ``scm``."""
    kl, se = kl_obs(scm, model, kl_n, seed=protocol.seed + 31337)
    row = ResultRow(scm.name, label, seed, kl, se, ate_rmse(scm, model, protocol), cf_rmse(scm, model, protocol))
    if with_timing and hasattr(model, "parameters"):
        t = timing(model)
        row.train_us, row.eval_us, row.sample_us = t["train_step_us"], t["eval_us"], t["sample_us"]
    return row


def write_results(rows: Sequence[ResultRow], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([v if isinstance(v, str) else repr(v) for v in r.as_list()])
    return path


def read_results(path) -> list[ResultRow]:
    with open(path) as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            ResultRow(r["dataset"], r["model"], int(r["seed"]),
                      *(float(r[c]) for c in RESULT_COLUMNS[3:]))
            for r in reader
        ]


def aggregate(rows: Sequence[ResultRow]) -> list[dict]:
    """Mean and standard deviation across seeds per (dataset, model)."""
    groups: dict[tuple[str, str], list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.dataset, r.model), []).append(r)
    out = []
    for (dataset, label), rs in groups.items():
        entry = {"dataset": dataset, "model": label, "n_seeds": len(rs)}
        for c in RESULT_COLUMNS[3:]:
            vals = np.array([getattr(r, c) for r in rs], dtype=float)
            entry[c] = float(vals.mean())
            entry[c + "_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(entry)
    return out


def format_table(summary: Sequence[dict]) -> str:
    cols = ("kl", "ate_rmse", "cf_rmse", "train_us", "eval_us", "sample_us")
    head = f"{'dataset':<16}{'model':<28}" + "".join(f"{c:>16}" for c in cols)
    lines = [head]
    for e in summary:
        cells = "".join(f"{e[c]:>9.2f}±{e[c + '_std']:<6.2f}" for c in cols)
        lines.append(f"{e['dataset']:<16}{e['model']:<28}{cells}")
    return "\n".join(lines)
