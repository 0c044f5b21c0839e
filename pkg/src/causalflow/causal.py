"""Interventions and counterfactuals on a bijective flow ``u = T(x)``.

An intervention ``do(x_i = alpha)`` keeps the exogenous distribution of every
variable but ``i`` and replaces ``u_i`` with the single value that makes the
mechanism of ``x_i`` output ``alpha`` given its (sampled) parents.  With a
triangular ``T`` that value is simply the ``i``-th output of ``T`` evaluated
at ``x`` with coordinate ``i`` overwritten.

Node indices are 0-based throughout the Python API.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ImplausibleValueWarning, NonFiniteError, ShapeError
from .flows.model import DTYPE
from .train import jacobian_penalty


@dataclass(frozen=True)
class InterventionQuery:
    target: int
    value: float
    n: int = 10_000
    seed: int | None = 0

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise NonFiniteError("intervention value must be finite")
        if self.n < 1:
            raise ShapeError("n must be positive")


@dataclass(frozen=True)
class CounterfactualQuery:
    factual: np.ndarray
    target: int
    value: float

    def __post_init__(self):
        f = np.asarray(self.factual, dtype=float)
        if not np.all(np.isfinite(f)):
            raise NonFiniteError("factual must be finite")
        object.__setattr__(self, "factual", f)


def _check_target(model, i: int):
    if not 0 <= i < model.d:
        raise IndexError(f"target {i} out of range for d={model.d}")


def check_plausible(model, i: int, alpha) -> bool:
    """Warn when ``alpha`` falls outside the stored 0.1%-99.9% training range."""
    low, high = float(model.x_low[i]), float(model.x_high[i])
    if np.isnan(low) or np.isnan(high):
        return True
    values = np.atleast_1d(np.asarray(alpha, dtype=float))
    ok = bool(np.all((values >= low) & (values <= high)))
    if not ok:
        warnings.warn(
            f"do(x[{i}]) value outside the observed range [{low:.4g}, {high:.4g}]; "
            "the intervened distribution may be ill-defined",
            ImplausibleValueWarning,
            stacklevel=3,
        )
    return ok


def intervene(model, query: InterventionQuery) -> np.ndarray:
    """Samples from ``p(x | do(x_i = alpha))``."""
    i, alpha = query.target, float(query.value)
    _check_target(model, i)
    check_plausible(model, i, alpha)
    gen = torch.Generator().manual_seed(query.seed) if query.seed is not None else None
    with torch.no_grad():
        u = model.sample_base(query.n, gen)
        x = model.inverse(u)
        x[:, i] = alpha
        u_new, _ = model.forward(x)
        u[:, i] = u_new[:, i]
        return model.inverse(u).numpy()


def counterfactual(model, query: CounterfactualQuery, return_u: bool = False):
    """``x^cf`` for factual(s) ``x^f`` under ``do(x_i = alpha)``.

    ``query.factual`` may be one vector or a batch, and ``query.value`` a
    scalar or one value per row.  With ``return_u`` the modified exogenous
    vector is returned as well.
    """
    i = query.target
    _check_target(model, i)
    check_plausible(model, i, query.value)
    x_f = torch.as_tensor(query.factual, dtype=DTYPE)
    single = x_f.ndim == 1
    if single:
        x_f = x_f.unsqueeze(0)
    with torch.no_grad():
        u, _ = model.forward(x_f)
        x_do = x_f.clone()
        x_do[:, i] = torch.as_tensor(query.value, dtype=DTYPE)
        u_do, _ = model.forward(x_do)
        u = u.clone()
        u[:, i] = u_do[:, i]
        x_cf = model.inverse(u).numpy()
    u = u.numpy()
    if single:
        x_cf, u = x_cf[0], u[0]
    return (x_cf, u) if return_u else x_cf


def ate(model, i: int, a: float, b: float, n: int = 10_000, seed: int | None = 0) -> np.ndarray:
    """``E[x | do(x_i=a)] - E[x | do(x_i=b)]``, both arms sharing the exogenous draws."""
    if seed is None:
        seed = int(np.random.SeedSequence().generate_state(1)[0])
    x_a = intervene(model, InterventionQuery(i, a, n, seed))
    x_b = intervene(model, InterventionQuery(i, b, n, seed))
    return (x_a - x_b).mean(axis=0)


def consistency_score(model, data, graph=None) -> float:
    """Batch mean Frobenius norm of ``du/dx`` outside the graph's edges (diagonal exempt)."""
    graph = graph if graph is not None else model.graph
    return float(jacobian_penalty(model, data, graph))


def write_rows(path, rows, names=None):
    """Write a sample matrix as comma-separated text with a header."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    names = names or [f"x{k + 1}" for k in range(rows.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        writer.writerows([[repr(float(v)) for v in row] for row in rows])
