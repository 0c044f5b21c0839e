"""Ground-truth structural causal models used as oracles.

Each mechanism ships its forward map, its analytic inverse in the exogenous
argument and the partial derivative with respect to that argument, so the
oracles below (abduction, interventions, counterfactuals, densities) are exact
up to floating point.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy import special

from .errors import DomainError, ShapeError, UnknownSCMError
from .graph import CausalGraph, transitive_closure, validate_dag

__all__ = [
    "Mechanism",
    "LinearForm",
    "SCMSpec",
    "Dataset",
    "SCM_NAMES",
    "get_scm",
    "list_scms",
    "sample_exogenous",
    "sample",
    "solve_recursive",
    "abduct_true",
    "intervene_true",
    "counterfactual_true",
    "ate_true",
    "log_prob_true",
    "linear_moments",
    "softplus",
    "softplus_inv",
]

Array = np.ndarray


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("softplus inverse requires a strictly positive argument")
    return y + np.log(-np.expm1(-y))


def _laplace_quantile(loc, scale, p):
    p = np.asarray(p, dtype=float)
    centered = p - 0.5
    return loc - scale * np.sign(centered) * np.log1p(-2.0 * np.abs(centered))


def _laplace_cdf(loc, scale, x):
    z = (np.asarray(x, dtype=float) - loc) / scale
    return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))


def _laplace_quantile_du(scale, p):
    p = np.asarray(p, dtype=float)
    return scale / np.minimum(p, 1.0 - p)


@dataclass(frozen=True)
class Mechanism:
    """Scalar structural equation ``x_i = forward(x_parents, u_i)``.

    ``x_parents`` is an ``(n, k)`` array in the order of ``parents``.
    """

    parents: tuple[int, ...]
    forward: Callable[[Array, Array], Array]
    inverse: Callable[[Array, Array], Array]
    du: Callable[[Array, Array], Array]


@dataclass(frozen=True)
class LinearForm:
    """``x = weights @ x + noise * u + offset`` (weights row = effect)."""

    weights: Array
    noise: Array
    offset: Array


@dataclass(frozen=True)
class SCMSpec:
    name: str
    graph: CausalGraph
    mechanisms: tuple[Mechanism, ...]
    exogenous: str = "normal"
    linear: LinearForm | None = None

    def __post_init__(self):
        if len(self.mechanisms) != self.graph.d:
            raise ShapeError("one mechanism per node required")
        for i, m in enumerate(self.mechanisms):
            if tuple(sorted(m.parents)) != self.graph.parents(i):
                raise ShapeError(f"mechanism {i} parents {m.parents} disagree with the graph")
        if self.exogenous not in ("normal", "uniform"):
            raise ShapeError(f"unsupported exogenous distribution {self.exogenous!r}")

    @property
    def d(self) -> int:
        return self.graph.d

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f"x{i + 1}" for i in range(self.d))


@dataclass(frozen=True)
class Dataset:
    x: Array
    u: Array
    seed: int | None = None

    def __len__(self):
        return self.x.shape[0]


# -- zoo ---------------------------------------------------------------------

def _m(parents, forward, inverse, du):
    return Mechanism(tuple(parents), forward, inverse, du)


def _root(shift=0.0, scale=1.0):
    return _m((), lambda p, u: scale * u + shift, lambda p, x: (x - shift) / scale,
              lambda p, u: np.full_like(u, scale))


def _additive(parents, fn, scale=1.0):
    """x = fn(parents) + scale * u."""
    return _m(parents, lambda p, u: fn(p) + scale * u, lambda p, x: (x - fn(p)) / scale,
              lambda p, u: np.full_like(u, scale))


def _linear(edges: Mapping[int, float], noise: float, offset: float = 0.0):
    parents = tuple(sorted(edges))
    coef = np.array([edges[j] for j in parents], dtype=float)
    return _additive(parents, lambda p: p @ coef + offset, noise)


def _linear_scm(name, d, weights: Mapping[tuple[int, int], float], noise, offset=None):
    w = np.zeros((d, d))
    for (effect, cause), value in weights.items():
        w[effect, cause] = value
    offset = np.zeros(d) if offset is None else np.asarray(offset, dtype=float)
    noise = np.asarray(noise, dtype=float)
    mechanisms = []
    for i in range(d):
        edges = {int(j): w[i, j] for j in np.flatnonzero(w[i])}
        mechanisms.append(_linear(edges, noise[i], offset[i]))
    graph = validate_dag((w != 0).astype(int))
    return SCMSpec(name, graph, tuple(mechanisms), "normal", LinearForm(w, noise, offset))


def _graph(d, edges):
    return CausalGraph.from_edges(d, edges)


def _chain3_lin():
    return _linear_scm("chain3-lin", 3, {(1, 0): 10.0, (2, 1): 0.25}, [1.0, -1.0, 2.0])


def _chain3_nlin():
    mechs = (
        _root(),
        _additive((0,), lambda p: np.exp(p[:, 0] / 2.0), 0.25),
        _additive((1,), lambda p: (p[:, 0] - 5.0) ** 3 / 15.0),
    )
    return SCMSpec("chain3-nlin", _graph(3, [(0, 1), (1, 2)]), mechs)


def _chain4_lin():
    return _linear_scm("chain4-lin", 4, {(1, 0): 5.0, (2, 1): -0.5, (3, 2): 1.0}, [1.0, -1.0, -1.5, 1.0])


def _chain5_lin():
    return _linear_scm(
        "chain5-lin", 5, {(1, 0): 10.0, (2, 1): 0.25, (3, 2): 1.0, (4, 3): -1.0}, [1.0, -1.0, 2.0, 1.0, 1.0]
    )


def _collider_lin():
    return _linear_scm("collider-lin", 3, {(2, 1): 0.25, (2, 0): -0.5}, [1.0, -1.0, 0.5], [0.0, 2.0, 0.0])


def _fork_lin():
    return _linear_scm(
        "fork-lin", 4, {(2, 1): 0.25, (2, 0): -1.5, (3, 2): 1.0}, [1.0, -1.0, 0.5, 0.25], [0.0, 2.0, 0.0, 0.0]
    )


def _fork_nlin():
    mechs = (
        _root(),
        _root(),
        _additive((0, 1), lambda p: 4.0 * special.expit(p[:, 0] + p[:, 1]) - p[:, 1] ** 2, 0.5),
        _additive((2,), lambda p: 20.0 * special.expit(p[:, 0] - 0.5 * p[:, 0] ** 2)),
    )
    return SCMSpec("fork-nlin", _graph(4, [(0, 2), (1, 2), (2, 3)]), mechs)


def _l(x, y):
    return softplus(x + 1.0) + softplus(0.5 + y) - 3.0


def _l_mechanism(parent):
    # x = s(p + 1) + s(0.5 + u) - 3  =>  u = s^{-1}(x - s(p + 1) + 3) - 0.5
    return _m(
        (parent,),
        lambda p, u: _l(p[:, 0], u),
        lambda p, x: softplus_inv(x - softplus(p[:, 0] + 1.0) + 3.0) - 0.5,
        lambda p, u: special.expit(0.5 + u),
    )


def _largebd_nlin():
    def x9_loc(p):
        return -softplus((p[:, 0] * 1.3 + p[:, 1]) / 3.0 + 1.0) + 2.0

    mechs = (
        _m((), lambda p, u: softplus(1.8 * u) - 1.0, lambda p, x: softplus_inv(x + 1.0) / 1.8,
           lambda p, u: 1.8 * special.expit(1.8 * u)),
        _additive((0,), lambda p: 1.5 * _l(p[:, 0], 0.0), 0.25),
        _l_mechanism(0),
        _l_mechanism(1),
        _l_mechanism(2),
        _l_mechanism(3),
        _l_mechanism(4),
        _additive((5,), lambda p: softplus(p[:, 0] + 1.0) - 1.0, 0.3),
        _m((6, 7), lambda p, u: _laplace_quantile(x9_loc(p), 0.6, u),
           lambda p, x: _laplace_cdf(x9_loc(p), 0.6, x),
           lambda p, u: _laplace_quantile_du(0.6, u)),
    )
    edges = [(0, 1), (0, 2), (1, 3), (2, 4), (3, 5), (4, 6), (5, 7), (6, 8), (7, 8)]
    return SCMSpec("largebd-nlin", _graph(9, edges), mechs, exogenous="uniform")


def _simpson_nlin():
    def x3_rest(p):
        return np.tanh(2.0 * p[:, 1]) + 1.5 * p[:, 0] - 1.0

    def x3_inverse(p, x):
        arg = x - x3_rest(p)
        if np.any(np.abs(arg) >= 1.0):
            raise DomainError("x3 outside the image of the tanh noise term")
        return np.arctanh(arg)

    mechs = (
        _root(),
        _additive((0,), lambda p: softplus(1.0 - p[:, 0]), np.sqrt(3.0 / 20.0)),
        _m((0, 1), lambda p, u: x3_rest(p) + np.tanh(u), x3_inverse, lambda p, u: 1.0 - np.tanh(u) ** 2),
        _additive((2,), lambda p: (p[:, 0] - 4.0) / 5.0 + 3.0, 1.0 / np.sqrt(10.0)),
    )
    return SCMSpec("simpson-nlin", _graph(4, [(0, 1), (0, 2), (1, 2), (2, 3)]), mechs)


def _simpson_symprod():
    mechs = (
        _root(),
        _additive((0,), lambda p: 2.0 * np.tanh(2.0 * p[:, 0]), 1.0 / np.sqrt(10.0)),
        _additive((0, 1), lambda p: 0.5 * p[:, 0] * p[:, 1], 1.0 / np.sqrt(2.0)),
        _additive((0,), lambda p: np.tanh(1.5 * p[:, 0]), np.sqrt(3.0 / 10.0)),
    )
    return SCMSpec("simpson-symprod", _graph(4, [(0, 1), (0, 2), (1, 2), (0, 3)]), mechs)


def _triangle_lin():
    return _linear_scm(
        "triangle-lin", 3, {(1, 0): 10.0, (2, 1): 0.5, (2, 0): 1.0}, [1.0, -1.0, 1.0], [1.0, 0.0, 0.0]
    )


def _triangle_nlin():
    mechs = (
        _root(shift=1.0),
        _additive((0,), lambda p: 2.0 * p[:, 0] ** 2),
        _additive((0, 1), lambda p: 20.0 * special.expit(p[:, 1] ** 2 - p[:, 0])),
    )
    return SCMSpec("triangle-nlin", _graph(3, [(0, 1), (0, 2), (1, 2)]), mechs)


def _chain3_toy():
    return _linear_scm("chain3-toy", 3, {(1, 0): 2.0, (2, 1): 3.0}, [1.0, 1.0, 1.0])


def _triangle_ratio():
    # x2 = x1^2 * u2 is bijective in u2 only for x1 != 0
    def x2_inverse(p, x):
        sq = p[:, 0] ** 2
        if np.any(sq == 0):
            raise DomainError("x1 == 0 makes the x2 mechanism non-invertible")
        return x / sq

    mechs = (
        _root(),
        _m((0,), lambda p, u: p[:, 0] ** 2 * u, x2_inverse, lambda p, u: p[:, 0] ** 2),
        _additive((0, 1), lambda p: 2.0 * p[:, 0] + p[:, 1] / p[:, 0] + p[:, 1] / p[:, 0] ** 2),
    )
    return SCMSpec("triangle-ratio", _graph(3, [(0, 1), (0, 2), (1, 2)]), mechs)


_ZOO: dict[str, Callable[[], SCMSpec]] = {
    "chain3-lin": _chain3_lin,
    "chain3-nlin": _chain3_nlin,
    "chain4-lin": _chain4_lin,
    "chain5-lin": _chain5_lin,
    "collider-lin": _collider_lin,
    "fork-lin": _fork_lin,
    "fork-nlin": _fork_nlin,
    "largebd-nlin": _largebd_nlin,
    "simpson-nlin": _simpson_nlin,
    "simpson-symprod": _simpson_symprod,
    "triangle-lin": _triangle_lin,
    "triangle-nlin": _triangle_nlin,
}
# small worked examples, not part of the benchmark suite
_EXTRA: dict[str, Callable[[], SCMSpec]] = {
    "chain3-toy": _chain3_toy,
    "triangle-ratio": _triangle_ratio,
}

SCM_NAMES: tuple[str, ...] = tuple(_ZOO)


def list_scms(include_extra: bool = False) -> list[str]:
    return list(_ZOO) + (list(_EXTRA) if include_extra else [])


def get_scm(name: str) -> SCMSpec:
    try:
        factory = _ZOO.get(name) or _EXTRA[name]
    except KeyError:
        raise UnknownSCMError(f"unknown SCM {name!r}; choose from {', '.join(list_scms(True))}") from None
    return factory()


# -- oracles -----------------------------------------------------------------

def _rows(a, d) -> tuple[Array, bool]:
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[-1] != d:
        raise ShapeError(f"expected {d} columns, got {a.shape[-1]}")
    return a, single


def sample_exogenous(scm: SCMSpec, n: int, rng) -> Array:
    rng = np.random.default_rng(rng)
    if scm.exogenous == "uniform":
        return rng.random((n, scm.d))
    return rng.standard_normal((n, scm.d))


def solve_recursive(scm: SCMSpec, u, do: Mapping[int, float] | None = None) -> Array:
    """Map exogenous draws to observations, optionally with hard interventions."""
    u, single = _rows(u, scm.d)
    do = do or {}
    x = np.empty_like(u)
    for i in scm.graph.ordering:
        if i in do:
            x[:, i] = do[i]
            continue
        m = scm.mechanisms[i]
        x[:, i] = m.forward(x[:, list(m.parents)], u[:, i])
    return x[0] if single else x


def abduct_true(scm: SCMSpec, x) -> Array:
    x, single = _rows(x, scm.d)
    u = np.empty_like(x)
    for i, m in enumerate(scm.mechanisms):
        u[:, i] = m.inverse(x[:, list(m.parents)], x[:, i])
    if not np.all(np.isfinite(u)):
        raise DomainError("abduction produced non-finite exogenous values")
    return u[0] if single else u


def sample(scm: SCMSpec, n: int, seed=None) -> Dataset:
    u = sample_exogenous(scm, n, seed)
    return Dataset(solve_recursive(scm, u), u, seed if isinstance(seed, int) else None)


def intervene_true(scm: SCMSpec, i: int, alpha: float, n: int, seed=None) -> Array:
    """Samples of ``x | do(x_i = alpha)`` by replacing mechanism ``i`` with a constant."""
    if not 0 <= i < scm.d:
        raise IndexError(f"node {i} out of range")
    u = sample_exogenous(scm, n, seed)
    return solve_recursive(scm, u, {i: float(alpha)})


def counterfactual_true(scm: SCMSpec, x_f, i: int, alpha) -> Array:
    """Abduct, fix ``x_i = alpha``, and recompute the descendants of ``i`` only.

    Non-descendants are copied from the factual, so they are bit-identical.
    ``alpha`` may be a scalar or one value per factual row.
    """
    x_f, single = _rows(x_f, scm.d)
    u = abduct_true(scm, x_f)
    x = x_f.copy()
    x[:, i] = alpha
    closure = transitive_closure(scm.graph)
    for k in scm.graph.ordering:
        if k != i and closure[k, i]:
            m = scm.mechanisms[k]
            x[:, k] = m.forward(x[:, list(m.parents)], u[:, k])
    return x[0] if single else x


def ate_true(scm: SCMSpec, i: int, a: float, b: float, n: int = 10_000, seed=None) -> Array:
    """``E[x | do(x_i=a)] - E[x | do(x_i=b)]`` with common random numbers across arms."""
    u = sample_exogenous(scm, n, seed)
    return (solve_recursive(scm, u, {i: float(a)}) - solve_recursive(scm, u, {i: float(b)})).mean(axis=0)


def _base_logpdf(scm: SCMSpec, u: Array) -> Array:
    if scm.exogenous == "uniform":
        return np.where((u > 0) & (u < 1), 0.0, -np.inf)
    return -0.5 * u**2 - 0.5 * np.log(2 * np.pi)


def log_prob_true(scm: SCMSpec, x) -> Array:
    """Exact log-density via change of variables through the analytic inverse."""
    x, single = _rows(x, scm.d)
    u = abduct_true(scm, x)
    out = _base_logpdf(scm, u).sum(axis=1)
    for i, m in enumerate(scm.mechanisms):
        out -= np.log(np.abs(m.du(x[:, list(m.parents)], u[:, i])))
    return out[0] if single else out


def linear_moments(scm: SCMSpec, do: Mapping[int, float] | None = None) -> tuple[Array, Array]:
    """Exact mean and covariance of a linear-Gaussian SCM, optionally intervened."""
    if scm.linear is None or scm.exogenous != "normal":
        raise ValueError(f"{scm.name} is not linear-Gaussian")
    w = scm.linear.weights.copy()
    noise = scm.linear.noise.copy()
    offset = scm.linear.offset.copy()
    for i, alpha in (do or {}).items():
        w[i] = 0.0
        noise[i] = 0.0
        offset[i] = alpha
    m = np.linalg.inv(np.eye(scm.d) - w)
    mean = m @ offset
    cov = (m * noise**2) @ m.T
    return mean, cov
