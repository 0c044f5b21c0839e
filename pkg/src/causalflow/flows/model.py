"""Causal normalizing flows built from masked autoregressive layers.

A flow ``T`` maps observations ``x`` to exogenous variables ``u``.  Two
parameterizations are supported:

* ``abductive``: the layers are applied in the ``x -> u`` direction, so
  density evaluation is a single pass per layer while sampling inverts each
  layer one dimension at a time.
* ``generative``: the layers are applied in the ``u -> x`` direction, which
  makes sampling a single pass and density evaluation sequential.

Conditioner masks come either from a causal graph (parents only) or from a
causal ordering (all predecessors).  No permutation is applied between layers.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, DiameterWarning, NonFiniteError, ShapeError
from ..graph import BlockGraph, CausalGraph, diameter
from .base import BASES
from .conditioner import ACTIVATIONS, MaskedConditioner
from .transforms import AffineTransformer, SplineTransformer

DTYPE = torch.float64

DIRECTIONS = ("abductive", "generative")
MASK_SOURCES = ("graph", "ordering")
TRANSFORMERS = ("affine", "spline")


@dataclass(frozen=True)
class DesignChoice:
    direction: str = "abductive"
    mask_source: str = "graph"
    num_layers: int = 1
    transformer: str = "affine"
    base: str = "normal"
    learn_base: bool = False
    hidden: tuple[int, ...] = (32, 32, 32)
    activation: str = "elu"
    num_bins: int = 8
    tail_bound: float = 10.0
    scale_bound: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        checks = [
            (self.direction in DIRECTIONS, f"direction must be one of {DIRECTIONS}"),
            (self.mask_source in MASK_SOURCES, f"mask_source must be one of {MASK_SOURCES}"),
            (self.transformer in TRANSFORMERS, f"transformer must be one of {TRANSFORMERS}"),
            (self.base in BASES, f"base must be one of {tuple(BASES)}"),
            (self.activation in ACTIVATIONS, f"activation must be one of {tuple(ACTIVATIONS)}"),
            (int(self.num_layers) >= 1, "num_layers must be >= 1"),
            (int(self.num_bins) >= 2, "spline needs at least 2 bins"),
            (self.tail_bound > 0 and self.scale_bound > 0, "bounds must be positive"),
            (all(w > 0 for w in self.hidden), "hidden widths must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DesignChoice":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown design keys: {sorted(unknown)}")
        return cls(**data)


def _transformer(design: DesignChoice):
    if design.transformer == "affine":
        return AffineTransformer(design.scale_bound)
    return SplineTransformer(design.num_bins, design.tail_bound)


class FlowLayer(nn.Module):
    """One autoregressive layer ``y_i = tau(z_i; c_i(z_masked))``."""

    def __init__(self, mask: np.ndarray, design: DesignChoice):
        super().__init__()
        self.transformer = _transformer(design)
        self.conditioner = MaskedConditioner(mask, self.transformer.n_params, design.hidden,
                                             design.activation, dtype=DTYPE)

    def forward(self, z):
        y, logdet = self.transformer.forward(z, self.conditioner(z))
        return y, logdet.sum(-1)

    def inverse(self, y, order: Sequence[int]):
        """Invert dimension by dimension following ``order``."""
        d = y.shape[-1]
        z = torch.zeros_like(y)
        eye = torch.eye(d, dtype=torch.bool, device=y.device)
        for i in order:
            zi, _ = self.transformer.inverse(y, self.conditioner(z))
            z = torch.where(eye[i], zi[:, i:i + 1], z)
        z, logdet = self.transformer.inverse(y, self.conditioner(z))
        return z, logdet.sum(-1)


def _as_batch(x) -> tuple[torch.Tensor, bool]:
    t = torch.as_tensor(x, dtype=DTYPE)
    single = t.ndim == 1
    return (t.unsqueeze(0) if single else t), single


class FlowModel(nn.Module):
    """Stack of autoregressive layers plus a fixed standardization of ``x``.

    ``loc`` and ``scale`` standardize the observations before the first layer;
    they start as the identity and are set by the trainer from training data.
    ``x_low``/``x_high`` hold empirical 0.1%/99.9% quantiles used to flag
    implausible intervention values (NaN until set).
    """

    def __init__(self, design: DesignChoice, cond_mask: np.ndarray, order: Sequence[int],
                 graph: CausalGraph | None = None):
        super().__init__()
        cond_mask = np.array(cond_mask, dtype=np.int8)
        d = cond_mask.shape[0]
        self.design = design
        self.d = d
        self.order = tuple(int(i) for i in order)
        self.graph = graph
        self.register_buffer("cond_mask", torch.as_tensor(cond_mask))
        self.layers = nn.ModuleList(FlowLayer(cond_mask, design) for _ in range(design.num_layers))
        self.base = BASES[design.base](d, learnable=design.learn_base, dtype=DTYPE)
        self.register_buffer("loc", torch.zeros(d, dtype=DTYPE))
        self.register_buffer("scale", torch.ones(d, dtype=DTYPE))
        self.register_buffer("x_low", torch.full((d,), float("nan"), dtype=DTYPE))
        self.register_buffer("x_high", torch.full((d,), float("nan"), dtype=DTYPE))

    # -- structure -------------------------------------------------------
    @property
    def num_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def layer_jacobian_support(self) -> np.ndarray:
        """Support of every layer's Jacobian: ``I + conditioner mask``."""
        return (np.eye(self.d, dtype=np.int8) | self.cond_mask.numpy()).astype(np.int8)

    def set_standardization(self, loc, scale):
        scale = torch.as_tensor(scale, dtype=DTYPE)
        if torch.any(scale <= 0):
            raise ValueError("scale must be positive")
        self.loc.copy_(torch.as_tensor(loc, dtype=DTYPE))
        self.scale.copy_(scale)

    def set_plausible_range(self, low, high):
        self.x_low.copy_(torch.as_tensor(low, dtype=DTYPE))
        self.x_high.copy_(torch.as_tensor(high, dtype=DTYPE))

    # -- maps ----------------------------------------------------------------
    def _check(self, t):
        if t.shape[-1] != self.d:
            raise ShapeError(f"expected {self.d} columns, got {t.shape[-1]}")
        if not torch.isfinite(t).all():
            raise NonFiniteError("non-finite input")

    def forward(self, x):
        """``x -> (u, log|det du/dx|)``."""
        x, single = _as_batch(x)
        self._check(x)
        z = (x - self.loc) / self.scale
        logdet = -torch.log(self.scale).sum().expand(z.shape[0])
        for layer in self.layers:
            if self.design.direction == "abductive":
                z, ld = layer(z)
            else:
                z, ld = layer.inverse(z, self.order)
            logdet = logdet + ld
        if single:
            return z[0], logdet[0]
        return z, logdet

    def inverse(self, u):
        """``u -> x``."""
        u, single = _as_batch(u)
        self._check(u)
        z = u
        for layer in reversed(self.layers):
            if self.design.direction == "abductive":
                z, _ = layer.inverse(z, self.order)
            else:
                z, _ = layer(z)
        x = z * self.scale + self.loc
        return x[0] if single else x

    def log_prob(self, x):
        u, logdet = self.forward(x)
        return self.base.log_prob(u) + logdet

    def sample_base(self, n: int, generator: torch.Generator | None = None):
        return self.base.sample(n, generator)

    def sample(self, n: int, seed: int | None = None):
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        with torch.no_grad():
            return self.inverse(self.sample_base(n, gen))

    def jacobian_x(self, x, create_graph: bool = False):
        """Exact ``du/dx`` per input row, shape ``(batch, d, d)``."""
        x, single = _as_batch(x)
        x = x.detach().clone().requires_grad_(True)
        with torch.enable_grad():
            u, _ = self.forward(x)
            rows = [
                torch.autograd.grad(u[:, i].sum(), x, create_graph=create_graph, retain_graph=True)[0]
                for i in range(self.d)
            ]
        jac = torch.stack(rows, dim=1)
        if not create_graph:
            jac = jac.detach()
        return jac[0] if single else jac

    # -- flat parameter access ------------------------------------------
    def parameter_vector(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()])

    def load_parameter_vector(self, vec):
        vec = torch.as_tensor(vec, dtype=DTYPE)
        if vec.numel() != self.num_params:
            raise ShapeError(f"expected {self.num_params} parameters, got {vec.numel()}")
        offset = 0
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(vec[offset:offset + p.numel()].view_as(p))
                offset += p.numel()


def _ordering_mask(order: Sequence[int]) -> np.ndarray:
    d = len(order)
    rank = np.empty(d, dtype=int)
    rank[list(order)] = np.arange(d)
    return (rank[None, :] < rank[:, None]).astype(np.int8)


def build_flow(design: DesignChoice, structure, seed: int = 0) -> FlowModel:
    """Assemble a flow whose conditioner masks follow ``design``.

    ``structure`` is a :class:`CausalGraph`, a :class:`BlockGraph` (its lifted
    graph is used), a permutation giving a causal ordering, or an integer
    ``d`` for the identity ordering.  Graph masks require a graph.
    """
    graph = None
    if isinstance(structure, BlockGraph):
        structure = structure.graph
    if isinstance(structure, CausalGraph):
        graph = structure
        order = graph.ordering
    elif isinstance(structure, (int, np.integer)):
        order = tuple(range(int(structure)))
    else:
        order = tuple(int(i) for i in structure)
        if sorted(order) != list(range(len(order))):
            raise ConfigError("ordering must be a permutation of 0..d-1")

    if design.mask_source == "graph":
        if graph is None:
            raise ConfigError("graph masks need a CausalGraph or BlockGraph")
        cond_mask = graph.adjacency
        if design.direction == "generative" and design.num_layers < diameter(graph):
            warnings.warn(
                f"generative flow with {design.num_layers} layer(s) cannot avoid shortcuts on a graph "
                f"of diameter {diameter(graph)}",
                DiameterWarning,
                stacklevel=2,
            )
    else:
        cond_mask = _ordering_mask(order)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = FlowModel(design, cond_mask, order, graph)
    return model
