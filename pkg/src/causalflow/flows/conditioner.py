"""Masked MLP conditioners with an arbitrary (acyclic) dependency mask."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

ACTIVATIONS = {
    "elu": nn.ELU,
    "relu": nn.ReLU,
    "tanh": nn.Tanh,
    "leaky_relu": nn.LeakyReLU,
}


class MaskedLinear(nn.Linear):
    def __init__(self, mask: np.ndarray, dtype=torch.float64):
        out_features, in_features = mask.shape
        super().__init__(in_features, out_features, dtype=dtype)
        self.register_buffer("mask", torch.as_tensor(mask, dtype=dtype))

    def forward(self, x):
        return F.linear(x, self.weight * self.mask, self.bias)


def made_masks(mask: np.ndarray, hidden: Sequence[int], n_params: int) -> list[np.ndarray]:
    """Per-layer connectivity so output ``i`` depends exactly on inputs ``mask[i]``.

    Every hidden unit is labelled with one distinct non-empty row pattern of
    ``mask`` (cycling through them) and only sees the inputs of that pattern.
    A unit feeds another unit, or an output, only when its input set is a
    subset of the receiver's, so no forbidden dependency can leak through.
    """
    mask = np.asarray(mask) != 0
    d = mask.shape[0]
    patterns: list[np.ndarray] = []
    for row in mask:
        if row.any() and not any(np.array_equal(row, p) for p in patterns):
            patterns.append(row)
    out_rows = np.repeat(mask, n_params, axis=0)  # output unit (i, p) -> row i
    if not hidden:
        return [out_rows.astype(np.float64)]
    if not patterns:
        sets = [np.zeros((w, d), dtype=bool) for w in hidden]
    else:
        sets = [np.stack([patterns[k % len(patterns)] for k in range(w)]) for w in hidden]

    def subset(a, b):  # a[k] subset of b[m] -> (len(b), len(a))
        return ~np.any(a[None, :, :] & ~b[:, None, :], axis=-1)

    masks = [sets[0].astype(np.float64)]
    for prev, nxt in zip(sets[:-1], sets[1:]):
        m = subset(prev, nxt) & nxt.any(axis=1)[:, None] & prev.any(axis=1)[None, :]
        masks.append(m.astype(np.float64))
    last = sets[-1]
    m = subset(last, out_rows) & last.any(axis=1)[None, :]
    masks.append(m.astype(np.float64))
    return masks


class MaskedConditioner(nn.Module):
    """MLP mapping ``z`` to ``(batch, d, n_params)`` with output row ``i`` seeing only ``mask[i]``.

    The final layer starts at zero so every transformer starts as the identity.
    """

    def __init__(self, mask, n_params: int, hidden: Sequence[int] = (32, 32), activation: str = "elu",
                 dtype=torch.float64):
        super().__init__()
        mask = np.array(mask, dtype=np.int8)
        self.d = mask.shape[0]
        self.n_params = n_params
        self.hidden = tuple(hidden)
        self.register_buffer("dependency_mask", torch.as_tensor(mask, dtype=torch.int8))
        layers: list[nn.Module] = []
        layer_masks = made_masks(mask, self.hidden, n_params)
        for k, m in enumerate(layer_masks):
            layers.append(MaskedLinear(m, dtype=dtype))
            if k < len(layer_masks) - 1:
                layers.append(ACTIVATIONS[activation]())
        self.net = nn.Sequential(*layers)
        last = self.net[-1]
        nn.init.zeros_(last.weight)
        nn.init.zeros_(last.bias)

    def forward(self, z):
        return self.net(z).view(z.shape[0], self.d, self.n_params)
