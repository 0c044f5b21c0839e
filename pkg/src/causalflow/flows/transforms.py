"""Elementwise monotonic transformers: affine and rational-quadratic spline.

Both take the unconstrained conditioner output ``h`` of shape
``(batch, d, n_params)`` and return the transformed values together with the
elementwise log-derivative.
"""
from __future__ import annotations

import math

import torch
from torch.nn import functional as F


class AffineTransformer:
    """``y = z * exp(s) + t`` with ``s = bound * tanh(raw / bound)``."""

    n_params = 2

    def __init__(self, scale_bound: float = 5.0):
        self.scale_bound = scale_bound

    def _params(self, h):
        shift, raw = h[..., 0], h[..., 1]
        return shift, self.scale_bound * torch.tanh(raw / self.scale_bound)

    def forward(self, z, h):
        shift, s = self._params(h)
        return z * torch.exp(s) + shift, s

    def inverse(self, y, h):
        shift, s = self._params(h)
        return (y - shift) * torch.exp(-s), -s


class SplineTransformer:
    """Monotonic rational-quadratic spline on ``[-B, B]`` with identity tails.

    Parameters per dimension: ``K`` bin widths, ``K`` bin heights and ``K - 1``
    interior knot derivatives (the boundary derivatives are fixed to 1 so the
    tails join smoothly).
    """

    def __init__(self, num_bins: int = 8, tail_bound: float = 10.0, min_bin_width: float = 1e-3,
                 min_bin_height: float = 1e-3, min_derivative: float = 1e-3):
        if num_bins < 2:
            raise ValueError("a spline needs at least two bins")
        self.num_bins = num_bins
        self.tail_bound = tail_bound
        self.min_bin_width = min_bin_width
        self.min_bin_height = min_bin_height
        self.min_derivative = min_derivative
        # zero raw derivative maps to a knot slope of exactly one
        self._deriv_offset = math.log(math.expm1(1.0 - min_derivative))

    @property
    def n_params(self) -> int:
        return 3 * self.num_bins - 1

    def _knots(self, h):
        k, bound = self.num_bins, self.tail_bound
        raw_w, raw_h, raw_d = h[..., :k], h[..., k:2 * k], h[..., 2 * k:]

        def edges(raw, minimum):
            frac = minimum + (1 - minimum * k) * torch.softmax(raw, dim=-1)
            cum = F.pad(torch.cumsum(frac, dim=-1), (1, 0))
            cum = 2 * bound * cum - bound
            cum = torch.cat([torch.full_like(cum[..., :1], -bound), cum[..., 1:-1],
                             torch.full_like(cum[..., :1], bound)], dim=-1)
            return cum, cum[..., 1:] - cum[..., :-1]

        cumw, widths = edges(raw_w, self.min_bin_width)
        cumh, heights = edges(raw_h, self.min_bin_height)
        inner = self.min_derivative + F.softplus(raw_d + self._deriv_offset)
        one = torch.ones_like(inner[..., :1])
        derivs = torch.cat([one, inner, one], dim=-1)
        return cumw, widths, cumh, heights, derivs

    @staticmethod
    def _gather(t, idx):
        return torch.gather(t, -1, idx.unsqueeze(-1)).squeeze(-1)

    def _bin(self, edges, v):
        idx = torch.searchsorted(edges[..., 1:-1].contiguous(), v.unsqueeze(-1).contiguous()).squeeze(-1)
        return idx.clamp(0, self.num_bins - 1)

    def forward(self, z, h):
        bound = self.tail_bound
        inside = (z >= -bound) & (z <= bound)
        zc = z.clamp(-bound, bound)
        cumw, widths, cumh, heights, derivs = self._knots(h)
        idx = self._bin(cumw, zc)
        x_k, w_k = self._gather(cumw, idx), self._gather(widths, idx)
        y_k, h_k = self._gather(cumh, idx), self._gather(heights, idx)
        d_k, d_k1 = self._gather(derivs, idx), self._gather(derivs, idx + 1)
        s_k = h_k / w_k
        xi = ((zc - x_k) / w_k).clamp(0.0, 1.0)
        t = xi * (1 - xi)
        denom = s_k + (d_k1 + d_k - 2 * s_k) * t
        y = y_k + h_k * (s_k * xi**2 + d_k * t) / denom
        deriv = s_k**2 * (d_k1 * xi**2 + 2 * s_k * t + d_k * (1 - xi) ** 2) / denom**2
        logdet = torch.log(deriv)
        return torch.where(inside, y, z), torch.where(inside, logdet, torch.zeros_like(logdet))

    def inverse(self, y, h):
        bound = self.tail_bound
        inside = (y >= -bound) & (y <= bound)
        yc = y.clamp(-bound, bound)
        cumw, widths, cumh, heights, derivs = self._knots(h)
        idx = self._bin(cumh, yc)
        x_k, w_k = self._gather(cumw, idx), self._gather(widths, idx)
        y_k, h_k = self._gather(cumh, idx), self._gather(heights, idx)
        d_k, d_k1 = self._gather(derivs, idx), self._gather(derivs, idx + 1)
        s_k = h_k / w_k
        dy = yc - y_k
        c2 = d_k1 + d_k - 2 * s_k
        a = h_k * (s_k - d_k) + dy * c2
        b = h_k * d_k - dy * c2
        c = -s_k * dy
        disc = (b**2 - 4 * a * c).clamp_min(0.0)
        xi = ((2 * c) / (-b - torch.sqrt(disc))).clamp(0.0, 1.0)
        z = xi * w_k + x_k
        t = xi * (1 - xi)
        denom = s_k + c2 * t
        deriv = s_k**2 * (d_k1 * xi**2 + 2 * s_k * t + d_k * (1 - xi) ** 2) / denom**2
        logdet = -torch.log(deriv)
        return torch.where(inside, z, y), torch.where(inside, logdet, torch.zeros_like(logdet))
