"""Factorized base distributions over the exogenous variables."""
from __future__ import annotations

import math

import torch
from torch import nn


class FactorizedBase(nn.Module):
    """Location-scale family with independent dimensions.

    With ``learnable=True`` the per-dimension location and log-scale are
    trained together with the flow.
    """

    kind = "normal"

    def __init__(self, d: int, learnable: bool = False, dtype=torch.float64):
        super().__init__()
        self.d = d
        loc = torch.zeros(d, dtype=dtype)
        log_scale = torch.zeros(d, dtype=dtype)
        if learnable:
            self.loc = nn.Parameter(loc)
            self.log_scale = nn.Parameter(log_scale)
        else:
            self.register_buffer("loc", loc)
            self.register_buffer("log_scale", log_scale)

    def _std_log_prob(self, z):
        raise NotImplementedError

    def _std_sample(self, shape, generator, dtype):
        raise NotImplementedError

    def log_prob(self, u):
        z = (u - self.loc) * torch.exp(-self.log_scale)
        return (self._std_log_prob(z) - self.log_scale).sum(-1)

    def sample(self, n: int, generator: torch.Generator | None = None):
        z = self._std_sample((n, self.d), generator, self.loc.dtype)
        return self.loc + torch.exp(self.log_scale) * z


class NormalBase(FactorizedBase):
    kind = "normal"
    _half_log_2pi = 0.5 * math.log(2 * math.pi)

    def _std_log_prob(self, z):
        return -0.5 * z**2 - self._half_log_2pi

    def _std_sample(self, shape, generator, dtype):
        return torch.randn(shape, generator=generator, dtype=dtype)


class LaplaceBase(FactorizedBase):
    kind = "laplace"

    def _std_log_prob(self, z):
        return -torch.abs(z) - math.log(2.0)

    def _std_sample(self, shape, generator, dtype):
        v = torch.rand(shape, generator=generator, dtype=dtype) - 0.5
        return -torch.sign(v) * torch.log1p(-2 * torch.abs(v))


BASES = {"normal": NormalBase, "laplace": LaplaceBase}
