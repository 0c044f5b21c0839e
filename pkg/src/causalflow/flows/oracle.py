"""A ground-truth SCM exposed through the flow interface.

``forward`` is the analytic abduction map (coordinates whose mechanism
cannot be inverted at the given input come back as NaN) and ``inverse`` the recursive
solution, so every causal query run through the flow machinery on an
:class:`OracleFlow` can be compared against the classical surgery oracles.
"""
from __future__ import annotations

import numpy as np
import torch

from .. import scm as scm_lib
from ..errors import DomainError
from .model import DTYPE, _as_batch


class OracleFlow:
    def __init__(self, scm: scm_lib.SCMSpec):
        self.scm = scm
        self.d = scm.d
        self.graph = scm.graph
        self.order = scm.graph.ordering
        self.x_low = torch.full((self.d,), float("nan"), dtype=DTYPE)
        self.x_high = torch.full((self.d,), float("nan"), dtype=DTYPE)

    def __repr__(self):
        return f"OracleFlow({self.scm.name})"

    def forward(self, x):
        x, single = _as_batch(x)
        xn = x.detach().numpy()
        u = np.empty_like(xn)
        logdet = np.zeros(len(xn))
        for i, m in enumerate(self.scm.mechanisms):
            p = xn[:, list(m.parents)]
            try:
                u[:, i] = m.inverse(p, xn[:, i])
            except DomainError:
                # only reachable on partially intervened inputs, where the
                # caller reads a single coordinate
                u[:, i] = np.nan
            logdet -= np.log(np.abs(m.du(p, u[:, i])))
        u, logdet = torch.as_tensor(u, dtype=DTYPE), torch.as_tensor(logdet, dtype=DTYPE)
        return (u[0], logdet[0]) if single else (u, logdet)

    __call__ = forward

    def inverse(self, u):
        u, single = _as_batch(u)
        x = torch.as_tensor(scm_lib.solve_recursive(self.scm, u.detach().numpy()), dtype=DTYPE)
        return x[0] if single else x

    def log_prob(self, x):
        x, single = _as_batch(x)
        lp = torch.as_tensor(scm_lib.log_prob_true(self.scm, x.detach().numpy()), dtype=DTYPE)
        return lp[0] if single else lp

    def sample_base(self, n: int, generator: torch.Generator | None = None):
        if self.scm.exogenous == "uniform":
            return torch.rand((n, self.d), generator=generator, dtype=DTYPE)
        return torch.randn((n, self.d), generator=generator, dtype=DTYPE)

    def sample(self, n: int, seed: int | None = None):
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        return self.inverse(self.sample_base(n, gen))

    def eval(self):
        return self
