"""Maximum-likelihood training of flow models, with optional Jacobian penalty."""
from __future__ import annotations

import copy
import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, NonFiniteError, ShapeError
from .flows.model import DTYPE, FlowModel
from .graph import BlockGraph, CausalGraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-3
    plateau_decay: float = 0.95
    plateau_patience: int = 60
    batch_size: int = 256
    regularizer_on: bool = False
    reg_weight: float = 1.0
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0 < self.plateau_decay < 1:
            raise ConfigError("plateau_decay must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.plateau_patience < 1:
            raise ConfigError("batch_size and plateau_patience must be positive")
        if self.reg_weight < 0:
            raise ConfigError("reg_weight must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainHistory:
    train_nll: list[float] = field(default_factory=list)
    val_nll: list[float] = field(default_factory=list)
    regularizer: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    epoch_us: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.train_nll)

    def append(self, train_nll, val_nll, reg, lr, us):
        self.train_nll.append(float(train_nll))
        self.val_nll.append(float(val_nll))
        self.regularizer.append(float(reg))
        self.learning_rate.append(float(lr))
        self.epoch_us.append(float(us))

    def columns(self) -> dict[str, list[float]]:
        return {
            "train_nll": self.train_nll,
            "val_nll": self.val_nll,
            "regularizer": self.regularizer,
            "learning_rate": self.learning_rate,
            "epoch_us": self.epoch_us,
        }

    def to_csv(self, path=None, include_timing: bool = True) -> str:
        cols = self.columns()
        if not include_timing:
            cols.pop("epoch_us")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", *cols])
        for k in range(len(self)):
            writer.writerow([k, *(repr(v[k]) for v in cols.values())])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class PlateauScheduler:
    """Multiply the learning rate by ``decay`` after ``patience`` epochs without improvement."""

    def __init__(self, optimizer: torch.optim.Optimizer, decay: float, patience: int):
        self.optimizer = optimizer
        self.decay = decay
        self.patience = patience
        self.best = float("inf")
        self.bad_epochs = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def step(self, metric: float):
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
            return
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            for group in self.optimizer.param_groups:
                group["lr"] *= self.decay
            self.bad_epochs = 0


def _tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x), dtype=DTYPE)


def penalty_mask(graph) -> torch.Tensor:
    """``1 - G`` with the diagonal cleared, as a float tensor."""
    if isinstance(graph, BlockGraph):
        graph = graph.graph
    adj = graph.adjacency if isinstance(graph, CausalGraph) else np.asarray(graph)
    mask = 1.0 - (np.asarray(adj) != 0)
    np.fill_diagonal(mask, 0.0)
    return torch.as_tensor(mask, dtype=DTYPE)


def loss_mle(model, batch) -> torch.Tensor:
    batch = _tensor(batch) if not torch.is_tensor(batch) else batch
    if batch.shape[0] == 0:
        raise ShapeError("empty batch")
    loss = -model.log_prob(batch).mean()
    if not torch.isfinite(loss):
        raise NonFiniteError("non-finite negative log-likelihood")
    return loss


def jacobian_penalty(model, batch, graph, create_graph: bool = False) -> torch.Tensor:
    """Batch mean of the Frobenius norm of ``du/dx`` outside the graph support."""
    jac = model.jacobian_x(batch, create_graph=create_graph)
    if jac.ndim == 2:
        jac = jac.unsqueeze(0)
    masked = jac * penalty_mask(graph)
    # matrix_norm has a zero subgradient at 0, unlike sqrt of the sum of squares
    return torch.linalg.matrix_norm(masked, ord="fro").mean()


def loss_regularized(model, batch, graph, weight: float = 1.0) -> torch.Tensor:
    batch = _tensor(batch) if not torch.is_tensor(batch) else batch
    return loss_mle(model, batch) + weight * jacobian_penalty(model, batch, graph, create_graph=True)


def _state(model, optimizer, scheduler):
    return (
        copy.deepcopy(model.state_dict()),
        copy.deepcopy(optimizer.state_dict()),
        (scheduler.best, scheduler.bad_epochs),
    )


def _restore(model, optimizer, scheduler, state):
    model.load_state_dict(state[0])
    optimizer.load_state_dict(state[1])
    scheduler.best, scheduler.bad_epochs = state[2]


def _eval_nll(model, x: torch.Tensor, chunk: int = 4096) -> float:
    if x.shape[0] == 0:
        return float("nan")
    with torch.no_grad():
        total = sum(float(-model.log_prob(x[k:k + chunk]).sum()) for k in range(0, x.shape[0], chunk))
    return total / x.shape[0]


def fit(
    model: FlowModel,
    train,
    val=None,
    config: TrainConfig = TrainConfig(),
    graph=None,
    progress: Callable[[int, TrainHistory], None] | None = None,
) -> tuple[FlowModel, TrainHistory]:
    """Train ``model`` in place by Adam on the negative log-likelihood.

    With ``config.standardize`` the model's input standardization is set from
    the training data first.  The plateau scheduler watches the validation
    NLL (training NLL when no validation data are given) and the parameters
    with the best monitored NLL are restored at the end.  A non-finite loss
    restores the last good epoch and raises :class:`NonFiniteError`.
    """
    x_train = _tensor(train)
    x_val = _tensor(val) if val is not None else x_train[:0]
    for name, x in (("train", x_train), ("val", x_val)):
        if x.ndim != 2 or (x.shape[0] and x.shape[1] != model.d):
            raise ShapeError(f"{name} data must have {model.d} columns")
    if config.regularizer_on:
        graph = graph if graph is not None else model.graph
        if graph is None:
            raise ConfigError("the regularizer needs a causal graph")

    history = TrainHistory()
    if config.standardize and x_train.shape[0] > 1:
        std = x_train.std(dim=0)
        model.set_standardization(x_train.mean(dim=0), torch.where(std > 0, std, torch.ones_like(std)))
    if x_train.shape[0]:
        q = torch.quantile(x_train, torch.tensor([0.001, 0.999], dtype=DTYPE), dim=0)
        model.set_plausible_range(q[0], q[1])
    if config.epochs == 0:
        return model.eval(), history
    if x_train.shape[0] == 0:
        raise ShapeError("empty training set")

    gen = torch.Generator().manual_seed(config.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    scheduler = PlateauScheduler(optimizer, config.plateau_decay, config.plateau_patience)
    good = _state(model, optimizer, scheduler)
    best_params, best_metric = copy.deepcopy(model.state_dict()), float("inf")
    n = x_train.shape[0]

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        model.train()
        perm = torch.randperm(n, generator=gen)
        nll_sum, reg_sum = 0.0, 0.0
        try:
            for k in range(0, n, config.batch_size):
                batch = x_train[perm[k:k + config.batch_size]]
                optimizer.zero_grad()
                nll = loss_mle(model, batch)
                loss = nll
                if config.regularizer_on:
                    reg = jacobian_penalty(model, batch, graph, create_graph=True)
                    loss = nll + config.reg_weight * reg
                    reg_sum += reg.item() * batch.shape[0]
                if not torch.isfinite(loss):
                    raise NonFiniteError("non-finite loss")
                loss.backward()
                optimizer.step()
                nll_sum += nll.item() * batch.shape[0]
            model.eval()
            val_nll = _eval_nll(model, x_val)
            monitored = val_nll if x_val.shape[0] else nll_sum / n
            if not np.isfinite(monitored):
                raise NonFiniteError("non-finite validation loss")
        except NonFiniteError as exc:
            _restore(model, optimizer, scheduler, good)
            model.eval()
            raise NonFiniteError(f"training diverged at epoch {epoch}; restored epoch {epoch - 1}") from exc
        if monitored < best_metric:
            best_metric = monitored
            best_params = copy.deepcopy(model.state_dict())
            history.best_epoch = epoch
        lr = scheduler.lr
        scheduler.step(monitored)
        good = _state(model, optimizer, scheduler)
        history.append(nll_sum / n, val_nll, reg_sum / n, lr, (time.perf_counter() - t0) * 1e6)
        if progress is not None:
            progress(epoch, history)
        if epoch % 100 == 0:
            log.debug("epoch %d train %.4f val %.4f lr %.2e", epoch, nll_sum / n, val_nll, lr)

    model.load_state_dict(best_params)
    return model.eval(), history


__all__ = [
    "PlateauScheduler",
    "TrainConfig",
    "TrainHistory",
    "fit",
    "jacobian_penalty",
    "load_checkpoint",
    "loss_mle",
    "loss_regularized",
    "penalty_mask",
    "save_checkpoint",
]
