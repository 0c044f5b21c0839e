"""Self-describing ``.npz`` checkpoints for flow models.

Layout of the archive:

``meta``
    JSON string with ``format``, ``version``, ``design``, ``d``, ``order``,
    ``graph`` (adjacency rows or null), the named parameter ``sections``
    (name, offset, shape) of the flat vector and free-form ``extra`` fields.
``cond_mask``, ``params``, ``buffer/<name>``
    conditioner mask, flat float64 parameter vector and every registered
    buffer except masks.
``history/<column>``
    optional training history columns.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError, VersionError
from .flows.model import DesignChoice, FlowModel
from .graph import CausalGraph

FORMAT = "causalflow-checkpoint"
VERSION = 1

_SKIP_BUFFERS = ("mask", "dependency_mask", "cond_mask")


def _sections(model: FlowModel) -> list[dict]:
    out, offset = [], 0
    for name, p in model.named_parameters():
        out.append({"name": name, "offset": offset, "shape": list(p.shape)})
        offset += p.numel()
    return out


def _buffers(model: FlowModel) -> dict[str, np.ndarray]:
    return {
        name: b.detach().numpy().copy()
        for name, b in model.named_buffers()
        if name.rsplit(".", 1)[-1] not in _SKIP_BUFFERS
    }


def save_checkpoint(model: FlowModel, path, history=None, extra: dict | None = None) -> Path:
    path = Path(path)
    graph = None
    if model.graph is not None:
        graph = {"adjacency": model.graph.adjacency.tolist(), "ordering": list(model.graph.ordering),
                 "names": list(model.graph.names) if model.graph.names else None}
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "design": model.design.to_dict(),
        "d": model.d,
        "order": list(model.order),
        "graph": graph,
        "sections": _sections(model),
        "extra": extra or {},
    }
    arrays = {
        "meta": np.array(json.dumps(meta)),
        "cond_mask": model.cond_mask.numpy(),
        "params": model.parameter_vector().numpy(),
    }
    arrays.update({f"buffer/{k}": v for k, v in _buffers(model).items()})
    if history is not None:
        arrays.update({f"history/{k}": np.asarray(v) for k, v in history.columns().items()})
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
    os.close(fd)
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def read_meta(path) -> dict:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
    except (KeyError, ValueError, OSError) as exc:
        raise FormatError(f"{path}: not a checkpoint archive ({exc})") from exc
    if meta.get("format") != FORMAT:
        raise FormatError(f"{path}: unexpected format {meta.get('format')!r}")
    if meta.get("version") != VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    return meta


def load_checkpoint(path, expected_d: int | None = None) -> FlowModel:
    meta = read_meta(path)
    d = int(meta["d"])
    if expected_d is not None and expected_d != d:
        raise FormatError(f"checkpoint has d={d}, expected {expected_d}")
    with np.load(path, allow_pickle=False) as z:
        cond_mask = z["cond_mask"]
        params = z["params"]
        buffers = {k[len("buffer/"):]: z[k] for k in z.files if k.startswith("buffer/")}
    if cond_mask.shape != (d, d):
        raise FormatError(f"mask shape {cond_mask.shape} does not match d={d}")
    design = DesignChoice.from_dict(meta["design"])
    graph = None
    if meta.get("graph") is not None:
        g = meta["graph"]
        graph = CausalGraph(np.asarray(g["adjacency"]), tuple(g["ordering"]),
                            tuple(g["names"]) if g.get("names") else None)
    model = FlowModel(design, cond_mask, meta["order"], graph)
    if [s["name"] for s in meta["sections"]] != [n for n, _ in model.named_parameters()]:
        raise FormatError("parameter sections do not match the design")
    model.load_parameter_vector(torch.as_tensor(params))
    named = dict(model.named_buffers())
    with torch.no_grad():
        for name, value in buffers.items():
            if name not in named or tuple(named[name].shape) != value.shape:
                raise FormatError(f"unexpected buffer {name!r}")
            named[name].copy_(torch.as_tensor(value))
    return model.eval()


def load_history(path) -> dict[str, np.ndarray]:
    read_meta(path)
    with np.load(path, allow_pickle=False) as z:
        return {k[len("history/"):]: z[k] for k in z.files if k.startswith("history/")}


__all__ = ["FORMAT", "VERSION", "load_checkpoint", "load_history", "read_meta", "save_checkpoint"]
