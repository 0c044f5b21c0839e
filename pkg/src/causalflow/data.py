"""Dataset generation, splitting, dequantization and German Credit ingestion."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import scm as scm_lib
from .errors import ChecksumError, FormatError, MissingColumnError, ShapeError
from .graph import PartialGraphSpec

DEFAULT_SIZES = (20_000, 2_500, 2_500)
SPLITS = ("train", "val", "test")
DATA_ENV = "CAUSALFLOW_DATA_DIR"


# -- atomic files -----------------------------------------------------------------


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def _csv_text(x: np.ndarray, names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    w.writerows([[repr(float(v)) for v in row] for row in x])
    return buf.getvalue()


def read_csv_matrix(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    names, body = rows[0], rows[1:]
    try:
        x = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(names))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return x, names


# -- synthetic datasets -------------------------------------------------------------


def generate_dataset(scm: scm_lib.SCMSpec, sizes: Sequence[int] = DEFAULT_SIZES,
                     seed: int = 0) -> dict[str, scm_lib.Dataset]:
    """Independent train/val/test draws from ``scm``, one seed stream per split."""
    if len(sizes) != 3 or any(int(s) < 0 for s in sizes):
        raise ShapeError("sizes must be three non-negative counts")
    streams = np.random.SeedSequence(seed).spawn(3)
    out = {}
    for name, n, ss in zip(SPLITS, sizes, streams):
        u = scm_lib.sample_exogenous(scm, int(n), np.random.default_rng(ss))
        out[name] = scm_lib.Dataset(scm_lib.solve_recursive(scm, u) if n else u.copy(), u, seed)
    return out


def save_dataset(splits: dict[str, scm_lib.Dataset], directory, scm_name: str, seed: int) -> list[Path]:
    directory = Path(directory)
    first = next(iter(splits.values()))
    names = [f"x{k + 1}" for k in range(first.x.shape[1])]
    paths = [atomic_write_text(directory / f"{name}.csv", _csv_text(ds.x, names)) for name, ds in splits.items()]
    meta = {"scm": scm_name, "seed": seed, "columns": names,
            "sizes": {name: len(ds) for name, ds in splits.items()}}
    paths.append(atomic_write_text(directory / "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n"))
    return paths


def load_dataset(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{directory}: no meta.json") from exc
    splits = {}
    for name in meta["sizes"]:
        x, cols = read_csv_matrix(directory / f"{name}.csv")
        if cols != meta["columns"]:
            raise FormatError(f"{name}.csv header does not match meta.json")
        splits[name] = x
    return splits, meta


# -- discrete variables ------------------------------------------------------------


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str = "continuous"
    categories: int | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete"):
            raise ValueError(f"unknown column kind {self.kind!r}")
        if self.kind == "discrete" and self.categories is not None and self.categories < 2:
            raise ValueError("a discrete column needs at least two categories")


def dequantize(column, seed=None) -> np.ndarray:
    """``c + eps`` with ``eps ~ U(0, 1)``; ``floor`` recovers ``c`` exactly."""
    c = np.asarray(column)
    if not np.all(np.equal(np.mod(c, 1), 0)):
        raise ValueError("dequantize expects integer-coded values")
    out = c.astype(float) + np.random.default_rng(seed).random(c.shape)
    # c + eps can round up to c + 1 for large |c|; stay inside [c, c + 1)
    return np.where(out >= c + 1, np.nextafter(c + 1.0, -np.inf), out)


def requantize(values) -> np.ndarray:
    return np.floor(np.asarray(values, dtype=float)).astype(np.int64)


# -- splits -------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    fold: int = 0
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or abs(self.train + self.val + self.test - 1) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")
        if not 0 <= self.fold < self.folds:
            raise ValueError("fold index out of range")


def split_indices(n: int, spec: SplitSpec = SplitSpec()) -> dict[str, np.ndarray]:
    """Fold-dependent partition of ``range(n)``.

    A single seeded permutation is rotated by ``fold / folds`` of its length,
    so the test blocks of different folds are disjoint when
    ``test <= 1 / folds``.
    """
    perm = np.random.default_rng(spec.seed).permutation(n)
    perm = np.roll(perm, -(spec.fold * n) // spec.folds)
    n_test = int(round(spec.test * n))
    n_val = int(round(spec.val * n))
    return {
        "test": np.sort(perm[:n_test]),
        "val": np.sort(perm[n_test:n_test + n_val]),
        "train": np.sort(perm[n_test + n_val:]),
    }


# -- German Credit ------------------------------------------------------------------


@dataclass
class TabularData:
    x: np.ndarray
    codes: np.ndarray
    label: np.ndarray
    schema: tuple[ColumnSchema, ...]
    names: tuple[str, ...]
    label_name: str = "credit risk"

    def __len__(self):
        return len(self.label)

    def subset(self, idx) -> "TabularData":
        return TabularData(self.x[idx], self.codes[idx], self.label[idx], self.schema, self.names, self.label_name)


def german_manifest() -> dict:
    return json.loads(resources.files("causalflow.resources").joinpath("german_manifest.json").read_text())


def german_partial_graph(manifest: dict | None = None) -> PartialGraphSpec:
    manifest = manifest or german_manifest()
    names = [f["name"] for f in manifest["features"]]
    idx = {n: k for k, n in enumerate(names)}
    g = manifest["graph"]
    return PartialGraphSpec(
        len(names),
        frozenset((idx[a], idx[b]) for a, b in g["known_edges"]),
        frozenset((idx[a], idx[b]) for a, b in g["unknown_pairs"]),
        tuple(names),
    )


def _resolve_german_path(path) -> Path:
    if path is not None:
        return Path(path)
    root = Path(os.environ.get(DATA_ENV, "data"))
    for candidate in (root / "german" / "german.data", root / "german.data"):
        if candidate.exists():
            return candidate
    return root / "german" / "german.data"


def load_german(path=None, seed: int = 0, verify: bool = True) -> tuple[TabularData, PartialGraphSpec]:
    """Read the raw German Credit file into seven integer-coded features plus the label.

    All seven features are discrete and are dequantized with ``U(0, 1)``
    noise drawn from ``seed``.  The raw file is located through ``path`` or
    ``$CAUSALFLOW_DATA_DIR/german/german.data`` and its SHA-256 is checked
    against the ingestion manifest.
    """
    manifest = german_manifest()
    path = _resolve_german_path(path)
    hint = f"download german.data from {manifest['fetch']} and place it at {path} (or set ${DATA_ENV})"
    if not path.exists():
        raise ChecksumError(f"German Credit file not found: {path}; {hint}")
    raw = path.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    if verify and digest != manifest["sha256"]:
        raise ChecksumError(f"{path}: sha256 {digest} does not match the pinned {manifest['sha256']}; {hint}")

    rows = [line.split() for line in raw.decode("ascii").splitlines() if line.strip()]
    width = manifest["n_raw_columns"]
    for k, r in enumerate(rows):
        if len(r) != width:
            raise MissingColumnError(f"row {k + 1} has {len(r)} columns, expected {width}")

    def decode(spec, r):
        value = r[spec["raw_column"]]
        if spec["coding"] == "integer":
            return int(value)
        try:
            return spec["coding"][value]
        except KeyError:
            raise FormatError(f"unexpected code {value!r} for {spec['name']}") from None

    features = manifest["features"]
    codes = np.array([[decode(f, r) for f in features] for r in rows], dtype=np.int64)
    label = np.array([decode(manifest["label"], r) for r in rows], dtype=np.int64)
    if np.any(codes < 0):
        raise FormatError("categories must be coded non-negative")
    schema = tuple(ColumnSchema(f["name"], "discrete", f.get("categories")) for f in features)
    rng = np.random.default_rng(seed)
    x = np.column_stack([dequantize(codes[:, k], rng) for k in range(codes.shape[1])])
    data = TabularData(x, codes, label, schema, tuple(f["name"] for f in features), manifest["label"]["name"])
    return data, german_partial_graph(manifest)
