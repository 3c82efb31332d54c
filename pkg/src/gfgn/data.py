"""Datasets on disk, seeded 48/32/20 splits and a synthetic block-model generator.

A dataset directory holds::

    edges.tsv     src<TAB>dst per line, 0-indexed, '#' comments allowed
    features.tsv  n rows of D tab-separated decimals
    labels.tsv    one integer class per line
    splits.json   optional, {"train": [...], "val": [...], "test": [...]} or a list of those
    meta.json     optional, {"name": ..., "num_classes": ..., "row_normalize": bool}
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import Graph, GraphFormatError, load_edges, read_edge_file, write_edge_file


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))

    def validate(self, n: int):
        parts = (self.train, self.val, self.test)
        if any(p.size == 0 for p in parts):
            raise DataError("every split part must be nonempty")
        allidx = np.concatenate(parts)
        if allidx.min() < 0 or allidx.max() >= n:
            raise DataError(f"split index outside [0, {n})")
        if np.unique(allidx).size != allidx.size:
            raise DataError("split parts overlap")

    def sizes(self) -> tuple:
        return (self.train.size, self.val.size, self.test.size)

    def to_json(self) -> dict:
        return {"train": self.train.tolist(), "val": self.val.tolist(), "test": self.test.tolist()}

    def __eq__(self, other):
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("train", "val", "test"))


@dataclass(eq=False)
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""
    splits: list = field(default_factory=list)
    row_normalized: bool = False
    content_hash: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.graph.n
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DataError(f"features must have {n} rows, got shape {self.features.shape}")
        if self.labels.shape != (n,):
            raise DataError(f"labels must have length {n}, got {self.labels.shape}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels outside [0, {self.num_classes})")
        missing = np.setdiff1d(np.arange(self.num_classes), self.labels)
        if missing.size:
            raise DataError(f"classes {missing.tolist()} never appear in labels")
        for s in self.splits:
            s.validate(n)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.graph == other.graph
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and self.num_classes == other.num_classes
            and len(self.splits) == len(other.splits)
            and all(a == b for a, b in zip(self.splits, other.splits))
        )

    def with_graph(self, graph: Graph) -> "Dataset":
        return Dataset(graph, self.features, self.labels, self.num_classes, self.name,
                       self.splits, self.row_normalized, self.content_hash)


def row_normalize(X: np.ndarray) -> np.ndarray:
    """Scale each row to unit L1 norm; all-zero rows stay zero."""
    s = np.abs(X).sum(axis=1, keepdims=True)
    return X / np.where(s > 0, s, 1.0)


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def directory_hash(directory) -> str:
    """Hash over the git blob hashes of the dataset files, in name order."""
    directory = Path(directory)
    lines = []
    for name in ("edges.tsv", "features.tsv", "labels.tsv", "splits.json", "meta.json"):
        p = directory / name
        if p.exists():
            lines.append(f"{git_blob_hash(p.read_bytes())} {name}\n")
    return hashlib.sha1("".join(lines).encode()).hexdigest()


def _read_features(path: Path) -> np.ndarray:
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise DataError(f"{path}:{lineno}: ragged row, {len(parts)} values where {width} expected")
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric feature value") from None
    return np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)


def _read_labels(path: Path) -> np.ndarray:
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise DataError(f"{path}:{lineno}: label {line!r} is not an integer") from None
            if labels[-1] < 0:
                raise DataError(f"{path}:{lineno}: negative label {labels[-1]}")
    return np.array(labels, dtype=np.int64)


def load_dataset(directory, row_normalize_features: Optional[bool] = None) -> Dataset:
    """Read and validate a dataset directory.

    Row normalization follows ``meta.json`` when present, otherwise it is on;
    an explicit argument overrides both.
    """
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"dataset directory {d} does not exist")
    for name in ("edges.tsv", "features.tsv", "labels.tsv"):
        if not (d / name).exists():
            raise DataError(f"{d / name}: missing file")
    meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").exists() else {}
    X = _read_features(d / "features.tsv")
    y = _read_labels(d / "labels.tsv")
    if X.shape[0] != y.shape[0]:
        raise DataError(f"{d}: {X.shape[0]} feature rows but {y.shape[0]} labels")
    num_classes = int(meta.get("num_classes", int(y.max()) + 1 if y.size else 0))
    bad = np.nonzero(y >= num_classes)[0]
    if bad.size:
        raise DataError(f"{d / 'labels.tsv'}: label {y[bad[0]]} on row {bad[0] + 1} outside [0, {num_classes})")
    try:
        g = read_edge_file(d / "edges.tsv", n=y.shape[0])
    except GraphFormatError as exc:
        raise DataError(str(exc)) from None
    splits = []
    if (d / "splits.json").exists():
        raw = json.loads((d / "splits.json").read_text())
        for item in raw if isinstance(raw, list) else [raw]:
            splits.append(Split(item["train"], item["val"], item["test"]))
    normalize = meta.get("row_normalize", True) if row_normalize_features is None else row_normalize_features
    if normalize:
        X = row_normalize(X)
    return Dataset(g, X, y, num_classes, meta.get("name", d.name), splits, bool(normalize), directory_hash(d))


def write_dataset(ds: Dataset, directory, row_normalize_on_load: Optional[bool] = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_edge_file(ds.graph, d / "edges.tsv")
    np.savetxt(d / "features.tsv", ds.features, fmt="%.17g", delimiter="\t")
    np.savetxt(d / "labels.tsv", ds.labels, fmt="%d")
    if ds.splits:
        payload = [s.to_json() for s in ds.splits]
        (d / "splits.json").write_text(json.dumps(payload[0] if len(payload) == 1 else payload))
    flag = ds.row_normalized if row_normalize_on_load is None else row_normalize_on_load
    meta = {"name": ds.name, "num_classes": ds.num_classes, "row_normalize": bool(flag)}
    (d / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    return d


def random_split(n: int, ratios: Sequence[float] = (0.48, 0.32, 0.20), seed: int = 0) -> Split:
    """Seeded shuffle then contiguous slices: floor for train and val, remainder to test."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise DataError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    if n_train < 1 or n_val < 1 or n - n_train - n_val < 1:
        raise DataError(f"{n} nodes are too few for nonempty train/val/test parts")
    perm = np.random.default_rng(seed).permutation(n)
    return Split(perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])


@dataclass(frozen=True)
class SynthSpec:
    n: int = 400
    C: int = 4
    D: int = 16
    homophilous_dims: tuple = tuple(range(8))
    p_in: float = 0.05
    p_out: float = 0.005
    signal_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "homophilous_dims", tuple(sorted(int(d) for d in self.homophilous_dims)))
        if self.n < 1 or self.C < 1 or self.D < 1:
            raise DataError("n, C and D must be positive")
        if any(d < 0 or d >= self.D for d in self.homophilous_dims):
            raise DataError(f"homophilous dims must lie in [0, {self.D})")
        if len(set(self.homophilous_dims)) != len(self.homophilous_dims):
            raise DataError("homophilous dims contain duplicates")
        if not 0.0 <= self.p_out < self.p_in <= 1.0:
            raise DataError(f"need 0 <= p_out < p_in <= 1, got p_in={self.p_in}, p_out={self.p_out}")

    @classmethod
    def from_json(cls, payload: dict) -> "SynthSpec":
        known = {k: payload[k] for k in cls.__dataclass_fields__ if k in payload}
        unknown = set(payload) - set(known)
        if unknown:
            raise DataError(f"unknown synth spec fields: {sorted(unknown)}")
        return cls(**known)

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["homophilous_dims"] = list(self.homophilous_dims)
        return out


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Stochastic block model with label-carrying and pure-noise feature dimensions.

    Homophilous dim number k (in sorted order) has mean ``signal_strength``
    on nodes of class ``k mod C`` and 0 elsewhere; every other dim is unit
    Gaussian noise independent of labels and graph.
    """
    rng = np.random.default_rng(spec.seed)
    n, C = spec.n, spec.C
    labels = rng.integers(0, C, size=n)
    # every class present, as Dataset requires
    for c in range(C):
        if not np.any(labels == c) and n >= C:
            labels[c] = c
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], spec.p_in, spec.p_out)
    keep = rng.random(iu.size) < prob
    g = load_edges(np.stack([iu[keep], ju[keep]], axis=1), n)
    X = rng.standard_normal((n, spec.D))
    for k, d in enumerate(spec.homophilous_dims):
        X[:, d] += spec.signal_strength * (labels == k % C)
    return Dataset(g, X, labels, C, name=f"synth-{spec.seed}", row_normalized=False)
