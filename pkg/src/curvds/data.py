"""Trajectory datasets and their on-disk CSV + manifest format.

One CSV per trajectory with header ``t,x1..xd,v1..vd[,a1..ad]`` and a
``manifest.json`` naming the files, the train/test split, the attractor and
the sample rate. Floats are written with 17 significant digits.
"""
from dataclasses import dataclass, field
import csv
import json
import os

import numpy as np

from .errors import DatasetParseError, PreconditionError

__all__ = ["TrajectoryData", "TrajectoryDataset", "SampleSet", "save_dataset", "load_dataset",
           "write_csv", "MANIFEST"]

MANIFEST = "manifest.json"


@dataclass
class TrajectoryData:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.a is not None:
            self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        n = self.t.size
        if self.x.shape[0] != n or self.v.shape != self.x.shape or (
                self.a is not None and self.a.shape != self.x.shape):
            raise PreconditionError("trajectory arrays have inconsistent shapes")

    @property
    def dim(self):
        return self.x.shape[1]

    def __len__(self):
        return self.t.size


@dataclass
class SampleSet:
    """Flat arrays of samples pooled over trajectories."""

    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    attractor: np.ndarray

    def __len__(self):
        return self.positions.shape[0]

    @property
    def has_accelerations(self):
        return self.accelerations is not None


@dataclass
class TrajectoryDataset:
    trajectories: list
    attractor: np.ndarray
    train: list
    test: list
    sample_rate: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.attractor = np.asarray(self.attractor, dtype=float)
        dims = {tr.dim for tr in self.trajectories}
        if len(dims) > 1 or (dims and dims.pop() != self.attractor.size):
            raise PreconditionError("trajectories and attractor must share one dimension")
        self.train = [int(i) for i in self.train]
        self.test = [int(i) for i in self.test]

    @property
    def dim(self):
        return self.attractor.size

    def subset(self, split):
        idx = {"train": self.train, "test": self.test, "all": range(len(self.trajectories))}[split]
        return [self.trajectories[i] for i in idx]

    def samples(self, split="train"):
        trs = self.subset(split)
        if not trs:
            raise PreconditionError(f"{split} split is empty")
        acc = None
        if all(tr.a is not None for tr in trs):
            acc = np.concatenate([tr.a for tr in trs])
        return SampleSet(np.concatenate([tr.x for tr in trs]),
                         np.concatenate([tr.v for tr in trs]),
                         acc, self.attractor)


def _fmt(values):
    return ["%.17g" % v for v in values]


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(_fmt(row))


def _write_trajectory(path, tr):
    d = tr.dim
    header = ["t"] + [f"x{i+1}" for i in range(d)] + [f"v{i+1}" for i in range(d)]
    cols = [tr.t[:, None], tr.x, tr.v]
    if tr.a is not None:
        header += [f"a{i+1}" for i in range(d)]
        cols.append(tr.a)
    write_csv(path, header, np.hstack(cols))


def _read_trajectory(path, dim):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetParseError(path, 1, "empty file")
    header = [h.strip() for h in rows[0]]
    base = ["t"] + [f"x{i+1}" for i in range(dim)] + [f"v{i+1}" for i in range(dim)]
    full = base + [f"a{i+1}" for i in range(dim)]
    if header not in (base, full):
        raise DatasetParseError(path, 1, f"unexpected header {','.join(header)}")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetParseError(path, lineno, f"expected {len(header)} columns, got {len(row)}")
        try:
            values.append([float(c) for c in row])
        except ValueError as exc:
            raise DatasetParseError(path, lineno, str(exc)) from None
    if not values:
        raise DatasetParseError(path, 2, "no samples")
    arr = np.array(values)
    a = arr[:, 1 + 2 * dim:] if len(header) == len(full) else None
    return TrajectoryData(arr[:, 0], arr[:, 1:1 + dim], arr[:, 1 + dim:1 + 2 * dim], a)


def save_dataset(ds, directory):
    """Write one CSV per trajectory plus the manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    files = []
    for i, tr in enumerate(ds.trajectories):
        name = f"trajectory_{i:03d}.csv"
        _write_trajectory(os.path.join(directory, name), tr)
        files.append(name)
    manifest = {
        "files": files,
        "dim": ds.dim,
        "attractor": ds.attractor.tolist(),
        "train": ds.train,
        "test": ds.test,
        "sample_rate": ds.sample_rate,
        "metadata": ds.metadata,
    }
    path = os.path.join(directory, MANIFEST)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_dataset(path):
    """Load a dataset from its manifest path or containing directory."""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST)
    with open(path, encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(path, exc.lineno, exc.msg) from None
    for key in ("files", "dim", "attractor", "train", "test", "sample_rate"):
        if key not in manifest:
            raise DatasetParseError(path, 1, f"manifest is missing {key!r}")
    root = os.path.dirname(path)
    trs = [_read_trajectory(os.path.join(root, f), int(manifest["dim"])) for f in manifest["files"]]
    return TrajectoryDataset(trs, manifest["attractor"], manifest["train"], manifest["test"],
                             float(manifest["sample_rate"]), manifest.get("metadata", {}))
