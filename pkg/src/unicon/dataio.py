"""Synthetic blobs, CSV ingestion and two-view augmentation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IngestionError, InvalidSpecError


@dataclass(frozen=True)
class LabeledBatch:
    """Feature rows ``x_k`` with dense integer labels ``y_k``.

    Each row of ``features`` is one sample. ``label_map`` records the
    original label of every dense id when the batch came from a file.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    label_map: dict = field(default_factory=dict)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise InvalidSpecError("features must be a 2-D array (samples x dimension)")
        if labels.shape != (feats.shape[0],):
            raise InvalidSpecError("one label per feature row is required")
        if feats.shape[0] < 2:
            raise InvalidSpecError("a batch needs at least 2 samples")
        if self.class_count < 1:
            raise InvalidSpecError("class_count must be positive")
        if not np.all(np.isfinite(feats)):
            raise InvalidSpecError("features contain NaN or Inf")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise InvalidSpecError("labels must lie in [0, class_count)")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        return LabeledBatch(self.features[index], self.labels[index], self.class_count, self.label_map)


@dataclass(frozen=True)
class AugmentedBatch:
    """2N views with labels and the sibling map ``p(i)``.

    Storage is interleaved: views ``2k`` and ``2k+1`` (0-based) come from
    sample ``k``. :meth:`block` gives the ``[i, i+N]`` layout.
    """

    views: np.ndarray
    labels: np.ndarray
    pair_map: np.ndarray
    layout: str = "interleaved"

    def __post_init__(self):
        n2 = self.views.shape[0]
        if n2 % 2 or n2 < 4:
            raise InvalidSpecError("an augmented batch holds 2N >= 4 views")
        p = self.pair_map
        idx = np.arange(n2)
        if np.any(p[p] != idx) or np.any(p == idx):
            raise InvalidSpecError("pair_map must be a fixed-point-free involution")
        if np.any(self.labels[p] != self.labels):
            raise InvalidSpecError("sibling views must share a label")

    def __len__(self):
        return self.views.shape[0]

    @property
    def n_samples(self):
        return self.views.shape[0] // 2

    def block(self):
        """Return the same views reordered to the ``[i, i+N]`` layout."""
        if self.layout == "block":
            return self
        order = block_order(self.n_samples)
        n = self.n_samples
        pair = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
        return AugmentedBatch(self.views[order], self.labels[order], pair, layout="block")


def interleaved_pairs(n):
    """Sibling map for interleaved storage of ``n`` samples."""
    return np.arange(2 * n) ^ 1


def block_order(n):
    """Indices mapping interleaved storage to ``[first views, second views]``."""
    return np.concatenate([np.arange(0, 2 * n, 2), np.arange(1, 2 * n, 2)])


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "blobs"
    class_count: int = 4
    per_class: int = 500
    dim: int = 32
    center_spread: float = 1.0
    noise_scale: float = 1.0
    seed: int = 0
    path: str | None = None
    label_column: int = -1
    header: bool = False

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known - {"classes"}
        if extra:
            raise InvalidSpecError(f"unknown dataset keys: {sorted(extra)}")
        data = dict(data)
        if "classes" in data:
            data["class_count"] = data.pop("classes")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def load_dataset(spec: DatasetSpec) -> LabeledBatch:
    if spec.kind == "blobs":
        return generate_blobs(spec)
    if spec.kind == "csv":
        if not spec.path:
            raise InvalidSpecError("csv dataset requires a path")
        return load_csv(spec.path, spec.label_column, header=spec.header)
    raise InvalidSpecError(f"unknown dataset kind {spec.kind!r}")


def generate_blobs(spec: DatasetSpec) -> LabeledBatch:
    """Isotropic Gaussian clusters around random centers.

    Centers are drawn from ``N(0, center_spread^2 I)``, points from
    ``N(center, noise_scale^2 I)``. Rows are grouped by class.
    """
    if spec.kind != "blobs":
        raise InvalidSpecError(f"generate_blobs needs kind='blobs', got {spec.kind!r}")
    if spec.class_count < 1 or spec.per_class < 1:
        raise InvalidSpecError("class_count and per_class must be positive")
    if spec.dim < 1:
        raise InvalidSpecError("dim must be positive")
    if not (spec.center_spread > 0 and spec.noise_scale > 0):
        raise InvalidSpecError("center_spread and noise_scale must be positive")
    if spec.class_count * spec.per_class < 2:
        raise InvalidSpecError("a dataset needs at least 2 samples")

    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(0.0, spec.center_spread, size=(spec.class_count, spec.dim))
    labels = np.repeat(np.arange(spec.class_count), spec.per_class)
    noise = rng.normal(0.0, spec.noise_scale, size=(labels.size, spec.dim))
    return LabeledBatch(centers[labels] + noise, labels, spec.class_count)


def load_csv(path, label_column=-1, header=False) -> LabeledBatch:
    """Read a comma-separated feature file with one integer label column.

    Labels are re-indexed densely in order of first appearance; the
    original-to-dense mapping is kept in ``label_map``.
    """
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc

    rows, raw_labels = [], []
    arity = None
    with fh:
        reader = csv.reader(fh)
        try:
            for lineno, row in enumerate(reader, start=1):
                if header and lineno == 1:
                    continue
                if not row or all(not cell.strip() for cell in row):
                    continue
                if arity is None:
                    arity = len(row)
                    if arity < 2:
                        raise IngestionError("need at least one feature and one label column", lineno)
                    col = label_column if label_column >= 0 else arity + label_column
                    if not 0 <= col < arity:
                        raise IngestionError(f"label column {label_column} out of range", lineno)
                elif len(row) != arity:
                    raise IngestionError(f"expected {arity} fields, found {len(row)}", lineno)
                try:
                    raw_labels.append(int(row[col].strip()))
                except ValueError:
                    raise IngestionError(f"label {row[col]!r} is not an integer", lineno) from None
                feats = []
                for j, cell in enumerate(row):
                    if j == col:
                        continue
                    try:
                        value = float(cell)
                    except ValueError:
                        raise IngestionError(f"non-numeric feature {cell!r} in column {j}", lineno) from None
                    if not math.isfinite(value):
                        raise IngestionError(f"non-finite feature {cell!r} in column {j}", lineno)
                    feats.append(value)
                rows.append(feats)
        except UnicodeDecodeError as exc:
            raise IngestionError(f"{path} is not valid UTF-8: {exc}") from exc

    if len(rows) < 2:
        raise IngestionError(f"{path} holds fewer than 2 data rows")

    mapping = {}
    for lab in raw_labels:
        mapping.setdefault(lab, len(mapping))
    dense = [mapping[lab] for lab in raw_labels]
    return LabeledBatch(np.array(rows, dtype=np.float64), np.array(dense), len(mapping), mapping)


def write_csv(batch: LabeledBatch, path, header=False):
    """Write features followed by the label column; floats use ``repr`` so reads are bit-exact."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow([f"f{j}" for j in range(batch.dim)] + ["label"])
        for x, y in zip(batch.features, batch.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def augment(batch: LabeledBatch, noise_scale=0.1, drop_prob=0.0, seed=0) -> AugmentedBatch:
    """Two jittered views per sample, stored interleaved.

    Each view is ``x + noise_scale * eps`` with every coordinate then
    zeroed independently with probability ``drop_prob``.
    """
    if not noise_scale >= 0:
        raise InvalidSpecError("noise_scale must be >= 0")
    if not 0 <= drop_prob < 1:
        raise InvalidSpecError("drop_prob must lie in [0, 1)")

    x = batch.features
    n, d = x.shape
    views = np.repeat(x, 2, axis=0)
    rng = np.random.default_rng(seed)
    if noise_scale > 0:
        views = views + noise_scale * rng.standard_normal((2 * n, d))
    if drop_prob > 0:
        views = np.where(rng.random((2 * n, d)) < drop_prob, 0.0, views)
    labels = np.repeat(batch.labels, 2)
    return AugmentedBatch(views, labels, interleaved_pairs(n))
