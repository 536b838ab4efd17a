"""Hardness histograms, class-margin statistics and embedding export."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import encoder as enc
from .dataio import LabeledBatch
from .errors import InvalidSpecError, ProbeError
from .gradients import hardness_profile
from .losses import EmbeddingSet
from .universum import draw_partners

DEFAULT_BINS = 40


def canonical_order(dataset: LabeledBatch):
    """Row order that depends only on the multiset of (label, features)."""
    keys = [dataset.features[:, j] for j in range(dataset.dim - 1, -1, -1)] + [dataset.labels]
    return np.lexsort(keys)


def hardness_inputs(dataset: LabeledBatch, cap, lam=0.5, seed=0, canonical=True):
    """Up to ``cap`` samples and one fresh universum mixture per sample.

    With ``canonical`` the samples are taken in canonical order (see
    :func:`canonical_order`) so the result does not depend on how the
    dataset rows are ordered; otherwise dataset order is kept.
    """
    if cap < 2:
        raise InvalidSpecError("hardness sample cap must be at least 2")
    order = canonical_order(dataset) if canonical else np.arange(len(dataset))
    if cap < len(dataset):
        pick = np.sort(np.random.default_rng(seed).choice(len(dataset), size=cap, replace=False))
        order = order[pick]
    x = dataset.features[order]
    labels = dataset.labels[order]
    partners = draw_partners(labels, seed)
    return x, labels, lam * x + (1.0 - lam) * x[partners]


@dataclass
class HardnessHistogram:
    epoch: int | None
    edges: np.ndarray
    conventional: np.ndarray
    universum: np.ndarray
    conventional_values: np.ndarray
    universum_values: np.ndarray

    @property
    def conventional_mean(self):
        return float(self.conventional_values.mean())

    @property
    def universum_mean(self):
        return float(self.universum_values.mean())

    def rows(self):
        for kind, counts in (("conventional", self.conventional), ("universum", self.universum)):
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], counts):
                yield {"epoch": self.epoch, "kind": kind, "bin_lo": float(lo), "bin_hi": float(hi), "count": int(c)}

    def write_csv(self, path, append=False):
        path = Path(path)
        new = not (append and path.exists())
        with open(path, "a" if append else "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, ["epoch", "kind", "bin_lo", "bin_hi", "count"], lineterminator="\n")
            if new:
                writer.writeheader()
            for row in self.rows():
                writer.writerow(row)


def histogram_from_embeddings(z, labels, zu, epoch=None, bins=DEFAULT_BINS):
    prof = hardness_profile(EmbeddingSet(z, labels, universum=zu))
    edges, conv, univ = prof.histogram(bins)
    return HardnessHistogram(epoch, edges, conv, univ, prof.conventional, prof.universum)


def record_hardness(params, dataset: LabeledBatch, cap=1000, epoch=None, lam=0.5, seed=0, bins=DEFAULT_BINS):
    """Hardness histograms of conventional and universum negatives for one checkpoint."""
    if isinstance(params, (str, Path)):
        params, header = enc.load_checkpoint(params)
        epoch = header.get("epoch") if epoch is None else epoch
    x, labels, u = hardness_inputs(dataset, cap, lam, seed)
    z, _ = enc.forward(params, x)
    zu, _ = enc.forward(params, u)
    return histogram_from_embeddings(z, labels, zu, epoch, bins)


@dataclass
class MarginReport:
    classes: np.ndarray
    centroids: np.ndarray
    distances: np.ndarray
    universum_to_nearest: float
    anchor_to_own: float

    @property
    def ratio(self):
        return self.universum_to_nearest / self.anchor_to_own if self.anchor_to_own > 0 else float("inf")

    def to_dict(self):
        return {
            "classes": self.classes.tolist(),
            "centroids": self.centroids.tolist(),
            "inter_centroid_distance": self.distances.tolist(),
            "universum_to_nearest_centroid": self.universum_to_nearest,
            "anchor_to_own_centroid": self.anchor_to_own,
            "ratio": self.ratio,
        }


def margin_from_embeddings(z, labels, zu=None) -> MarginReport:
    """Centroid geometry of unit-sphere embeddings (Euclidean distances)."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ProbeError("margin report needs at least two classes")
    centroids = np.array([z[labels == c].mean(axis=0) for c in classes])
    diff = centroids[:, None, :] - centroids[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    own = centroids[np.searchsorted(classes, labels)]
    anchor_to_own = float(np.linalg.norm(z - own, axis=1).mean())
    univ = float("nan")
    if zu is not None:
        d = np.linalg.norm(zu[:, None, :] - centroids[None, :, :], axis=-1)
        univ = float(d.min(axis=1).mean())
    return MarginReport(classes, centroids, dist, univ, anchor_to_own)


def margin_report(params, dataset: LabeledBatch, lam=0.5, seed=0) -> MarginReport:
    if isinstance(params, (str, Path)):
        params, _ = enc.load_checkpoint(params)
    if np.unique(dataset.labels).size < 2:
        raise ProbeError("margin report needs at least two classes")
    x, labels, u = hardness_inputs(dataset, len(dataset), lam, seed, canonical=False)
    z, _ = enc.forward(params, x)
    zu, _ = enc.forward(params, u)
    return margin_from_embeddings(z, labels, zu)


def _write_embedding_csv(path, labels, z):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"dim{j}" for j in range(z.shape[1])])
        for y, row in zip(labels, z):
            writer.writerow([int(y)] + [repr(float(v)) for v in row])


def universum_path(path):
    path = Path(path)
    return path.with_name(path.stem + "_universum" + path.suffix)


def export_embeddings(params, dataset: LabeledBatch, path, lam=0.5, seed=0):
    """Write anchor embeddings to ``path`` and row-aligned universum embeddings beside it.

    Universum rows carry label ``-1``; row ``i`` of the universum file is
    the mixture built from anchor ``i``. Returns both paths.
    """
    if isinstance(params, (str, Path)):
        params, _ = enc.load_checkpoint(params)
    x, labels, u = hardness_inputs(dataset, len(dataset), lam, seed, canonical=False)
    z, _ = enc.forward(params, x)
    zu, _ = enc.forward(params, u)
    path = Path(path)
    upath = universum_path(path)
    _write_embedding_csv(path, labels, z)
    _write_embedding_csv(upath, np.full(len(zu), -1), zu)
    return path, upath


def read_embeddings(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    labels = np.array([int(r[0]) for r in body])
    z = np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(header) - 1)
    return labels, z
