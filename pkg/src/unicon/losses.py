"""Contrastive losses with analytic gradients w.r.t. the embeddings.

Every loss is written as a weighted, masked log-softmax over a logit
matrix ``S`` (anchors x candidates)::

    loss_i = (sum_k W_ik) * logsumexp_{k in M_i} S_ik - sum_k W_ik S_ik

``W`` carries the positive weights and ``M`` the denominator support, so
one kernel (:func:`unicon.kernels.contrast_rows`) serves all losses. The
log-sum-exp subtracts the row maximum; this does not change the value.

Reductions: ``"native"`` follows each formula as written (InfoNCE
averages over 2N, the supervised losses sum over anchors); ``"mean"``
divides every loss by its anchor count.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from . import kernels
from .errors import ConfigError, EmbeddingError, PositiveFreeAnchorError

KINDS = ("infonce", "supcon", "add", "unicon", "un_uni", "supmix")
UNIVERSUM_KINDS = ("add", "unicon", "un_uni")
NORM_TOLERANCE = 1e-6


def check_unit_rows(x, name="embeddings"):
    """Validate rows as unit vectors and return them re-normalized."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise EmbeddingError(f"{name} must be a 2-D array")
    if not np.all(np.isfinite(x)):
        raise EmbeddingError(f"{name} contain NaN or Inf")
    norms = np.linalg.norm(x, axis=1)
    worst = np.max(np.abs(norms - 1.0)) if norms.size else 0.0
    if worst > NORM_TOLERANCE:
        raise EmbeddingError(f"{name} deviate from unit norm by {worst:.3g} (> {NORM_TOLERANCE:g})")
    return x / norms[:, None]


@dataclass(frozen=True)
class EmbeddingSet:
    """Unit-norm anchor embeddings ``z``, optional universum ``zu``, labels and sibling map."""

    anchors: np.ndarray
    labels: np.ndarray
    pair_map: np.ndarray | None = None
    universum: np.ndarray | None = None

    def __post_init__(self):
        z = check_unit_rows(self.anchors, "anchor embeddings")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (z.shape[0],):
            raise EmbeddingError("one label per anchor embedding is required")
        object.__setattr__(self, "anchors", z)
        object.__setattr__(self, "labels", labels)
        if self.pair_map is not None:
            p = np.asarray(self.pair_map, dtype=np.int64)
            idx = np.arange(z.shape[0])
            if p.shape != idx.shape or np.any(p[p] != idx) or np.any(p == idx):
                raise EmbeddingError("pair_map must be a fixed-point-free involution")
            object.__setattr__(self, "pair_map", p)
        if self.universum is not None:
            zu = check_unit_rows(self.universum, "universum embeddings")
            if zu.shape != z.shape:
                raise EmbeddingError("universum and anchor embeddings must share a shape")
            object.__setattr__(self, "universum", zu)

    def __len__(self):
        return self.anchors.shape[0]


@dataclass(frozen=True)
class LossConfig:
    kind: str = "unicon"
    tau: float = 0.1
    lam: float = 0.5
    reduction: str = "native"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        _check_tau(self.tau)
        if self.reduction not in ("native", "mean"):
            raise ConfigError(f"unknown reduction {self.reduction!r}")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        kw = {"kind": data.pop("kind", "unicon"), "tau": float(data.pop("tau", 0.1))}
        if "reduction" in data:
            kw["reduction"] = data.pop("reduction")
        if data:
            raise ConfigError(f"unknown loss keys: {sorted(data)}")
        return cls(**kw)


@dataclass(frozen=True)
class LossResult:
    value: float
    grad_anchors: np.ndarray
    grad_universum: np.ndarray | None = None


def _check_tau(tau):
    if not (isinstance(tau, (int, float, np.floating)) and tau > 0 and np.isfinite(tau)):
        raise ConfigError(f"temperature must be a positive finite number, got {tau!r}")


def positive_sets(labels):
    """Boolean matrix ``P[i, k] = (k in D_i)``: same label, ``k != i``."""
    labels = np.asarray(labels)
    pos = labels[:, None] == labels[None, :]
    np.fill_diagonal(pos, False)
    return pos


def _supervised_weights(labels):
    pos = positive_sets(labels)
    counts = pos.sum(axis=1)
    if np.any(counts == 0):
        bad = int(np.flatnonzero(counts == 0)[0])
        raise PositiveFreeAnchorError(f"anchor {bad} has no same-class positive")
    return pos / counts[:, None]


def _pair_weights(pair_map, n):
    w = np.zeros((n, n))
    w[np.arange(n), pair_map] = 1.0
    return w


def _require_pairs(pair_map):
    if pair_map is None:
        raise ConfigError("this loss needs a sibling pair map")
    return np.asarray(pair_map)


def contrastive_loss(kind, z, zu, labels, pair_map, tau, reduction="native") -> LossResult:
    """Loss value and embedding gradients on raw arrays (no validation of norms).

    ``z`` and ``zu`` may be any finite rows; this is the entry point for
    finite-difference checks, which step off the unit sphere.
    """
    _check_tau(tau)
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    off = ~np.eye(n, dtype=bool)
    if kind in UNIVERSUM_KINDS:
        if zu is None:
            raise ConfigError(f"loss {kind!r} needs universum embeddings")
        zu = np.asarray(zu, dtype=np.float64)

    if kind == "infonce":
        pairs = _require_pairs(pair_map)
        s = z @ z.T / tau
        rows, ds = kernels.contrast_rows(s, _pair_weights(pairs, n), off)
        value = math.fsum(rows) / n
        ds = ds / n
        return LossResult(float(value), (ds + ds.T) @ z / tau)

    if kind == "supcon":
        s = z @ z.T / tau
        rows, ds = kernels.contrast_rows(s, _supervised_weights(labels), off)
        return _reduce(rows, ds, n, reduction, lambda g: ((g + g.T) @ z / tau, None))

    if kind == "add":
        w_sup = _supervised_weights(labels)
        s = np.hstack([z @ z.T, z @ zu.T]) / tau
        w = np.hstack([w_sup, np.zeros((n, n))])
        m = np.hstack([off, np.ones((n, n), dtype=bool)])
        rows, ds = kernels.contrast_rows(s, w, m)

        def back(g):
            ga, gb = g[:, :n], g[:, n:]
            return ((ga + ga.T) @ z + gb @ zu) / tau, gb.T @ z / tau

        return _reduce(rows, ds, n, reduction, back)

    if kind == "unicon":
        s = z @ zu.T / tau
        rows, ds = kernels.contrast_rows(s, _supervised_weights(labels), off)
        return _reduce(rows, ds, n, reduction, lambda g: (g @ zu / tau, g.T @ z / tau))

    if kind == "un_uni":
        pairs = _require_pairs(pair_map)
        base = contrastive_loss("infonce", z, None, labels, pairs, tau)
        s = z @ zu.T / tau
        w = 0.5 * (np.eye(n) + _pair_weights(pairs, n))
        rows, ds = kernels.contrast_rows(s, w, off)
        uni = _reduce(rows, ds, n, reduction, lambda g: (g @ zu / tau, g.T @ z / tau))
        return LossResult(base.value + uni.value, base.grad_anchors + uni.grad_anchors, uni.grad_universum)

    if kind == "supmix":
        raise ConfigError("supmix takes mixed branches; use supmix_loss()")
    raise ConfigError(f"unknown loss kind {kind!r}")


def _reduce(rows, ds, n, reduction, back):
    scale = 1.0 / n if reduction == "mean" else 1.0
    if reduction not in ("native", "mean"):
        raise ConfigError(f"unknown reduction {reduction!r}")
    ga, gu = back(ds * scale)
    return LossResult(math.fsum(rows) * scale, ga, gu)


def supmix_branch_loss(z, z_tilde, labels, tau, reduction="native"):
    """Branch loss ``L_sup(X, X~, Y)``: three positive groups, shared denominator ``S``.

    Returns ``(value, grad_z, grad_z_tilde)``.
    """
    _check_tau(tau)
    z = np.asarray(z, dtype=np.float64)
    zt = np.asarray(z_tilde, dtype=np.float64)
    n = z.shape[0]
    pos = positive_sets(labels)
    weight = 1.0 / (2.0 * pos.sum(axis=1) + 1.0)
    w = np.hstack([pos, pos | np.eye(n, dtype=bool)]) * weight[:, None]
    m = np.hstack([~np.eye(n, dtype=bool), np.ones((n, n), dtype=bool)])
    s = np.hstack([z @ z.T, z @ zt.T]) / tau
    rows, ds = kernels.contrast_rows(s, w, m)
    scale = 1.0 / n if reduction == "mean" else 1.0
    ds = ds * scale
    ga, gb = ds[:, :n], ds[:, n:]
    return math.fsum(rows) * scale, ((ga + ga.T) @ z + gb @ zt) / tau, gb.T @ z / tau


def supmix_loss(z_down, z_up, z_tilde, labels, lam, tau, reduction="native"):
    """``lam * L_sup(mix_down) + (1 - lam) * L_sup(mix_up)``.

    Returns ``(value, grad_down, grad_up, grad_tilde)``.
    """
    v1, g1, t1 = supmix_branch_loss(z_down, z_tilde, labels, tau, reduction)
    v2, g2, t2 = supmix_branch_loss(z_up, z_tilde, labels, tau, reduction)
    return lam * v1 + (1 - lam) * v2, lam * g1, (1 - lam) * g2, lam * t1 + (1 - lam) * t2


def loss_and_grad(kind, E: EmbeddingSet, tau, reduction="native") -> LossResult:
    return contrastive_loss(kind, E.anchors, E.universum, E.labels, E.pair_map, tau, reduction)


def loss_infonce(E: EmbeddingSet, tau, reduction="native"):
    return loss_and_grad("infonce", E, tau, reduction).value


def loss_supcon(E: EmbeddingSet, tau, reduction="native"):
    return loss_and_grad("supcon", E, tau, reduction).value


def loss_add(E: EmbeddingSet, tau, reduction="native"):
    return loss_and_grad("add", E, tau, reduction).value


def loss_unicon(E: EmbeddingSet, tau, reduction="native"):
    return loss_and_grad("unicon", E, tau, reduction).value


def loss_un_uni(E: EmbeddingSet, tau, reduction="native"):
    return loss_and_grad("un_uni", E, tau, reduction).value


def loss_uni(E: EmbeddingSet, tau, reduction="native"):
    """The universum part of the unsupervised loss alone."""
    return loss_un_uni(E, tau, reduction) - loss_infonce(E, tau)


def loss_supmix(z_down, z_up, z_tilde, labels, lam, tau, reduction="native"):
    z_down = check_unit_rows(z_down, "mixed embeddings")
    z_up = check_unit_rows(z_up, "reversed mixed embeddings")
    z_tilde = check_unit_rows(z_tilde, "untouched-branch embeddings")
    return supmix_loss(z_down, z_up, z_tilde, labels, lam, tau, reduction)[0]


def oracle_loss(kind, **inputs):
    """Naive-loop recomputation; see :mod:`unicon.oracle`."""
    from .oracle import oracle_loss as _oracle

    return _oracle(kind, **inputs)
