"""Mixup-induced universum synthesis and the conventional Mixup baselines.

Partners are drawn with replacement ("bootstrapping") from the anchor's
out-of-class views. Draws come from a Philox counter-based generator: the
draw for anchor ``i`` is a pure function of ``(seed, i)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dataio import AugmentedBatch
from .errors import ConfigError, InvalidSpecError, NoValidPartnerError


@dataclass(frozen=True)
class MixPolicy:
    mode: str = "fixed"
    lam: float = 0.5
    gamma: float = 1.0

    def __post_init__(self):
        if self.mode == "fixed":
            if not 0.0 < self.lam < 1.0:
                raise ConfigError(f"fixed mixing needs 0 < lambda < 1, got {self.lam}")
        elif self.mode == "beta":
            if not self.gamma > 0:
                raise ConfigError(f"Beta mixing needs gamma > 0, got {self.gamma}")
        else:
            raise ConfigError(f"unknown mix mode {self.mode!r}")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        mode = data.pop("mode", "fixed")
        lam = data.pop("lambda", data.pop("lam", 0.5))
        gamma = data.pop("gamma", 1.0)
        if data:
            raise ConfigError(f"unknown mix keys: {sorted(data)}")
        return cls(mode, float(lam), float(gamma))

    def to_dict(self):
        if self.mode == "fixed":
            return {"mode": "fixed", "lambda": self.lam}
        return {"mode": "beta", "gamma": self.gamma}

    def label(self):
        return f"{self.lam:g}" if self.mode == "fixed" else f"beta:{self.gamma:g}"

    def draw(self, seed):
        """Mixing coefficient for one batch (fixed, or one Beta draw per batch)."""
        if self.mode == "fixed":
            return self.lam
        return float(np.random.Generator(np.random.Philox(key=_keys(seed)[1])).beta(self.gamma, self.gamma))


def _keys(seed):
    state = np.random.SeedSequence(seed).generate_state(4, np.uint64)
    return state[:2], state[2:]


def counter_uniforms(seed, count):
    """``count`` uniforms in [0, 1); entry ``j`` depends only on ``(seed, j)``."""
    raw = np.random.Philox(key=_keys(seed)[0]).random_raw(count)
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class UniversumBatch:
    mixtures: np.ndarray
    partner_map: np.ndarray
    lam_used: np.ndarray

    @cached_property
    def anchor_sets(self):
        """``Q_i = {k : q(k) = i}`` for every view index ``i``."""
        n = self.partner_map.size
        return [np.flatnonzero(self.partner_map == i) for i in range(n)]

    @property
    def lam(self):
        return float(self.lam_used[0])


def draw_partners(labels, seed):
    """Out-of-class partner ``q(i)`` for every view, uniform with replacement."""
    labels = np.asarray(labels)
    n = labels.size
    u = counter_uniforms(seed, n)
    partners = np.empty(n, dtype=np.int64)
    for cls in np.unique(labels):
        rows = np.flatnonzero(labels == cls)
        candidates = np.flatnonzero(labels != cls)
        if candidates.size == 0:
            raise NoValidPartnerError(
                "every view shares one label; universum mixing needs at least two classes"
            )
        pick = np.minimum((u[rows] * candidates.size).astype(np.int64), candidates.size - 1)
        partners[rows] = candidates[pick]
    return partners


def mix_universum(batch: AugmentedBatch, policy, seed, labels=None) -> UniversumBatch:
    """Universum-style Mixup: ``u_i = lam * x_i + (1 - lam) * x_q(i)``.

    ``policy`` is a :class:`MixPolicy` or a plain coefficient in ``[0, 1]``.
    ``labels`` overrides the batch labels (pseudo-labels for the
    unsupervised loss).
    """
    labels = batch.labels if labels is None else np.asarray(labels)
    if isinstance(policy, MixPolicy):
        lam = policy.draw(seed)
    else:
        lam = float(policy)
        if not 0.0 <= lam <= 1.0:
            raise ConfigError(f"mixing coefficient must lie in [0, 1], got {lam}")
    partners = draw_partners(labels, seed)
    x = batch.views
    mixtures = lam * x + (1.0 - lam) * x[partners]
    return UniversumBatch(mixtures, partners, np.full(len(x), lam))


def mix_backward(grad_mixtures, partners, lam):
    """Gradient w.r.t. the views given the gradient w.r.t. the mixtures."""
    grad = lam * grad_mixtures
    np.add.at(grad, partners, (1.0 - lam) * grad_mixtures)
    return grad


def expected_universum(anchor_index, batch: AugmentedBatch, lam, form="literal"):
    """Expectation of the universum of one anchor over partner draws.

    ``form="literal"`` evaluates ``lam*x_i + (1-lam) * sum_{k not in D_i} x_k / (2N - |D_i|)``
    where ``D_i`` excludes ``i`` itself, so the anchor is counted inside
    the average. ``form="sampling"`` averages over out-of-class views only,
    which is the exact mean of :func:`mix_universum`.
    """
    labels = batch.labels
    n2 = labels.size
    if not 0 <= anchor_index < n2:
        raise IndexError(f"anchor index {anchor_index} out of range for {n2} views")
    x = batch.views
    same = labels == labels[anchor_index]
    out = ~same
    if not out.any():
        raise NoValidPartnerError("anchor has no out-of-class views")
    if form == "literal":
        in_class = same.copy()
        in_class[anchor_index] = False
        complement = ~in_class
        mean = x[complement].sum(axis=0) / (n2 - in_class.sum())
    elif form == "sampling":
        mean = x[out].mean(axis=0)
    else:
        raise ValueError(f"unknown form {form!r}")
    return lam * x[anchor_index] + (1.0 - lam) * mean


def mix_supmix_branch(batch: AugmentedBatch, lam):
    """Mix the first-view branch with its own reversal; keep the second branch.

    Returns ``(mix_down, mix_up, untouched, labels)`` where
    ``mix_down[k] = lam * b[k] + (1 - lam) * b[N-1-k]`` for the first-view
    branch ``b``, ``mix_up`` is ``mix_down`` in reverse order, and
    ``labels`` belong to the untouched branch.
    """
    if batch.layout != "interleaved":
        raise InvalidSpecError("mix_supmix_branch expects interleaved storage")
    n = batch.n_samples
    if n < 2:
        raise InvalidSpecError("SupMix needs N >= 2")
    first = batch.views[0::2]
    second = batch.views[1::2]
    down = lam * first + (1.0 - lam) * first[::-1]
    return down, down[::-1].copy(), second.copy(), batch.labels[1::2].copy()


def supmix_backward(grad_down, grad_up, lam):
    """Gradient w.r.t. the first-view branch from both mixture orders."""
    g = grad_down + grad_up[::-1]
    return lam * g + (1.0 - lam) * g[::-1]


def mixup_pairs(x, y_onehot, lam, seed):
    """Conventional Mixup baseline: permutation partners and mixed soft labels."""
    perm = np.random.default_rng(seed).permutation(len(x))
    return lam * x + (1.0 - lam) * x[perm], lam * y_onehot + (1.0 - lam) * y_onehot[perm], perm
