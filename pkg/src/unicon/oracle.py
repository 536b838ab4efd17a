"""Independent naive-loop versions of every loss.

Plain Python floats, explicit index loops, no max-subtraction and no
shared code with :mod:`unicon.losses`. Only the exception types are
shared, so that both paths reject bad input identically.
"""

import math

from .errors import ConfigError, EmbeddingError, PositiveFreeAnchorError


def _rows(x, name):
    rows = [[float(v) for v in row] for row in x]
    out = []
    for row in rows:
        if not all(math.isfinite(v) for v in row):
            raise EmbeddingError(f"{name} contain NaN or Inf")
        norm = math.sqrt(sum(v * v for v in row))
        if abs(norm - 1.0) > 1e-6:
            raise EmbeddingError(f"{name} are not unit norm")
        out.append([v / norm for v in row])
    return out


def _dot(a, b):
    total = 0.0
    for u, v in zip(a, b):
        total += u * v
    return total


def _tau(tau):
    if not (tau > 0 and math.isfinite(tau)):
        raise ConfigError("temperature must be positive")
    return float(tau)


def infonce(z, pair_map, tau):
    n = len(z)
    total = 0.0
    for i in range(n):
        num = math.exp(_dot(z[i], z[pair_map[i]]) / tau)
        den = 0.0
        for k in range(n):
            if k != i:
                den += math.exp(_dot(z[i], z[k]) / tau)
        total += math.log(num / den)
    return -total / n


def supcon(z, labels, tau, universum=None):
    n = len(z)
    total = 0.0
    for i in range(n):
        positives = [d for d in range(n) if d != i and labels[d] == labels[i]]
        if not positives:
            raise PositiveFreeAnchorError(f"anchor {i} has no positive")
        den = 0.0
        for k in range(n):
            if k != i:
                den += math.exp(_dot(z[i], z[k]) / tau)
        if universum is not None:
            for k in range(n):
                den += math.exp(_dot(z[i], universum[k]) / tau)
        inner = 0.0
        for d in positives:
            inner += math.log(math.exp(_dot(z[i], z[d]) / tau) / den)
        total += -inner / len(positives)
    return total


def unicon(z, zu, labels, tau):
    n = len(z)
    dim = len(z[0])
    total = 0.0
    for i in range(n):
        positives = [d for d in range(n) if d != i and labels[d] == labels[i]]
        if not positives:
            raise PositiveFreeAnchorError(f"anchor {i} has no positive")
        center = [0.0] * dim
        for d in positives:
            for j in range(dim):
                center[j] += zu[d][j]
        center = [c / len(positives) for c in center]
        den = 0.0
        for k in range(n):
            if k != i:
                den += math.exp(_dot(z[i], zu[k]) / tau)
        total += -math.log(math.exp(_dot(z[i], center) / tau) / den)
    return total


def uni(z, zu, pair_map, tau):
    n = len(z)
    total = 0.0
    for i in range(n):
        center = [0.5 * (a + b) for a, b in zip(zu[i], zu[pair_map[i]])]
        den = 0.0
        for k in range(n):
            if k != i:
                den += math.exp(_dot(z[i], zu[k]) / tau)
        total += -math.log(math.exp(_dot(z[i], center) / tau) / den)
    return total


def supmix_branch(z, zt, labels, tau):
    n = len(z)
    total = 0.0
    for i in range(n):
        positives = [d for d in range(n) if d != i and labels[d] == labels[i]]
        s = 0.0
        for k in range(n):
            if k != i:
                s += math.exp(_dot(z[i], z[k]) / tau)
        for k in range(n):
            s += math.exp(_dot(z[i], zt[k]) / tau)
        inner = 0.0
        for d in positives:
            inner += math.log(math.exp(_dot(z[i], z[d]) / tau) / s)
            inner += math.log(math.exp(_dot(z[i], zt[d]) / tau) / s)
        inner += math.log(math.exp(_dot(z[i], zt[i]) / tau) / s)
        total += -inner / (2 * len(positives) + 1)
    return total


def oracle_loss(kind, *, z=None, zu=None, labels=None, pair_map=None, tau=0.1,
                reduction="native", z_down=None, z_up=None, z_tilde=None, lam=0.5):
    """Recompute loss ``kind`` from raw inputs by direct summation."""
    tau = _tau(tau)
    if kind == "supmix":
        labels = [int(v) for v in labels]
        a = _rows(z_down, "mixed embeddings")
        b = _rows(z_up, "reversed mixed embeddings")
        t = _rows(z_tilde, "untouched-branch embeddings")
        value = lam * supmix_branch(a, t, labels, tau) + (1 - lam) * supmix_branch(b, t, labels, tau)
        return value / len(a) if reduction == "mean" else value

    z = _rows(z, "anchor embeddings")
    n = len(z)
    labels = [int(v) for v in labels] if labels is not None else None
    pair_map = [int(v) for v in pair_map] if pair_map is not None else None
    needs_universum = kind in ("add", "unicon", "un_uni")
    if needs_universum:
        if zu is None:
            raise ConfigError(f"loss {kind!r} needs universum embeddings")
        zu = _rows(zu, "universum embeddings")

    if kind == "infonce":
        return infonce(z, pair_map, tau)
    if kind == "supcon":
        value = supcon(z, labels, tau)
    elif kind == "add":
        value = supcon(z, labels, tau, universum=zu)
    elif kind == "unicon":
        value = unicon(z, zu, labels, tau)
    elif kind == "un_uni":
        u = uni(z, zu, pair_map, tau)
        return infonce(z, pair_map, tau) + (u / n if reduction == "mean" else u)
    else:
        raise ConfigError(f"unknown loss kind {kind!r}")
    return value / n if reduction == "mean" else value
