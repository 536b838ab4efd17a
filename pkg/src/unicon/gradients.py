"""Per-anchor UniCon gradient analysis and finite-difference certification.

For anchor ``i`` the UniCon gradient splits into the class-center pull
``-m_i``, the universum push ``sum_k PU_k zu_k`` (softmax weights ``PU_k``
with partition value ``Z``) and the universum gradient ``G``, i.e. what
flows back to ``x_i`` through the mixtures it took part in.

The closed form for ``G`` treats the encoder derivative as a scalar,
which has no meaning for a vector-valued encoder. ``G`` is measured
instead: the input-space gradient that arrives through the universum
path is pulled back to embedding space with the least-squares inverse of
the transposed encoder Jacobian at ``x_i``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import encoder as enc
from . import objective
from .dataio import AugmentedBatch, interleaved_pairs
from .errors import ConfigError
from .losses import EmbeddingSet, positive_sets
from .universum import MixPolicy

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-5
REL_FLOOR = 1e-12
MAIN_KINDS = ("infonce", "supcon", "add", "unicon", "un_uni")


@dataclass
class GradientDecomposition:
    anchor: int
    center: np.ndarray
    weights: np.ndarray
    partition: float
    push: np.ndarray
    universum_gradient: np.ndarray
    tau: float
    residual: float = 0.0

    @property
    def assembled(self):
        return (-self.center + self.push + self.universum_gradient) / self.tau

    @property
    def margin_pressure(self):
        return float(np.linalg.norm(self.universum_gradient))


def decompose(E: EmbeddingSet, tau, i) -> GradientDecomposition:
    """``m_i``, ``PU_k``, ``Z`` and ``sum_k PU_k zu_k`` for anchor ``i`` with ``G = 0``.

    ``weights[i]`` is 0 since ``k = i`` is excluded from the softmax.
    """
    if E.universum is None:
        raise ConfigError("the decomposition needs universum embeddings")
    n = len(E)
    if not 0 <= i < n:
        raise IndexError(f"anchor index {i} out of range for {n} anchors")
    z, zu = E.anchors, E.universum
    members = positive_sets(E.labels)[i]
    if not members.any():
        from .errors import PositiveFreeAnchorError

        raise PositiveFreeAnchorError(f"anchor {i} has no same-class positive")
    center = zu[members].mean(axis=0)
    logits = zu @ z[i] / tau
    others = np.arange(n) != i
    top = logits[others].max()
    expd = np.where(others, np.exp(logits - top), 0.0)
    total = expd.sum()
    weights = expd / total
    return GradientDecomposition(
        anchor=i,
        center=center,
        weights=weights,
        partition=float(total * math.exp(top)),
        push=weights @ zu,
        universum_gradient=np.zeros_like(center),
        tau=tau,
    )


def unicon_anchor_gradient(E: EmbeddingSet, tau, i, stop_grad_universum=True, path=None):
    """``dL_UniCon / dz_i``.

    With ``stop_grad_universum`` the universum is constant and the result
    is ``(-m_i + sum_k PU_k zu_k) / tau``. Otherwise ``path`` must be
    ``(params, batch, mixing)`` and ``G`` is measured through the encoder
    and the mixup (see :func:`universum_gradient`).
    """
    if stop_grad_universum:
        return decompose(E, tau, i).assembled
    if path is None:
        raise ConfigError("full-path gradient needs path=(params, batch, mixing)")
    params, batch, mixing = path
    return universum_gradient(params, batch, mixing, tau, i).assembled


def _anchor_jacobian(params, x_row):
    """``d z / d x`` at one input row, shape (out_dim, in_dim)."""
    z, trace = enc.forward(params, x_row[None, :])
    rows = []
    for j in range(z.shape[1]):
        e = np.zeros_like(z)
        e[0, j] = 1.0
        rows.append(enc.backward(params, trace, e, input_grad=True)[2][0])
    return np.array(rows)


def universum_gradient(params, batch: AugmentedBatch, mixing, tau, i) -> GradientDecomposition:
    """Full decomposition of the per-anchor UniCon gradient, ``G`` included.

    Differentiates ``L_UniCon,i`` w.r.t. every universum embedding, sends
    that back through the encoder and the mixup to the views, and keeps
    the part landing on ``x_i``. Solving ``J_i^T g = r`` (least squares)
    maps it to embedding space; ``G = tau * g``. ``residual`` is the part
    of ``r`` outside the range of ``J_i^T``.
    """
    ub = mixing.universum
    if mixing.kind != "unicon" or ub is None:
        raise ConfigError("universum gradient is defined for the unicon loss")
    z, _ = enc.forward(params, batch.views)
    zu, t_univ = enc.forward(params, ub.mixtures)
    E = EmbeddingSet(z, batch.labels, batch.pair_map, zu)
    dec = decompose(E, tau, i)

    members = positive_sets(batch.labels)[i]
    g_zu = (dec.weights[:, None] - members[:, None] / members.sum()) * z[i][None, :] / tau
    _, _, g_u = enc.backward(params, t_univ, g_zu, input_grad=True)
    r = objective_mix_row(g_u, ub, i)

    jac = _anchor_jacobian(params, batch.views[i])
    g, *_ = np.linalg.lstsq(jac.T, r, rcond=None)
    resid = r - jac.T @ g
    dec.universum_gradient = tau * g
    dec.residual = float(np.linalg.norm(resid))
    return dec


def objective_mix_row(grad_mixtures, ub, i):
    from .universum import mix_backward

    return mix_backward(grad_mixtures, ub.partner_map, ub.lam)[i]


@dataclass
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    step: float
    tolerance: float
    passed: bool
    per_parameter: dict = field(default_factory=dict)
    nonfinite: list = field(default_factory=list)
    label: str = ""

    def to_dict(self):
        return asdict(self)


def _as_named(params):
    if isinstance(params, dict):
        return {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    return {"x": np.asarray(params, dtype=np.float64)}


def finite_difference_check(f, params, analytic_grad, h=DEFAULT_STEP, tolerance=DEFAULT_TOLERANCE,
                            label="") -> GradCheckReport:
    """Central-difference check of ``analytic_grad`` against ``f`` at ``params``.

    ``params`` / ``analytic_grad`` are arrays or dicts of arrays with equal
    keys; ``f`` receives the same structure. Relative error per coordinate
    is ``|a - n| / max(|a|, |n|, 1e-12)``.
    """
    named = _as_named(params)
    grads = _as_named(analytic_grad)
    single = not isinstance(params, dict)
    if grads.keys() != named.keys():
        raise ConfigError("analytic gradient keys differ from parameter keys")

    def call(current):
        return f(current["x"] if single else current)

    per, errors, nonfinite = {}, [], []
    current = {k: v.copy() for k, v in named.items()}
    for key, base in named.items():
        a = grads[key].ravel()
        if a.size != base.size:
            raise ConfigError(f"{key}: gradient has {a.size} entries, parameter has {base.size}")
        flat = current[key].reshape(-1)
        rel = np.empty(base.size)
        for j in range(base.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = call(current)
            flat[j] = orig - h
            fm = call(current)
            flat[j] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                nonfinite.append({"parameter": key, "index": j})
                rel[j] = math.inf
                continue
            num = (fp - fm) / (2.0 * h)
            rel[j] = abs(a[j] - num) / max(abs(a[j]), abs(num), REL_FLOOR)
        per[key] = {"max": float(rel.max()), "mean": float(rel.mean())}
        errors.append(rel)
    allrel = np.concatenate(errors)
    worst = float(allrel.max())
    return GradCheckReport(
        max_rel_error=worst,
        mean_rel_error=float(allrel.mean()),
        step=h,
        tolerance=tolerance,
        passed=bool(worst < tolerance and not nonfinite),
        per_parameter=per,
        nonfinite=nonfinite,
        label=label,
    )


def certification_problem(kind, n=8, dim=16, seed=0):
    """Random batch, tanh encoder and frozen mixing for a full-path check."""
    rng = np.random.default_rng(seed)
    n_classes = max(2, min(4, n // 2))
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    views = rng.normal(size=(2 * n, dim))
    batch = AugmentedBatch(views, np.repeat(labels, 2), interleaved_pairs(n))
    hidden = max(4, dim)
    params = enc.init([dim, hidden, max(2, dim // 2)], "tanh", seed)
    # non-zero biases so every parameter carries gradient
    for b in params.biases:
        b[:] = 0.1 * rng.normal(size=b.shape)
    lam = 0.5 if kind != "supmix" else MixPolicy("fixed", 0.5)
    mixing = objective.prepare(kind, batch, lam, seed)
    return params, batch, mixing


def certify(kind, n=8, dim=16, seed=0, tau=0.1, h=DEFAULT_STEP, tolerance=DEFAULT_TOLERANCE,
            corrupt=False) -> GradCheckReport:
    """Finite-difference certification of the backprop gradient of one loss.

    Differentiates through the encoder for anchors and mixtures and
    through the mixup itself. ``corrupt`` scales one analytic coordinate
    by 1.01 to exercise the detector.
    """
    params, batch, mixing = certification_problem(kind, n, dim, seed)
    names = params.names()

    def rebuild(named):
        arrays = [named[k] for k in names]
        return enc.EncoderParams(arrays[0::2], arrays[1::2], params.activation, params.seed)

    def f(named):
        return objective.evaluate(rebuild(named), batch, mixing, tau)[0]

    _, gw, gb, _ = objective.evaluate(params, batch, mixing, tau)
    grads = {}
    for l in range(len(gw)):
        grads[f"W{l}"], grads[f"b{l}"] = gw[l], gb[l]
    if corrupt:
        grads["W0"] = grads["W0"].copy()
        grads["W0"].flat[0] *= 1.01
    named = dict(zip(names, params.arrays()))
    return finite_difference_check(f, named, grads, h, tolerance, label=f"{kind}:seed={seed}")


@dataclass
class HardnessProfile:
    """Mean dot product of each negative with the anchors it is a negative for."""

    conventional: np.ndarray
    universum: np.ndarray | None

    def histogram(self, bins=40):
        edges = np.linspace(-1.0, 1.0, bins + 1)
        conv = np.histogram(np.clip(self.conventional, -1, 1), edges)[0]
        univ = None if self.universum is None else np.histogram(np.clip(self.universum, -1, 1), edges)[0]
        return edges, conv, univ


def hardness_profile(E: EmbeddingSet) -> HardnessProfile:
    """Hardness ``H = z_a . z_n`` and ``H = z_a . zu_k`` averaged per negative.

    Conventional negative ``n`` is averaged over anchors of other classes;
    a universum negative over all anchors. Views whose class fills the
    whole set have no conventional hardness and are dropped.
    """
    z = E.anchors
    labels = E.labels
    gram = z @ z.T
    other = labels[:, None] != labels[None, :]
    counts = other.sum(axis=0)
    keep = counts > 0
    conv = (gram * other).sum(axis=0)[keep] / counts[keep]
    univ = None
    if E.universum is not None:
        univ = (z @ E.universum.T).mean(axis=0)
    return HardnessProfile(np.clip(conv, -1.0, 1.0), None if univ is None else np.clip(univ, -1.0, 1.0))
