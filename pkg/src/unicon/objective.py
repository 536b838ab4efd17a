"""Full-path training objective: mixing -> shared encoder -> loss -> parameter gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from .dataio import AugmentedBatch
from .errors import ConfigError
from .losses import KINDS, UNIVERSUM_KINDS, contrastive_loss, supmix_loss
from .universum import (
    UniversumBatch,
    mix_backward,
    mix_supmix_branch,
    mix_universum,
    supmix_backward,
)


@dataclass
class Mixing:
    """Mixing state frozen for one batch so that repeated evaluations agree."""

    kind: str
    universum: UniversumBatch | None = None
    lam: float = 0.5
    supmix: tuple | None = None


def pseudo_labels(batch: AugmentedBatch):
    """Instance labels ``0..N-1`` shared by sibling views."""
    labels = np.empty(len(batch), dtype=np.int64)
    seen = np.zeros(len(batch), dtype=bool)
    nxt = 0
    for i in range(len(batch)):
        if not seen[i]:
            j = batch.pair_map[i]
            labels[i] = labels[j] = nxt
            seen[i] = seen[j] = True
            nxt += 1
    return labels


def prepare(kind, batch: AugmentedBatch, policy, seed) -> Mixing:
    if kind not in KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}")
    if kind in UNIVERSUM_KINDS:
        labels = pseudo_labels(batch) if kind == "un_uni" else None
        ub = mix_universum(batch, policy, seed, labels=labels)
        return Mixing(kind, universum=ub, lam=ub.lam)
    if kind == "supmix":
        lam = policy.draw(seed) if hasattr(policy, "draw") else float(policy)
        return Mixing(kind, lam=lam, supmix=mix_supmix_branch(batch, lam))
    return Mixing(kind)


def evaluate(params, batch: AugmentedBatch, mixing: Mixing, tau, reduction="native",
             stop_grad_universum=False, input_grad=False):
    """Loss value and gradients w.r.t. every encoder parameter.

    Returns ``(value, grad_weights, grad_biases, extras)``. With
    ``input_grad`` the gradient w.r.t. the views is in ``extras["views"]``.
    ``stop_grad_universum`` treats universum embeddings as constants.
    """
    kind = mixing.kind
    n_layers = len(params.weights)
    gw = [np.zeros_like(w) for w in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    extras = {}

    def accumulate(trace, grad):
        out = enc.backward(params, trace, grad, input_grad=input_grad)
        for l in range(n_layers):
            gw[l] += out[0][l]
            gb[l] += out[1][l]
        return out[2] if input_grad else None

    if kind == "supmix":
        down, up, untouched, labels = mixing.supmix
        z_down, t_down = enc.forward(params, down)
        z_up, t_up = enc.forward(params, up)
        z_t, t_t = enc.forward(params, untouched)
        value, g_down, g_up, g_t = supmix_loss(z_down, z_up, z_t, labels, mixing.lam, tau, reduction)
        gx_down = accumulate(t_down, g_down)
        gx_up = accumulate(t_up, g_up)
        gx_t = accumulate(t_t, g_t)
        if input_grad:
            gv = np.zeros_like(batch.views)
            gv[0::2] = supmix_backward(gx_down, gx_up, mixing.lam)
            gv[1::2] = gx_t
            extras["views"] = gv
        return value, gw, gb, extras

    z, t_anchor = enc.forward(params, batch.views)
    zu = t_univ = None
    if mixing.universum is not None:
        zu, t_univ = enc.forward(params, mixing.universum.mixtures)
    res = contrastive_loss(kind, z, zu, batch.labels, batch.pair_map, tau, reduction)
    extras["anchors"] = z
    extras["universum"] = zu
    gx = accumulate(t_anchor, res.grad_anchors)
    if zu is not None and not stop_grad_universum:
        gu = accumulate(t_univ, res.grad_universum)
        if input_grad:
            ub = mixing.universum
            gx = gx + mix_backward(gu, ub.partner_map, ub.lam)
    if input_grad:
        extras["views"] = gx
    return res.value, gw, gb, extras


def flat_grad(gw, gb):
    return np.concatenate([a.ravel() for pair in zip(gw, gb) for a in pair])
