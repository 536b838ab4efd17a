"""Pure numpy implementation of the contrast kernel.

Used when the compiled ``_kernels`` extension is unavailable, or when
``UNICON_PURE_PYTHON=1`` is set.
"""

import numpy as np


def contrast_rows(logits, weights, mask):
    """Weighted log-softmax contrast over the rows of a logit matrix.

    For row ``i`` with ``c_i = sum_k weights[i, k]``::

        loss_i = c_i * logsumexp(logits[i, mask[i]]) - sum_k weights[i, k] * logits[i, k]

    Returns ``(loss, dlogits)`` where ``dlogits`` is the gradient of
    ``sum_i loss_i`` with respect to ``logits``.
    """
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=bool)

    masked = np.where(mask, logits, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    expd = np.exp(masked - row_max)
    total = expd.sum(axis=1, keepdims=True)
    lse = row_max + np.log(total)

    c = weights.sum(axis=1, keepdims=True)
    loss = (c * lse)[:, 0] - (weights * logits).sum(axis=1)
    dlogits = c * (expd / total) - weights
    return loss, dlogits
