import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unicon import _kernels_py, kernels


def problem(rng, n, m):
    logits = rng.normal(size=(n, m)) * 10
    mask = rng.random((n, m)) < 0.8
    mask[:, 0] = True
    weights = np.where(mask, rng.random((n, m)), 0.0)
    return logits, weights, mask


def direct(logits, weights, mask):
    rows = np.empty(len(logits))
    for i in range(len(logits)):
        s = logits[i][mask[i]]
        rows[i] = weights[i].sum() * np.log(np.exp(s).sum()) - weights[i] @ logits[i]
    return rows


class TestReference:
    def test_matches_direct_formula(self, rng):
        logits, weights, mask = problem(rng, 5, 7)
        logits /= 10  # keep exp() in range for the unshifted formula
        rows, _ = _kernels_py.contrast_rows(logits, weights, mask)
        np.testing.assert_allclose(rows, direct(logits, weights, mask), rtol=1e-12)

    def test_gradient_finite_differences(self, rng):
        logits, weights, mask = problem(rng, 3, 4)
        _, grad = _kernels_py.contrast_rows(logits, weights, mask)
        h = 1e-6
        for i, j in np.ndindex(logits.shape):
            up, dn = logits.copy(), logits.copy()
            up[i, j] += h
            dn[i, j] -= h
            num = (_kernels_py.contrast_rows(up, weights, mask)[0].sum()
                   - _kernels_py.contrast_rows(dn, weights, mask)[0].sum()) / (2 * h)
            assert grad[i, j] == pytest.approx(num, abs=1e-6)

    def test_large_logits_stable(self):
        logits = np.array([[1000.0, 999.0, -1000.0]])
        rows, grad = _kernels_py.contrast_rows(logits, np.array([[0.0, 1.0, 0.0]]), np.ones((1, 3), bool))
        assert np.isfinite(rows).all() and np.isfinite(grad).all()


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")
class TestCompiledParity:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 20), st.integers(1, 40))
    def test_parity(self, seed, n, m):
        logits, weights, mask = problem(np.random.default_rng(seed), n, m)
        a = _kernels_py.contrast_rows(logits, weights, mask)
        b = kernels.contrast_rows(logits, weights, mask)
        np.testing.assert_allclose(b[0], a[0], rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(b[1], a[1], rtol=1e-12, atol=1e-12)


class TestSelection:
    def test_env_forces_fallback(self):
        env = dict(os.environ, UNICON_PURE_PYTHON="1")
        out = subprocess.run([sys.executable, "-c", "from unicon import kernels; print(kernels.BACKEND)"],
                             env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "python"
