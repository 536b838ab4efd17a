import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unicon import encoder as enc
from unicon.errors import ConfigError, DegenerateEmbeddingError
from unicon.gradients import finite_difference_check


def naive_forward(params, x):
    """Row-by-row, neuron-by-neuron forward pass with Python floats."""
    out = []
    last = len(params.weights) - 1
    for row in x:
        h = [float(v) for v in row]
        for l, (w, b) in enumerate(zip(params.weights, params.biases)):
            a = [sum(w[o, i] * h[i] for i in range(len(h))) + b[o] for o in range(w.shape[0])]
            if l < last:
                a = [max(v, 0.0) if params.activation == "relu" else math.tanh(v) for v in a]
            h = a
        norm = math.sqrt(sum(v * v for v in h))
        out.append([v / norm for v in h])
    return np.array(out)


class TestForward:
    def test_identity_layer(self, rng):
        x = rng.normal(size=(5, 4))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        ident = enc.EncoderParams([np.eye(4)], [np.zeros(4)])
        z, _ = enc.forward(ident, x)
        np.testing.assert_allclose(z, x, atol=1e-15)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(["relu", "tanh"]))
    def test_unit_norm(self, seed, act):
        rng = np.random.default_rng(seed)
        params = enc.init([6, 9, 3], act, seed)
        z, _ = enc.forward(params, rng.normal(size=(7, 6)) * 10)
        np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("act", ["relu", "tanh"])
    def test_matches_naive(self, rng, act):
        params = enc.init([5, 7, 6, 3], act, 3)
        for b in params.biases:
            b[:] = rng.normal(size=b.shape) * 0.1
        x = rng.normal(size=(4, 5))
        z, _ = enc.forward(params, x)
        np.testing.assert_allclose(z, naive_forward(params, x), atol=1e-12)

    def test_representation_is_head_input(self, rng):
        params = enc.init([5, 7, 3], "relu", 0)
        x = rng.normal(size=(4, 5))
        _, trace = enc.forward(params, x)
        np.testing.assert_array_equal(enc.representations(params, x), trace.representation)
        assert trace.representation.shape == (4, 7)

    def test_zero_output_is_error(self):
        params = enc.EncoderParams([np.zeros((2, 3))], [np.zeros(2)])
        with pytest.raises(DegenerateEmbeddingError):
            enc.forward(params, np.ones((2, 3)))

    def test_input_width_checked(self):
        with pytest.raises(ConfigError):
            enc.forward(enc.init([4, 2]), np.ones((3, 5)))


class TestBackward:
    def test_linear_projection_closed_form(self, rng):
        w, b = rng.normal(size=(3, 4)), rng.normal(size=3)
        params = enc.EncoderParams([w], [b])
        x = rng.normal(size=(5, 4))
        c = rng.normal(size=3)
        c /= np.linalg.norm(c)
        z, trace = enc.forward(params, x)
        gw, gb = enc.backward(params, trace, np.tile(c, (5, 1)))
        v = x @ w.T + b
        want_w, want_b = np.zeros_like(w), np.zeros_like(b)
        for r in range(5):
            nv = np.linalg.norm(v[r])
            zr = v[r] / nv
            dv = (c - zr * (zr @ c)) / nv
            want_w += np.outer(dv, x[r])
            want_b += dv
        np.testing.assert_allclose(gw[0], want_w, atol=1e-13)
        np.testing.assert_allclose(gb[0], want_b, atol=1e-13)

    def test_zero_upstream(self, rng):
        params = enc.init([4, 6, 3], "relu", 1)
        z, trace = enc.forward(params, rng.normal(size=(5, 4)))
        gw, gb, gx = enc.backward(params, trace, np.zeros_like(z), input_grad=True)
        for g in gw + gb + [gx]:
            assert not np.any(g)

    @pytest.mark.parametrize("act", ["relu", "tanh"])
    def test_finite_differences(self, rng, act):
        params = enc.init([4, 6, 3], act, 2)
        for b in params.biases:
            b[:] = rng.normal(size=b.shape) * 0.1
        x = rng.normal(size=(5, 4))
        c = rng.normal(size=(5, 3))
        z, trace = enc.forward(params, x)
        gw, gb = enc.backward(params, trace, c)
        analytic = np.concatenate([a.ravel() for pair in zip(gw, gb) for a in pair])

        def f(vec):
            return float(np.sum(enc.forward(params.with_flat(vec), x)[0] * c))

        rep = finite_difference_check(f, params.flat(), analytic)
        assert rep.passed, rep.max_rel_error


class TestInit:
    def test_deterministic(self):
        a, b = enc.init([32, 64, 16], seed=4), enc.init([32, 64, 16], seed=4)
        np.testing.assert_array_equal(a.flat(), b.flat())

    def test_shapes(self):
        p = enc.init([32, 64, 16])
        assert [w.shape for w in p.weights] == [(64, 32), (16, 64)]
        assert p.widths == [32, 64, 16]

    def test_variance(self):
        fan_in, fan_out = 300, 400
        w = enc.init([fan_in, fan_out], seed=0).weights[0]
        assert w.size >= 10**5
        want = 2.0 / (fan_in + fan_out)
        assert abs(w.var() - want) < 0.1 * want
        assert np.abs(w).max() <= math.sqrt(6.0 / (fan_in + fan_out))

    def test_bad_widths(self):
        with pytest.raises(ConfigError):
            enc.init([5])
        with pytest.raises(ConfigError):
            enc.init([5, 0])


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        params = enc.init([5, 7, 3], "tanh", 9)
        params.biases[0][:] = rng.normal(size=7)
        path = tmp_path / "c.bin"
        enc.save_checkpoint(params, path, epoch=12, extra={"note": "x"})
        back, header = enc.load_checkpoint(path)
        np.testing.assert_array_equal(back.flat(), params.flat())
        assert back.activation == "tanh" and header["epoch"] == 12 and header["widths"] == [5, 7, 3]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "c.bin"
        path.write_bytes(b"NOTACKPT" + b"\0" * 16)
        with pytest.raises(enc.CheckpointError):
            enc.load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "c.bin"
        enc.save_checkpoint(enc.init([4, 3]), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(enc.CheckpointError):
            enc.load_checkpoint(path)

    def test_flat_round_trip(self):
        p = enc.init([3, 4, 2], seed=1)
        np.testing.assert_array_equal(p.with_flat(p.flat()).flat(), p.flat())
        with pytest.raises(ConfigError):
            p.with_flat(np.zeros(3))
