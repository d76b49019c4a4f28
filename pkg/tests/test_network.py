import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from credrank.errors import ShapeError
from credrank.network import (PARAM_NAMES, NetworkHyper, NetworkParams, backward, flat_layout, forward,
                              gradient_check, init_params, load_checkpoint, loss, loss_and_grad_flat, numerical_gradient,
                              params_from_flat, relative_error, save_checkpoint, score_flat,
                              sum_first_layer_weights)

TOY = NetworkHyper(image_rows=2, image_cols=11, conv_filters=2, widths=(2, 2, 2, 2, 2, 2))
SMALL = NetworkHyper(image_rows=3, image_cols=11, conv_filters=2, widths=(6, 5, 4, 4, 4, 3))


def random_params(hyper, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return NetworkParams(hyper, {n: scale * rng.standard_normal(s) for n, s in hyper.shapes().items()})


def hand_forward(p, image, m):
    """Plain-Python evaluation, one multiply-add at a time."""
    x = [v for row in image for v in row]

    def dense(W, b, v, act):
        return [act(sum(W[i][j] * v[j] for j in range(len(v))) + b[i]) for i in range(len(W))]

    def sig(z):
        return 1.0 / (1.0 + math.exp(-z))

    conv = []
    for f in range(len(p["W_conv1"])):
        for start in range(0, len(x) - 10 + 1, 5):
            z = sum(p["W_conv1"][f][t] * x[start + t] for t in range(10)) + p["b_conv1"][f]
            conv.append(math.tanh(z))
    h1 = dense(p["W_fc1"], p["b_fc1"], x, math.tanh)
    h2 = dense(p["W_fc2"], p["b_fc2"], h1, math.tanh)
    h3 = dense(p["W_fc3"], p["b_fc3"], h2, math.tanh)
    h4 = dense(p["W_fc4"], p["b_fc4"], [m] + h3, math.tanh)
    h5 = dense(p["W_fc5"], p["b_fc5"], conv + h4, math.tanh)
    h6 = dense(p["W_fc6"], p["b_fc6"], h5, sig)
    return dense(p["W_o"], p["b_o"], h6, sig)[0]


class TestHyper:
    def test_default_layout(self):
        h = NetworkHyper()
        assert h.input_size == 165 and h.conv_length == 32
        assert h.shapes()["W_fc5"] == (16, 4 * 32 + 16)
        assert h.shapes()["W_fc4"] == (16, 17)

    @pytest.mark.parametrize("kw", [dict(widths=(1, 2)), dict(conv_filters=0), dict(conv_kernel=3),
                                    dict(image_rows=1, image_cols=5)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            NetworkHyper(**kw)


class TestInit:
    def test_seeded(self):
        a, b = init_params(NetworkHyper(seed=4)), init_params(NetworkHyper(seed=4))
        assert all(np.array_equal(a[n], b[n]) for n in PARAM_NAMES)

    def test_biases_zero_and_bounds(self):
        p = init_params(NetworkHyper())
        for name, shape in p.hyper.shapes().items():
            if name.startswith("b_"):
                assert not p[name].any()
            else:
                fan_out, fan_in = shape
                assert np.abs(p[name]).max() <= math.sqrt(6 / (fan_in + fan_out))

    def test_mean_near_zero(self):
        W = init_params(NetworkHyper())["W_fc1"]
        limit = math.sqrt(6 / (165 + 64))
        sigma = limit / math.sqrt(3)  # std of U(-a, a)
        assert W.size >= 1000
        assert abs(W.mean()) <= 3 * sigma / math.sqrt(W.size)


class TestForward:
    def test_zero_params(self):
        p = NetworkParams.zeros(NetworkHyper())
        score, tr = forward(p, np.random.default_rng(0).random((15, 11)), 0.3)
        assert score == 0.5
        for act in (tr.conv1, tr.fc1, tr.fc2, tr.fc3, tr.fc4, tr.fc5):
            assert not act.any()
        assert (tr.fc6 == 0.5).all()

    def test_matches_hand_evaluation(self):
        p = random_params(TOY, 11, scale=0.7)
        image = np.random.default_rng(1).random((2, 11))
        plain = {n: p[n].tolist() for n in PARAM_NAMES}
        assert forward(p, image, 0.42)[0] == pytest.approx(hand_forward(plain, image.tolist(), 0.42), abs=1e-12)

    def test_conv_windows_row_major(self):
        p = NetworkParams.zeros(TOY)
        p.tensors["W_conv1"][0, 0] = 1.0
        image = np.arange(22, dtype=float).reshape(2, 11) / 100
        _, tr = forward(p, image, 0.0)
        # window starts 0, 5, 10: the third one begins at row 0 column 10
        np.testing.assert_allclose(tr.conv1[0], np.tanh([0.0, 0.05, 0.10]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            forward(init_params(NetworkHyper()), np.zeros((16, 10)), 0.1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6), st.floats(-50, 50), st.floats(0, 1))
    def test_score_in_range(self, seed, scale, m):
        p = random_params(TOY, seed, scale)
        score, tr = forward(p, np.random.default_rng(seed).random((2, 11)), m)
        assert 0.0 <= score <= 1.0
        assert (np.abs(tr.fc5) <= 1).all() and ((tr.fc6 >= 0) & (tr.fc6 <= 1)).all()

    def test_pure(self):
        p = init_params(NetworkHyper(seed=2))
        img = np.random.default_rng(3).random((15, 11))
        assert forward(p, img, 0.5)[0] == forward(p, img, 0.5)[0]


class TestBackward:
    def test_target_equals_score(self):
        p = init_params(SMALL)
        img = np.random.default_rng(0).random((3, 11))
        score, tr = forward(p, img, 0.2)
        g = backward(p, tr, img, 0.2, score)
        assert all(not g[n].any() for n in PARAM_NAMES)

    def test_zero_weights_closed_form(self):
        p = NetworkParams.zeros(SMALL)
        img = np.random.default_rng(0).random((3, 11))
        t = 0.9
        score, tr = forward(p, img, 0.4)
        g = backward(p, tr, img, 0.4, t)
        d_out = 2 * (0.5 - t) * 0.25
        assert g["b_o"][0] == d_out
        assert np.allclose(g["W_o"], d_out * 0.5)
        for name in PARAM_NAMES:
            if name not in ("b_o", "W_o"):
                assert not g[name].any()

    def test_finite_differences(self):
        rng = np.random.default_rng(5)
        for i in range(5):
            p = random_params(SMALL, i, 0.5)
            assert gradient_check(p, rng.random((3, 11)), rng.random(), rng.random()) <= 1e-4

    def test_detects_wrong_gradient(self):
        """A small error in one gradient tensor is still caught above the floor."""
        rng = np.random.default_rng(6)
        p = random_params(SMALL, 0, 0.5)
        img, d, t = rng.random((3, 11)), rng.random(), rng.random()
        _, tr = forward(p, img, d)
        analytic = backward(p, tr, img, d, t)
        numeric = numerical_gradient(p, img, d, t)
        assert max(relative_error(analytic[n], numeric[n]).max() for n in PARAM_NAMES) <= 1e-4
        analytic["W_fc3"] = analytic["W_fc3"] * 1.001
        assert relative_error(analytic["W_fc3"], numeric["W_fc3"]).max() > 1e-4

    def test_residual_path_live(self):
        p = init_params(NetworkHyper(seed=1))
        img = np.random.default_rng(2).random((15, 11))
        score, tr = forward(p, img, 0.5)
        _, d_m = backward(p, tr, img, 0.5, 0.0, with_input_grad=True)
        assert d_m != 0.0
        # central difference on the input, with the chain rule through the loss
        eps = 1e-6
        up = loss(forward(p, img, 0.5 + eps)[0], 0.0)
        down = loss(forward(p, img, 0.5 - eps)[0], 0.0)
        assert d_m == pytest.approx((up - down) / (2 * eps), rel=1e-6)

    def test_foreign_trace(self):
        p = init_params(SMALL)
        img = np.zeros((3, 11))
        _, tr = forward(p, img, 0.1)
        with pytest.raises(ValueError):
            backward(p, tr, img + 1, 0.1, 0.5)

    def test_relative_error_floor(self):
        assert relative_error(np.array([1e-12]), np.array([2e-12]))[0] == pytest.approx(1e-6)
        assert relative_error(np.array([1.0]), np.array([1.0 + 1e-8]))[0] == pytest.approx(1e-8, rel=1e-3)


class TestFlatKernel:
    def test_matches_reference(self):
        rng = np.random.default_rng(8)
        for hyper in (SMALL, NetworkHyper(seed=3)):
            p = init_params(hyper)
            img, m, t = rng.random((hyper.image_rows, hyper.image_cols)), 0.37, 0.8
            offs, dims = flat_layout(hyper)
            theta = p.flat()
            grad = np.empty_like(theta)
            score, l = loss_and_grad_flat(theta, grad, offs, dims, img.ravel(), m, t)
            ref_score, tr = forward(p, img, m)
            ref = backward(p, tr, img, m, t)
            assert score == pytest.approx(ref_score, abs=1e-14)
            assert l == pytest.approx(loss(ref_score, t), abs=1e-14)
            gp = params_from_flat(hyper, grad)
            for n in PARAM_NAMES:
                np.testing.assert_allclose(gp[n], ref[n], rtol=1e-10, atol=1e-15)
            assert score_flat(theta, offs, dims, img.ravel(), m) == pytest.approx(ref_score, abs=1e-14)

    def test_flat_round_trip(self):
        p = init_params(SMALL)
        back = params_from_flat(SMALL, p.flat())
        assert all(np.array_equal(back[n], p[n]) for n in PARAM_NAMES)


class TestWeightSums:
    def test_zero(self):
        assert not sum_first_layer_weights(NetworkParams.zeros(SMALL)).any()

    def test_single_unit(self):
        h = NetworkHyper(image_rows=3, widths=(1, 2, 2, 2, 2, 2))
        p = random_params(h, 0)
        assert np.array_equal(sum_first_layer_weights(p), p["W_fc1"][0].reshape(3, 11))

    def test_column_sums(self):
        p = random_params(NetworkHyper(), 1)
        W = p["W_fc1"]
        expected = [[sum(W[i, r * 11 + c] for i in range(W.shape[0])) for c in range(11)] for r in range(15)]
        np.testing.assert_allclose(sum_first_layer_weights(p), expected, rtol=1e-12)


def test_loss_values():
    assert loss(0.5, 0.5) == 0
    assert loss(1.0, 0.0) == 1.0
    assert loss(0.3, 0.7) == pytest.approx(0.16)


def test_checkpoint_round_trip(tmp_path):
    p = init_params(NetworkHyper(seed=9))
    save_checkpoint(p, tmp_path / "c.bin", extra={"data1_ref": 12})
    back, extra = load_checkpoint(tmp_path / "c.bin")
    assert extra == {"data1_ref": 12}
    assert back.hyper == p.hyper
    assert all(back[n].tobytes() == p[n].tobytes() for n in PARAM_NAMES)
    save_checkpoint(back, tmp_path / "d.bin", extra=extra)
    assert (tmp_path / "d.bin").read_bytes() == (tmp_path / "c.bin").read_bytes()
