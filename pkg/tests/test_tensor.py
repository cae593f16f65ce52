"""Tensor engine tests: forward semantics against independent oracles and
backward gradients against central finite differences."""

import math

import numpy as np
import pytest

from lisn.tensor import (
    Parameter,
    Tape,
    Tensor,
    absolute,
    add,
    concat_channels,
    conv2d,
    gelu,
    global_avg,
    global_std,
    grad_check,
    layer_norm,
    mean,
    mul,
    scale,
    sigmoid,
    split_channels,
    sub,
)


def naive_conv2d(x, w, b=None, stride=1, pad=0, groups=1):
    """Nested-loop convolution oracle, independent of the im2col path."""
    n, cin, h, wd = x.shape
    cout, cig, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    og = cout // groups
    for nn in range(n):
        for oc in range(cout):
            g = oc // og
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(cig):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += w[oc, ic, ki, kj] * xp[nn, g * cig + ic, i * stride + ki, j * stride + kj]
                    out[nn, oc, i, j] = acc + (0.0 if b is None else b[oc])
    return out


def fd_gradient(f, arr, h=1e-6):
    """Central-difference gradient of scalar f() w.r.t. a float64 array."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = f()
        flat[i] = orig - h
        lm = f()
        flat[i] = orig
        gflat[i] = (lp - lm) / (2.0 * h)
    return grad


class TestConv2d:
    def test_all_ones_3x3_pad1(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = conv2d(x, w, pad=1)
        expected = [[4, 6, 4], [6, 9, 6], [4, 6, 4]]
        np.testing.assert_array_equal(out.data[0, 0], expected)

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 1, 5, 4)).astype(np.float32))
        w = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        np.testing.assert_array_equal(conv2d(x, w).data, x.data)

    def test_zero_depthwise_annihilates(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(1, 6, 4, 4)).astype(np.float32))
        w = Tensor(np.zeros((6, 1, 3, 3), dtype=np.float32))
        b = Tensor(np.zeros(6, dtype=np.float32))
        out = conv2d(x, w, b, pad=1, groups=6)
        assert out.shape == x.shape
        assert np.all(out.data == 0.0)

    @pytest.mark.parametrize(
        "cin,cout,k,stride,pad,groups",
        [
            (3, 4, 3, 1, 1, 1),
            (2, 2, 3, 1, 0, 1),
            (4, 4, 3, 1, 1, 4),
            (4, 8, 1, 1, 0, 1),
            (3, 6, 3, 2, 1, 3),
        ],
    )
    def test_matches_nested_loop_oracle(self, cin, cout, k, stride, pad, groups):
        rng = np.random.default_rng(cin * 31 + cout)
        x = rng.normal(size=(2, cin, 5, 5))
        w = rng.normal(size=(cout, cin // groups, k, k))
        b = rng.normal(size=cout)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad, groups=groups)
        want = naive_conv2d(x, w, b, stride=stride, pad=pad, groups=groups)
        np.testing.assert_array_equal(got.data, want)

    def test_linearity(self):
        rng = np.random.default_rng(5)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)).astype(np.float32))
        x = Tensor(rng.normal(size=(1, 2, 6, 6)).astype(np.float32))
        y = Tensor(rng.normal(size=(1, 2, 6, 6)).astype(np.float32))
        a, bcoef = 1.7, -0.4
        lhs = conv2d(Tensor(a * x.data + bcoef * y.data), w, pad=1).data
        rhs = a * conv2d(x, w, pad=1).data + bcoef * conv2d(y, w, pad=1).data
        np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-6)

    def test_channel_mismatch_names_both_shapes(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 4, 3, 3)))
        with pytest.raises(ValueError, match=r"\(1, 3, 4, 4\).*\(2, 4, 3, 3\)"):
            conv2d(x, w)

    def test_output_size_law(self):
        x = Tensor(np.zeros((1, 1, 9, 7)))
        w = Tensor(np.zeros((1, 1, 3, 3)))
        assert conv2d(x, w, stride=2, pad=1).shape == (1, 1, 5, 4)


class TestElementwise:
    def test_add_identity(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(1, 2, 3, 3)).astype(np.float32))
        np.testing.assert_array_equal(add(x, Tensor(np.zeros_like(x.data))).data, x.data)

    def test_mul_definitional(self):
        out = mul(Tensor(np.array([2.0, 3.0])), Tensor(np.array([4.0, 5.0])))
        np.testing.assert_array_equal(out.data, [8.0, 15.0])

    def test_mul_broadcast_identity(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(2, 3, 4, 4)).astype(np.float32))
        ones = Tensor(np.ones((2, 3, 1, 1), dtype=np.float32))
        np.testing.assert_array_equal(mul(x, ones).data, x.data)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            add(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 2, 3, 4))))
        with pytest.raises(ValueError):
            mul(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 3, 1, 1))))


class TestActivations:
    def test_sigmoid_values(self):
        out = sigmoid(Tensor(np.array([0.0, 1.0])))
        assert out.data[0] == 0.5
        assert abs(out.data[1] - 0.73105858) < 1e-7

    def test_sigmoid_range(self):
        x = Tensor(np.linspace(-30, 30, 101))
        s = sigmoid(x).data
        assert np.all(s > 0.0) and np.all(s < 1.0)

    def test_gelu_values(self):
        out = gelu(Tensor(np.array([0.0, 1.0])))
        assert out.data[0] == 0.0
        want = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        assert abs(out.data[1] - want) < 1e-12


class TestLayerNorm:
    def test_constant_across_channels_gives_zeros(self):
        x = Tensor(np.full((1, 4, 3, 3), 2.5))
        out = layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_two_channel_hand_case(self):
        x = np.zeros((1, 2, 1, 1))
        x[0, :, 0, 0] = [1.0, 3.0]
        out = layer_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data[0, :, 0, 0], [-1.0, 1.0], atol=1e-5)

    def test_affine_collapse(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(1, 3, 2, 2)))
        out = layer_norm(x, Tensor(np.zeros(3)), Tensor(np.full(3, 7.0)))
        np.testing.assert_array_equal(out.data, np.full((1, 3, 2, 2), 7.0))

    def test_normalized_statistics(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(0, 3, size=(2, 16, 4, 4)))
        out = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
        mu = out.mean(axis=1)
        var = out.var(axis=1)
        assert np.abs(mu).max() < 1e-6
        assert np.abs(var - 1.0).max() < 1e-4

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            layer_norm(Tensor(np.zeros((1, 4, 2, 2))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


class TestGlobalStats:
    def test_constant_channel(self):
        x = Tensor(np.full((1, 2, 3, 5), 4.25))
        np.testing.assert_array_equal(global_avg(x).data, np.full((1, 2, 1, 1), 4.25))
        np.testing.assert_array_equal(global_std(x).data, np.zeros((1, 2, 1, 1)))

    def test_two_value_hand_case(self):
        x = np.zeros((1, 1, 1, 2))
        x[0, 0, 0] = [0.0, 2.0]
        assert global_avg(Tensor(x)).data[0, 0, 0, 0] == 1.0
        assert global_std(Tensor(x)).data[0, 0, 0, 0] == 1.0

    def test_std_nonnegative(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(3, 5, 6, 6)))
        assert np.all(global_std(x).data >= 0.0)


class TestSplitConcat:
    def test_split_channel_ranges(self):
        x = np.arange(4 * 2 * 2, dtype=np.float64).reshape(1, 4, 2, 2)
        a, b = split_channels(Tensor(x), [2, 2])
        np.testing.assert_array_equal(a.data, x[:, :2])
        np.testing.assert_array_equal(b.data, x[:, 2:])

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(size=(2, 7, 3, 4)).astype(np.float32))
        parts = split_channels(x, [3, 2, 2])
        back = concat_channels(parts)
        assert np.array_equal(back.data, x.data)

    def test_halves_of_64(self):
        x = Tensor(np.random.default_rng(9).normal(size=(1, 64, 2, 2)))
        a, b = split_channels(x, [32, 32])
        assert a.shape == (1, 32, 2, 2) and b.shape == (1, 32, 2, 2)

    def test_size_sum_mismatch_rejected(self):
        with pytest.raises(ValueError):
            split_channels(Tensor(np.zeros((1, 5, 2, 2))), [2, 2])


class TestBackward:
    def test_linear_form_gradient(self):
        rng = np.random.default_rng(10)
        xval = rng.normal(size=(2, 3, 4, 4))
        w = Parameter("w", rng.normal(size=(2, 3, 4, 4)), dtype=np.float64)
        x = Tensor(xval)
        tape = Tape()
        with tape:
            # sum(w * x) written as numel * mean(w * x)
            loss = scale(mean(mul(w, x)), w.data.size)
        tape.backward(loss)
        np.testing.assert_allclose(w.grad, xval, rtol=1e-12)

    def test_mean_square_gradient(self):
        rng = np.random.default_rng(11)
        x = Parameter("x", rng.normal(size=(1, 2, 3, 3)), dtype=np.float64)
        t = Tensor(rng.normal(size=(1, 2, 3, 3)))
        tape = Tape()
        with tape:
            d = sub(x, t)
            loss = mean(mul(d, d))
        tape.backward(loss)
        want = 2.0 * (x.data - t.data) / x.data.size
        np.testing.assert_allclose(x.grad, want, rtol=1e-12)

    def test_accumulation_doubles(self):
        rng = np.random.default_rng(12)
        w = Parameter("w", rng.normal(size=(1, 1, 2, 2)), dtype=np.float64)
        x = Tensor(rng.normal(size=(1, 1, 2, 2)))
        tape = Tape()
        with tape:
            loss = mean(mul(w, x))
        tape.backward(loss)
        once = w.grad.copy()
        tape.backward(loss)
        np.testing.assert_array_equal(w.grad, 2.0 * once)

    def test_non_scalar_loss_rejected(self):
        w = Parameter("w", np.ones((2, 2)))
        tape = Tape()
        with tape:
            out = mul(w, w)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(out)

    def test_disconnected_parameter(self):
        w = Parameter("w", np.ones((2, 2)), dtype=np.float64)
        other = Parameter("v", np.full((2, 2), 3.0), dtype=np.float64)
        tape = Tape()
        with tape:
            loss = mean(mul(other, other))
        tape.backward(loss)
        assert np.all(w.grad == 0.0)
        fd = fd_gradient(lambda: float(mean(mul(other, other)).data), w.data)
        assert np.abs(fd).max() < 1e-9


class TestOpGradients:
    """Every op's backward matches central finite differences (float64)."""

    @pytest.mark.parametrize(
        "name",
        ["conv", "conv_grouped", "add", "sub", "mul", "mul_broadcast", "scale",
         "sigmoid", "gelu", "absolute", "layer_norm", "global_avg", "global_std",
         "concat", "split"],
    )
    def test_finite_difference_agreement(self, name):
        rng = np.random.default_rng(hash(name) % 2**32)
        x = Parameter("x", rng.normal(size=(2, 4, 3, 3)), dtype=np.float64)
        aux = Tensor(rng.normal(size=(2, 4, 3, 3)))
        w = Parameter("w", rng.normal(size=(4, 4, 3, 3)) * 0.3, dtype=np.float64)
        wg = Parameter("wg", rng.normal(size=(4, 1, 3, 3)) * 0.3, dtype=np.float64)
        gm = Parameter("gm", rng.normal(size=4), dtype=np.float64)
        gate = Tensor(rng.normal(size=(2, 4, 1, 1)))

        def build():
            if name == "conv":
                return mean(conv2d(x, w, pad=1))
            if name == "conv_grouped":
                return mean(conv2d(x, wg, pad=1, groups=4))
            if name == "add":
                return mean(mul(add(x, aux), aux))
            if name == "sub":
                return mean(mul(sub(x, aux), aux))
            if name == "mul":
                return mean(mul(x, aux))
            if name == "mul_broadcast":
                return mean(mul(mul(x, gate), aux))
            if name == "scale":
                return mean(scale(x, -2.5))
            if name == "sigmoid":
                return mean(mul(sigmoid(x), aux))
            if name == "gelu":
                return mean(mul(gelu(x), aux))
            if name == "absolute":
                return mean(mul(absolute(x), aux))
            if name == "layer_norm":
                return mean(mul(layer_norm(x, gm, gm), aux))
            if name == "global_avg":
                return mean(mul(global_avg(x), Tensor(aux.data[:, :, :1, :1])))
            if name == "global_std":
                return mean(mul(global_std(x), Tensor(aux.data[:, :, :1, :1])))
            if name == "concat":
                return mean(mul(concat_channels([x, x]), Tensor(np.concatenate([aux.data] * 2, 1))))
            if name == "split":
                a, b = split_channels(x, [1, 3])
                return add(mean(mul(a, Tensor(aux.data[:, :1]))), mean(a_b(b)))
            raise AssertionError(name)

        def a_b(t):
            return mul(t, Tensor(aux.data[:, 1:]))

        params = [x, gm] if name == "layer_norm" else ([x, w] if name == "conv" else ([x, wg] if name == "conv_grouped" else [x]))
        err = grad_check(build, params, h=1e-6)
        assert err < 1e-4, f"{name}: finite-difference mismatch {err:.3e}"


class TestGradCheck:
    def test_quadratic_tight(self):
        rng = np.random.default_rng(14)
        w = Parameter("w", rng.normal(size=(3, 3)), dtype=np.float64)
        t = Tensor(rng.normal(size=(3, 3)))

        def f():
            d = sub(w, t)
            return mean(mul(d, d))

        assert grad_check(f, [w], h=1e-5) < 1e-7

    def test_tape_exclusive_per_thread(self):
        with Tape():
            with pytest.raises(RuntimeError):
                with Tape():
                    pass


class TestTensorBasics:
    def test_data_length_matches_shape(self):
        t = Tensor(np.zeros((2, 3, 4, 5)))
        assert t.data.size == 2 * 3 * 4 * 5

    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_float64_selectable(self):
        assert Tensor([1.0], dtype=np.float64).dtype == np.float64

    def test_parameter_grad_zero_initialized(self):
        p = Parameter("p", np.ones((2, 2)))
        assert p.grad.shape == p.data.shape
        assert np.all(p.grad == 0.0)
