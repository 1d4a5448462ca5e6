import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualcodec.autodiff import (
    Adam,
    Ema,
    Initializer,
    Linear,
    Parameter,
    Tensor,
    backward,
    cosine_lr,
    is_grad_enabled,
    load_arrays,
    no_grad,
    ops,
    save_arrays,
)
from dualcodec.exceptions import DataError, DimensionError, NonFiniteError, StateError


def numeric_grads(f, arrays, weights, eps=1e-6):
    """Central finite differences of ``sum(f(*arrays) * weights)``."""
    grads = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            vals = []
            for sign in (1, -1):
                shifted = [x.copy() for x in arrays]
                shifted[i][idx] += sign * eps
                vals.append(np.sum(f(*[Tensor(x) for x in shifted]).data * weights))
            g[idx] = (vals[0] - vals[1]) / (2 * eps)
        grads.append(g)
    return grads


def check_grads(f, arrays, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = f(*ts)
    weights = rng.standard_normal(out.shape)
    backward((out * Tensor(weights)).sum())
    for t, num in zip(ts, numeric_grads(f, arrays, weights)):
        np.testing.assert_allclose(t.grad, num, atol=tol, rtol=tol)


def conv_reference(x, w, b):
    """Direct-loop 'same' convolution, NHWC with [kh, kw, Cin, Cout] weights."""
    bsz, h, wd, _ = x.shape
    kh, kw, _, cout = w.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    out = np.zeros((bsz, h, wd, cout))
    for i in range(h):
        for j in range(wd):
            patch = xp[:, i : i + kh, j : j + kw, :]
            out[:, i, j, :] = np.einsum("bhwc,hwco->bo", patch, w)
    return out + b


class TestTensorBasics:
    def test_integer_input_promoted(self):
        assert Tensor([1, 2]).dtype == np.float64

    def test_chain_rule_scalar(self):
        x = Tensor(np.array(0.7), requires_grad=True)
        y = ops.tanh(x * x) + ops.exp(x)
        backward(y)
        expected = (1 - math.tanh(0.49) ** 2) * 1.4 + math.exp(0.7)
        assert x.grad == pytest.approx(expected)

    def test_shared_node_accumulates(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        y = x * 3.0
        backward((y * y + y).sum())
        np.testing.assert_allclose(x.grad, 18 * x.data + 3)

    def test_broadcast_gradient_reduced(self):
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        backward((a * b).sum())
        np.testing.assert_allclose(b.grad, np.full(4, 3.0))

    def test_backward_twice_raises(self):
        x = Tensor(np.ones(2), requires_grad=True)
        y = (x * x).sum()
        backward(y)
        with pytest.raises(StateError):
            backward(y)

    def test_non_scalar_without_grad(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(DimensionError):
            backward(x * 2.0)

    def test_no_grad_blocks_recording(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            assert not is_grad_enabled()
            y = x * 2.0
        assert is_grad_enabled()
        assert not y.requires_grad
        with pytest.raises(StateError):
            backward(y.sum())

    def test_detach_stops_gradient(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        backward((ops.detach(x) * x).sum())
        np.testing.assert_allclose(x.grad, [2.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


class TestOpGradients:
    @pytest.mark.parametrize(
        "f, shapes",
        [
            (lambda a, b: a * b + a / (b * b + 1.0), [(3, 4), (3, 4)]),
            (lambda a: ops.gelu(a), [(5,)]),
            (lambda a: ops.silu(a), [(5,)]),
            (lambda a: ops.softmax(a, axis=-1), [(2, 5)]),
            (lambda a: ops.layer_norm(a), [(3, 6)]),
            (lambda a, b: ops.matmul(a, b), [(2, 3, 4), (4, 5)]),
            (lambda a: ops.concat([a, a * 2.0], axis=1), [(2, 3)]),
            (lambda a: a[:, 1:3].reshape(-1), [(2, 4)]),
            (lambda a: a.transpose(1, 0, 2).sum(axis=2), [(2, 3, 2)]),
            (lambda a, b: ops.pseudo_huber(a, b, 0.3, axis=1), [(2, 6), (2, 6)]),
        ],
    )
    def test_elementwise_and_reductions(self, f, shapes):
        rng = np.random.default_rng(len(shapes))
        check_grads(f, [rng.standard_normal(s) for s in shapes])

    def test_attention(self):
        rng = np.random.default_rng(3)
        mask = np.tril(np.ones((4, 4))) == 0
        mask = np.where(mask, -np.inf, 0.0)
        q, k, v = (rng.standard_normal((2, 1, 4, 3)) for _ in range(3))
        check_grads(lambda q, k, v: ops.scaled_dot_attention(q, k, v, mask), [q, k, v])

    def test_conv2d_same(self):
        rng = np.random.default_rng(4)
        arrays = [rng.standard_normal((2, 5, 4, 3)), rng.standard_normal((3, 3, 3, 2)), rng.standard_normal(2)]
        check_grads(lambda x, w, b: ops.conv2d_same(x, w, b), arrays)

    def test_conv2d_same_matches_direct_loop(self):
        rng = np.random.default_rng(5)
        x, w, b = rng.standard_normal((2, 6, 5, 3)), rng.standard_normal((3, 3, 3, 4)), rng.standard_normal(4)
        out = ops.conv2d_same(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(out, conv_reference(x, w, b), atol=1e-12)

    def test_patch_down_up(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 4, 6, 3))
        check_grads(lambda x, w, b: ops.patch_down(x, w, b, (2, 2)),
                    [x, rng.standard_normal((12, 5)), rng.standard_normal(5)])
        check_grads(lambda x, w, b: ops.patch_up(x, w, b, (2, 2)),
                    [x, rng.standard_normal((3, 20)), rng.standard_normal(5)])

    def test_patch_down_identity_weights_is_space_to_depth(self):
        x = np.arange(2 * 4 * 4 * 1, dtype=float).reshape(2, 4, 4, 1)
        out = ops.patch_down(Tensor(x), Tensor(np.eye(4)), None, (2, 2)).data
        assert out.shape == (2, 2, 2, 4)
        np.testing.assert_array_equal(np.sort(out[0, 0, 0]), [0, 1, 4, 5])

    def test_ste_round_forward_and_gradient(self):
        x = Tensor(np.array([0.24, 0.26, -0.74, 0.25]), requires_grad=True)
        y = ops.ste_round(x, 2)
        np.testing.assert_allclose(y.data, [0.0, 0.5, -0.5, 0.5])
        backward(y.sum())
        np.testing.assert_allclose(x.grad, np.ones(4))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8))
    def test_round_half_away_symmetry(self, values):
        v = np.array(values)
        np.testing.assert_array_equal(ops.round_half_away(-v), -ops.round_half_away(v))


class TestOptim:
    @pytest.mark.parametrize("progress, expected", [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0), (2.0, 0.0)])
    def test_cosine(self, progress, expected):
        assert cosine_lr(1.0, progress) == pytest.approx(expected, abs=1e-12)

    def test_adam_first_step_is_lr_times_sign(self):
        p = Parameter(np.array([1.0, -2.0]))
        opt = Adam([("p", p)], lr=0.1)
        p.grad = np.array([3.0, -0.5])
        opt.step()
        np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)

    def test_radam_warmup_uses_momentum_only(self):
        p = Parameter(np.array([0.0]))
        opt = Adam([("p", p)], lr=0.1, rectify=True)
        p.grad = np.array([2.0])
        opt.step()
        np.testing.assert_allclose(p.data, [-0.2])

    def test_adam_minimizes_quadratic(self):
        p = Parameter(np.array([5.0, -3.0]))
        opt = Adam([("p", p)], lr=0.1, rectify=True)
        for _ in range(500):
            opt.zero_grad()
            backward((p * p).sum())
            opt.step()
        assert np.max(np.abs(p.data)) < 1e-2

    def test_nonfinite_gradient_rejected(self):
        p = Parameter(np.array([1.0]))
        opt = Adam([("p", p)])
        p.grad = np.array([np.nan])
        with pytest.raises(NonFiniteError):
            opt.step()
        assert p.data[0] == 1.0

    def test_schedule_reaches_zero(self):
        p = Parameter(np.zeros(1))
        opt = Adam([("p", p)], lr=1.0, total_steps=4)
        lrs = []
        for _ in range(4):
            lrs.append(opt.lr)
            p.grad = np.ones(1)
            opt.step()
        np.testing.assert_allclose(lrs, [1.0, (1 + math.cos(math.pi / 4)) / 2, 0.5, (1 + math.cos(3 * math.pi / 4)) / 2])

    def test_ema(self):
        p = Parameter(np.array([0.0]))
        ema = Ema([("p", p)], momentum=0.9)
        p.data = np.array([1.0])
        ema.update([("p", p)])
        ema.update([("p", p)])
        np.testing.assert_allclose(ema.shadow["p"], [1 - 0.81])


class TestModules:
    def test_named_parameters_and_state_dict(self):
        layer = Linear(Initializer(0), 3, 2)
        names = [n for n, _ in layer.named_parameters()]
        assert len(names) == 2
        state = {k: v + 1 for k, v in layer.state_dict().items()}
        layer.load_state_dict(state)
        for k, v in layer.state_dict().items():
            np.testing.assert_array_equal(v, state[k])

    def test_ghost_initializer_allocates_nothing(self):
        layer = Linear(Initializer(0, materialize=False), 1000, 1000)
        assert layer.num_parameters() == 1000 * 1000 + 1000
        assert all(p.data.strides == (0,) * p.ndim for p in layer.parameters())


class TestCheckpointArrays:
    def test_round_trip(self, tmp_path):
        arrays = {"raw/w": np.arange(6, dtype=np.float32).reshape(2, 3), "meta/s": np.array([7.0], np.float32)}
        save_arrays(tmp_path / "a.dckp", arrays)
        back = load_arrays(tmp_path / "a.dckp")
        assert list(back) == list(arrays)
        for k in arrays:
            np.testing.assert_array_equal(back[k], arrays[k])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(DataError):
            load_arrays(tmp_path / "x")

    def test_truncated(self, tmp_path):
        save_arrays(tmp_path / "a", {"w": np.ones(100, np.float32)})
        raw = (tmp_path / "a").read_bytes()
        (tmp_path / "b").write_bytes(raw[:-10])
        with pytest.raises(DataError):
            load_arrays(tmp_path / "b")
