import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from aesmpfp.errors import NonFiniteValue, ShapeMismatch
from aesmpfp.nnmath import checkpoint
from aesmpfp.nnmath import functional as F
from aesmpfp.nnmath import tensor as T
from aesmpfp.nnmath.gradcheck import gradcheck
from aesmpfp.nnmath.layers import MLP, GRUCell
from aesmpfp.nnmath.optim import Adam, AdamState, adam_step, linear_lr
from aesmpfp.nnmath.tensor import Tensor, no_grad


def test_dense_identity():
    x = np.random.default_rng(0).standard_normal((4, 5))
    W = Tensor(np.eye(5))
    b = Tensor(np.zeros(5))
    np.testing.assert_array_equal(F.dense(x, W, b).data, x)


def test_dense_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        F.dense(np.zeros((2, 3)), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))


def test_kl_identical_is_zero():
    mu = np.array([[0.3, -1.0]])
    s = np.array([[0.5, 2.0]])
    assert F.gaussian_kl(mu, s, mu, s).data == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("m1,s1,m2,s2", [(0.0, 1.0, 1.0, 2.0), (0.5, 0.3, -0.2, 0.8)])
def test_kl_matches_quadrature(m1, s1, m2, s2):
    def p(x, m, s):
        return math.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))

    ref, _ = integrate.quad(lambda x: p(x, m1, s1) * math.log(p(x, m1, s1) / p(x, m2, s2)),
                            m1 - 12 * s1, m1 + 12 * s1)
    got = F.gaussian_kl([[m1]], [[s1]], [[m2]], [[s2]]).data[0]
    assert got == pytest.approx(ref, rel=1e-8)


def test_nonfinite_detected():
    W = Tensor(np.array([[np.inf]]))
    with pytest.raises(NonFiniteValue):
        F.dense(np.ones((1, 1)), W, Tensor(np.zeros(1)))


def test_bce_stable_for_large_logits():
    out = F.bce_with_logits(np.array([[1e4, -1e4]]), np.array([[1.0, 0.0]]))
    assert np.isfinite(out.data).all() and out.data[0] == pytest.approx(0.0, abs=1e-12)


GRAD_CASES = {
    "dense": (lambda x, W, b: F.dense(x, W, b).sum(), [(3, 4), (4, 5), (5,)]),
    "tanh": (lambda x: F.tanh(x).sum(), [(3, 4)]),
    "sigmoid": (lambda x: (F.sigmoid(x) * F.sigmoid(x)).sum(), [(3, 4)]),
    "softplus": (lambda x: F.softplus(x).sum(), [(3, 4)]),
    "elu": (lambda x: (F.elu(x) ** 2).sum(), [(3, 4)]),
    "gaussian_sample": (lambda m, ls: (F.gaussian_sample(m, ls, np.linspace(-1, 1, 6).reshape(2, 3)) ** 2).sum(),
                        [(2, 3), (2, 3)]),
    "mse": (lambda x, y: F.mse(x, y), [(3, 4), (3, 4)]),
    "bce": (lambda l: F.bce_with_logits(l, (np.arange(12).reshape(3, 4) % 2).astype(float)).sum(), [(3, 4)]),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_gradcheck_ops(name):
    fn, shapes = GRAD_CASES[name]
    rng = np.random.default_rng(1)
    for _ in range(5):
        arrays = [rng.standard_normal(s) for s in shapes]
        assert gradcheck(fn, arrays) < 1e-4


def test_gradcheck_relu_away_from_kink():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 4))
    x[np.abs(x) < 1e-2] = 0.5
    assert gradcheck(lambda a: (F.relu(a) ** 2).sum(), [x]) < 1e-4


def test_gradcheck_kl_positive_sigmas():
    rng = np.random.default_rng(3)
    for _ in range(5):
        arrays = [rng.standard_normal((2, 3)), rng.uniform(0.3, 2, (2, 3)),
                  rng.standard_normal((2, 3)), rng.uniform(0.3, 2, (2, 3))]
        assert gradcheck(lambda a, b, c, d: F.gaussian_kl(a, b, c, d).sum(), arrays) < 1e-4


def test_gradcheck_gru():
    rng = np.random.default_rng(4)
    H, I = 3, 2

    def fn(h, x, Wx, Wh, bx, bh):
        out = F.gru_cell(h, x, {"Wx": Wx, "Wh": Wh, "bx": bx, "bh": bh})
        return (out * np.arange(6).reshape(2, 3)).sum()

    arrays = [rng.uniform(-0.9, 0.9, (2, H)), rng.standard_normal((2, I)),
              rng.standard_normal((I, 3 * H)), rng.standard_normal((H, 3 * H)),
              rng.standard_normal(3 * H), rng.standard_normal(3 * H)]
    assert gradcheck(fn, arrays) < 1e-4


def test_gradcheck_shape_ops():
    rng = np.random.default_rng(5)

    def fn(a, b):
        c = T.concat([a, b], axis=1)
        return (T.reshape(c[:, 1:4], (6,)) ** 2).sum() + T.tmean(T.exp(a[:, :2]) / (T.square(b) + 1.0))

    assert gradcheck(fn, [rng.standard_normal((2, 3)), rng.standard_normal((2, 2))]) < 1e-4


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x
    y.sum().backward()
    assert x.grad[0] == pytest.approx(5.0)


def test_gru_zero_fixed_point():
    cell = GRUCell(4, 6, np.random.default_rng(0), dtype=np.float64, zero_recurrent=True)
    cell.Wx.data[:] = 0.0
    out = cell(np.zeros((1, 6)), np.zeros((1, 4)))
    np.testing.assert_array_equal(out.data, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gru_bounded(seed):
    rng = np.random.default_rng(seed)
    cell = GRUCell(5, 8, rng, dtype=np.float64)
    h = np.zeros((3, 8))
    for _ in range(10):
        h = cell(h, rng.standard_normal((3, 5))).data
        assert np.all(np.abs(h) < 1.0)
    # saturating inputs can round tanh to exactly 1.0 but never beyond
    h = cell(h, 100 * rng.standard_normal((3, 5))).data
    assert np.all(np.abs(h) <= 1.0)


def test_forward_determinism():
    net = MLP([7, 16, 3], np.random.default_rng(9))
    x = np.random.default_rng(1).standard_normal((5, 7)).astype(np.float32)
    with no_grad():
        a = net(x).data
        b = net(x).data
    assert a.tobytes() == b.tobytes()


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    out = adam_step(p, [np.zeros(2)], AdamState.zeros_like(p), lr=1e-3)
    np.testing.assert_array_equal(out[0], p[0])


def test_adam_first_step_size():
    p = [np.array([0.5])]
    out = adam_step(p, [np.array([1.0])], AdamState.zeros_like(p), lr=1e-4)
    # m_hat = v_hat = 1 after bias correction, so the step is lr / (1 + eps)
    assert 0.5 - out[0][0] == pytest.approx(1e-4 / (1.0 + 1e-8), rel=1e-9)


def test_adam_rejects_nan():
    p = [np.array([0.0])]
    with pytest.raises(NonFiniteValue):
        adam_step(p, [np.array([np.nan])], AdamState.zeros_like(p), lr=1e-3)


def test_adam_minimizes_quadratic():
    w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([w])
    for _ in range(3000):
        opt.zero_grad()
        T.square(w - np.array([1.0, 1.0])).sum().backward()
        opt.step(1e-2)
    np.testing.assert_allclose(w.data, [1.0, 1.0], atol=1e-3)


def test_lr_schedule_endpoints():
    assert linear_lr(0, 1000) == 1e-4
    assert linear_lr(1000, 1000) == 1e-6
    assert linear_lr(500, 1000) == pytest.approx(5.05e-5, rel=1e-12)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    blocks = {"a/W": rng.standard_normal((3, 4)), "a/b": rng.standard_normal(4), "s": np.array(0.25)}
    raw = checkpoint.dumps(blocks)
    back = checkpoint.loads(raw)
    assert list(back) == list(blocks)
    assert back["s"].shape == ()
    assert checkpoint.dumps(back) == raw
    path = tmp_path / "ck.bin"
    checkpoint.save(path, back)
    assert path.read_bytes() == raw


def test_checkpoint_rejects_garbage():
    from aesmpfp.errors import CheckpointError

    with pytest.raises(CheckpointError):
        checkpoint.loads(b"not a checkpoint at all")


def test_no_grad_is_thread_local():
    import threading

    from aesmpfp.nnmath.tensor import grad_enabled

    barrier = threading.Barrier(8)
    seen = []

    def worker():
        barrier.wait()
        for _ in range(200):
            with no_grad():
                seen.append(grad_enabled())

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not any(seen)
    assert grad_enabled()
