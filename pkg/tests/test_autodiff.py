import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsnt import autodiff as ad
from dsnt.autodiff import Tape, Tensor, backward, grad_check, parameter
from dsnt.autodiff.checkpoint import (
    MAGIC, CheckpointError, decode_arrays, encode_arrays, load_checkpoint, save_checkpoint,
    sidecar_path,
)

R = np.random.default_rng(99)


def P(*shape, lo=-1.0, hi=1.0):
    return parameter(R.uniform(lo, hi, size=shape))


def projected(out_fn, shape_seed=0):
    """Scalar loss sum(out * W) with a fixed random W, so every output entry matters."""
    cache = {}

    def f():
        out = out_fn()
        if "w" not in cache:
            cache["w"] = Tensor(np.random.default_rng(shape_seed).normal(size=out.shape))
        return ad.sum_(ad.mul(out, cache["w"]))
    return f


def cases():
    a, b = P(3, 4), P(3, 4)
    m1, m2 = P(3, 4), P(4, 2)
    v = P(4)
    pos = P(5, lo=0.5, hi=2.0)
    away = parameter(np.array([0.7, -0.4, 1.3, -2.0, 0.2]))
    mask = ad.dropout_mask((3, 4), 0.5, np.random.default_rng(0))
    table = P(6, 3)
    logits = P(5)
    s1, s2 = P(2, 3), P(2, 3)
    return {
        "add": (lambda: ad.add(a, b), {"a": a, "b": b}),
        "add_broadcast": (lambda: ad.add(a, v), {"a": a, "v": v}),
        "sub": (lambda: ad.sub(a, b), {"a": a, "b": b}),
        "mul": (lambda: ad.mul(a, b), {"a": a, "b": b}),
        "scale": (lambda: ad.scale(a, -2.5), {"a": a}),
        "matmul": (lambda: ad.matmul(m1, m2), {"A": m1, "B": m2}),
        "matmul_vec_mat": (lambda: ad.matmul(v, m2), {"v": v, "B": m2}),
        "matvec": (lambda: ad.matvec(m1, v), {"A": m1, "v": v}),
        "concat": (lambda: ad.concat([s1, s2], axis=1), {"s1": s1, "s2": s2}),
        "stack": (lambda: ad.stack([s1, s2]), {"s1": s1, "s2": s2}),
        "slice": (lambda: a[1:, ::2], {"a": a}),
        "slice_fancy": (lambda: a[[0, 2, 0]], {"a": a}),
        "tanh": (lambda: ad.tanh(a), {"a": a}),
        "sigmoid": (lambda: ad.sigmoid(a), {"a": a}),
        "relu": (lambda: ad.relu(away), {"x": away}),
        "exp": (lambda: ad.exp(a), {"a": a}),
        "log": (lambda: ad.log(pos), {"x": pos}),
        "softmax": (lambda: ad.softmax(a, axis=1), {"a": a}),
        "softmax_axis0": (lambda: ad.softmax(a, axis=0), {"a": a}),
        "log_softmax": (lambda: ad.log_softmax(logits), {"z": logits}),
        "sum_axis": (lambda: ad.sum_(a, axis=0), {"a": a}),
        "mean": (lambda: ad.mean(a, axis=1), {"a": a}),
        "dropout": (lambda: ad.dropout(a, mask), {"a": a}),
        "embedding_lookup": (lambda: ad.take(table, [1, 4, 1, 0]), {"E": table}),
        "reshape": (lambda: ad.reshape(a, (2, 6)), {"a": a}),
        "transpose": (lambda: ad.transpose(m1), {"A": m1}),
    }


@pytest.mark.parametrize("name", sorted(cases()))
def test_primitive_gradients(name):
    fn, params = cases()[name]
    err = grad_check(projected(fn), params, max_coords=None)
    assert err < 1e-6, f"{name}: {err}"


def test_cross_entropy_gradient():
    z = P(5)
    for target in range(5):
        assert grad_check(lambda: ad.cross_entropy(z, target), {"z": z}, max_coords=None) < 1e-6


def test_matmul_tight():
    A, B = P(3, 4), P(4, 2)
    assert grad_check(projected(lambda: ad.matmul(A, B)), {"A": A, "B": B}, max_coords=None) < 1e-7


def test_sigmoid_at_zero():
    x = parameter(np.zeros(1))
    with Tape() as tape:
        y = ad.sigmoid(x)
        loss = ad.sum_(y)
    assert y.data[0] == 0.5
    assert backward(tape, loss, {"x": x})["x"][0] == pytest.approx(0.25)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
def test_softmax_normalized(values):
    assert abs(ad.softmax(Tensor(values)).data.sum() - 1.0) < 1e-12


def test_sum_gradient_is_ones():
    x = P(3, 2)
    with Tape() as tape:
        loss = ad.sum_(x)
    assert np.array_equal(backward(tape, loss, {"x": x})["x"], np.ones((3, 2)))


def test_unreached_parameter_gets_zero():
    x, w = P(3), P(2, 2)
    with Tape() as tape:
        loss = ad.sum_(ad.tanh(x))
    grads = backward(tape, loss, {"x": x, "w": w})
    assert np.array_equal(grads["w"], np.zeros((2, 2)))


def test_non_scalar_loss_rejected():
    x = P(3)
    with Tape() as tape:
        y = ad.tanh(x)
    with pytest.raises(ad.ShapeError):
        backward(tape, y, {"x": x})


def test_shape_mismatch_raises():
    with pytest.raises(ad.ShapeError):
        ad.matmul(P(3, 4), P(3, 4))
    with pytest.raises(ad.ShapeError):
        ad.add(P(3, 4), P(2, 4))


def test_non_finite_names_op():
    with pytest.raises(FloatingPointError, match="log"):
        ad.log(Tensor([0.0, 1.0]))


def test_no_recording_outside_tape():
    x = P(3)
    y = ad.tanh(x)
    with Tape() as tape:
        ad.tanh(Tensor([1.0]))  # untracked input
    assert len(tape) == 0 and isinstance(y, Tensor)


def test_backward_is_linear():
    x, w = P(4), P(4)
    alpha, beta = 0.7, -1.3

    def l1():
        return ad.sum_(ad.tanh(ad.mul(x, w)))

    def l2():
        return ad.sum_(ad.sigmoid(x))

    def grads(f):
        with Tape() as tape:
            loss = f()
        return backward(tape, loss, {"x": x, "w": w})
    combo = grads(lambda: ad.add(ad.scale(l1(), alpha), ad.scale(l2(), beta)))
    g1, g2 = grads(l1), grads(l2)
    for k in ("x", "w"):
        np.testing.assert_allclose(combo[k], alpha * g1[k] + beta * g2[k], atol=1e-12)


def test_shared_input_accumulates():
    x = P(3)
    with Tape() as tape:
        loss = ad.sum_(ad.add(ad.mul(x, x), x))
    np.testing.assert_allclose(backward(tape, loss, {"x": x})["x"], 2 * x.data + 1)


def test_tapes_are_per_thread():
    errors = []

    def work(seed):
        try:
            r = np.random.default_rng(seed)
            x = parameter(r.normal(size=5))
            for _ in range(50):
                with Tape() as tape:
                    loss = ad.sum_(ad.mul(x, x))
                np.testing.assert_allclose(backward(tape, loss, {"x": x})["x"], 2 * x.data)
        except Exception as exc:  # pragma: no cover - surfaced below
            errors.append(exc)
    threads = [threading.Thread(target=work, args=(s,)) for s in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors


def test_inverted_dropout():
    rng = np.random.default_rng(0)
    mask = ad.dropout_mask((200_000,), 0.5, rng)
    assert set(np.unique(mask)) <= {0.0, 2.0}
    assert abs(mask.mean() - 1.0) < 0.01
    assert np.array_equal(ad.dropout_mask((4,), 1.0, rng), np.ones(4))


# --- optimizers ----------------------------------------------------------------

def test_sgd_arithmetic():
    params = {"t": np.array([1.0])}
    ad.sgd_step(params, {"t": np.array([0.5])}, ad.OptimizerConfig(lr=0.01))
    assert params["t"][0] == pytest.approx(0.995, abs=1e-15)


@pytest.mark.parametrize("name", ["sgd", "adagrad", "adam"])
def test_zero_gradient_is_noop(name):
    params = {"t": np.array([0.3, -2.0])}
    opt = ad.Optimizer(params, ad.OptimizerConfig(name=name, lr=0.1))
    for _ in range(3):
        opt.step({"t": np.zeros(2)})
    np.testing.assert_array_equal(params["t"], [0.3, -2.0])


def test_adam_first_step_is_lr_sign():
    params = {"t": np.array([1.0, 1.0])}
    ad.adam_step(params, {"t": np.array([3.0, -0.2])}, ad.OptimizerConfig(lr=0.1), ad.OptimizerState())
    np.testing.assert_allclose(params["t"], [0.9, 1.1], atol=1e-6)


def test_adagrad_arithmetic():
    params = {"t": np.array([1.0])}
    state = ad.OptimizerState()
    cfg = ad.OptimizerConfig(lr=0.1, eps=0.0)
    ad.adagrad_step(params, {"t": np.array([2.0])}, cfg, state)
    ad.adagrad_step(params, {"t": np.array([2.0])}, cfg, state)
    assert params["t"][0] == pytest.approx(1.0 - 0.1 - 0.1 * 2 / np.sqrt(8))


def test_clipping():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped = ad.clip_by_global_norm(grads, 1.0)
    assert ad.global_norm(clipped) == pytest.approx(1.0)
    assert ad.clip_by_global_norm(grads, 10.0)["a"][0] == 3.0


def test_non_finite_update_aborts():
    with pytest.raises(FloatingPointError, match="t"):
        ad.sgd_step({"t": np.array([1.0])}, {"t": np.array([np.inf])}, ad.OptimizerConfig())


# --- checkpoints ------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    arrays = {"emb": R.normal(size=(5, 3)), "b": np.arange(4.0), "s": np.array(2.5), "ünï": np.ones((2, 1, 2))}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, arrays, {"vocab": {"a": 0}, "lr": 0.01})
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    back, meta = load_checkpoint(path)
    assert meta == {"vocab": {"a": 0}, "lr": 0.01}
    assert list(back) == list(arrays)
    for k, v in arrays.items():
        assert back[k].shape == v.shape
        np.testing.assert_array_equal(back[k], v.astype(np.float32).astype(np.float64))
    assert sidecar_path(path).exists()
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".") or p.suffix == ".tmp"]


def test_checkpoint_deterministic_bytes():
    arrays = {"w": R.normal(size=(3, 3))}
    assert encode_arrays(arrays) == encode_arrays(dict(arrays))
    again = decode_arrays(encode_arrays(decode_arrays(encode_arrays(arrays))))
    assert encode_arrays(again) == encode_arrays(arrays)


def test_checkpoint_layout():
    payload = encode_arrays({"ab": np.array([[1.0, 2.0]])})
    body = payload[len(MAGIC):]
    assert body[:4] == (2).to_bytes(4, "little") and body[4:6] == b"ab"
    assert body[6] == 0  # float32
    assert body[7:11] == (2).to_bytes(4, "little")
    assert np.frombuffer(body[19:], "<f4").tolist() == [1.0, 2.0]


@pytest.mark.parametrize("blob", [b"NOPE", MAGIC + b"\x05\x00", MAGIC + b"\x01\x00\x00\x00a\x07"])
def test_checkpoint_corrupt(blob):
    with pytest.raises(CheckpointError):
        decode_arrays(blob)
