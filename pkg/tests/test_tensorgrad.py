"""Tests for the autodiff engine: forward oracles, gradients, Adam, container."""

import numpy as np
import pytest

from slotrx import tensorgrad as tg
from slotrx.errors import (
    CheckpointError,
    ContractError,
    DimensionError,
    NumericalError,
    StateError,
)


def _param_set(rng, specs):
    ps = tg.ParamSet()
    tensors = {}
    for name, shape in specs:
        tensors[name] = ps.add(name, rng.standard_normal(shape))
    return ps, tensors


# ---------------------------------------------------------------- dense

def test_dense_identity():
    x = tg.constant([1.0, 2.0, 3.0])
    w = tg.constant(np.eye(3))
    b = tg.constant(np.zeros(3))
    np.testing.assert_array_equal(tg.dense(x, w, b).value, [1.0, 2.0, 3.0])


def test_dense_bias_passthrough():
    x = tg.constant(np.zeros((4, 3)))
    w = tg.constant(np.zeros((3, 2)))
    b = tg.constant([0.5, -0.5])
    out = tg.dense(x, w, b).value
    np.testing.assert_array_equal(out, np.tile([0.5, -0.5], (4, 1)))


def test_dense_matches_triple_loop_matmul():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((5, 4))
    w = rng.standard_normal((4, 3))
    b = rng.standard_normal(3)
    # independent oracle: naive triple loop
    expect = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            acc = b[j]
            for k in range(4):
                acc += x[i, k] * w[k, j]
            expect[i, j] = acc
    got = tg.dense(tg.constant(x), tg.constant(w), tg.constant(b)).value
    assert np.max(np.abs(got - expect)) < 1e-12


def test_dense_preserves_leading_axes():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 3, 4, 5))
    w = rng.standard_normal((5, 2))
    b = rng.standard_normal(2)
    out = tg.dense(tg.constant(x), tg.constant(w), tg.constant(b))
    assert out.value.shape == (2, 3, 4, 2)


def test_dense_shape_mismatch_names_axis():
    x = tg.constant(np.zeros((2, 4)))
    w = tg.constant(np.zeros((3, 2)))
    b = tg.constant(np.zeros(2))
    with pytest.raises(DimensionError, match="last axis"):
        tg.dense(x, w, b)


# ------------------------------------------------------- separable conv

def _direct_separable_conv(x, k, pw, b):
    """Oracle: explicit loops, depthwise then pointwise, zero padding."""
    h, w, c_in = x.shape
    c_out = pw.shape[1]
    mid = np.zeros((h, w, c_in))
    for i in range(h):
        for j in range(w):
            for c in range(c_in):
                acc = 0.0
                for a in range(3):
                    for bb in range(3):
                        ii, jj = i + a - 1, j + bb - 1
                        if 0 <= ii < h and 0 <= jj < w:
                            acc += x[ii, jj, c] * k[a, bb, c]
                mid[i, j, c] = acc
    out = np.zeros((h, w, c_out))
    for i in range(h):
        for j in range(w):
            for o in range(c_out):
                acc = b[o]
                for c in range(c_in):
                    acc += mid[i, j, c] * pw[c, o]
                out[i, j, o] = acc
    return out


def test_separable_conv_constant_input_ones_kernel():
    x = tg.constant(np.ones((3, 3, 1)))
    k = tg.constant(np.ones((3, 3, 1)))
    pw = tg.constant(np.ones((1, 1)))
    b = tg.constant(np.zeros(1))
    out = tg.separable_conv2d(x, k, pw, b).value[:, :, 0]
    expect = np.array([[4.0, 6.0, 4.0], [6.0, 9.0, 6.0], [4.0, 6.0, 4.0]])
    np.testing.assert_array_equal(out, expect)


def test_separable_conv_zero_input_gives_bias():
    rng = np.random.default_rng(3)
    x = tg.constant(np.zeros((4, 5, 2)))
    k = tg.constant(rng.standard_normal((3, 3, 2)))
    pw = tg.constant(rng.standard_normal((2, 3)))
    b = tg.constant(np.array([1.0, -2.0, 0.25]))
    out = tg.separable_conv2d(x, k, pw, b).value
    np.testing.assert_array_equal(out, np.broadcast_to(b.value, (4, 5, 3)))


def test_separable_conv_matches_direct_oracle():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((5, 7, 3))
    k = rng.standard_normal((3, 3, 3))
    pw = rng.standard_normal((3, 2))
    b = rng.standard_normal(2)
    expect = _direct_separable_conv(x, k, pw, b)
    got = tg.separable_conv2d(tg.constant(x), tg.constant(k), tg.constant(pw),
                              tg.constant(b)).value
    assert np.max(np.abs(got - expect)) < 1e-12


def test_separable_conv_batched_matches_unbatched():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((4, 5, 7, 3))
    k = rng.standard_normal((3, 3, 3))
    pw = rng.standard_normal((3, 2))
    b = rng.standard_normal(2)
    batched = tg.separable_conv2d(tg.constant(x), tg.constant(k), tg.constant(pw),
                                  tg.constant(b)).value
    for n in range(4):
        single = tg.separable_conv2d(tg.constant(x[n]), tg.constant(k), tg.constant(pw),
                                     tg.constant(b)).value
        np.testing.assert_array_equal(batched[n], single)


def test_separable_conv_channel_mismatch():
    x = tg.constant(np.zeros((4, 4, 3)))
    k = tg.constant(np.zeros((3, 3, 2)))
    pw = tg.constant(np.zeros((2, 1)))
    b = tg.constant(np.zeros(1))
    with pytest.raises(DimensionError, match="channels"):
        tg.separable_conv2d(x, k, pw, b)


# ------------------------------------------------------------- backward

def test_bce_gradient_at_zero_logit():
    ps = tg.ParamSet()
    logit = ps.add("l", np.zeros(()))
    loss = tg.bce_with_logits(logit, np.ones(()))
    tg.backward(loss)
    assert abs(logit.grad - (-0.5)) < 1e-15


def test_relu_blocks_gradient_in_dead_region():
    ps = tg.ParamSet()
    x = ps.add("x", np.array([-1.0, 2.0]))
    y = tg.relu(x)
    loss = tg.bce_with_logits(y, np.ones(2))
    tg.backward(loss)
    assert x.grad[0] == 0.0
    assert x.grad[1] != 0.0


def test_backward_rejects_non_scalar():
    ps = tg.ParamSet()
    x = ps.add("x", np.ones(3))
    y = tg.relu(x)
    with pytest.raises(ContractError, match="scalar"):
        tg.backward(y)


def test_second_backward_raises():
    ps = tg.ParamSet()
    x = ps.add("x", np.ones(()))
    loss = tg.bce_with_logits(x, np.ones(()))
    tg.backward(loss)
    with pytest.raises(StateError):
        tg.backward(loss)


def test_gradient_accumulates_across_backwards():
    ps = tg.ParamSet()
    x = ps.add("x", np.zeros(()))
    tg.backward(tg.bce_with_logits(x, np.ones(())))
    g1 = float(x.grad)
    tg.backward(tg.bce_with_logits(x, np.ones(())))
    assert abs(float(x.grad) - 2 * g1) < 1e-15


def _finite_diff_check(build_loss, ps, tol=1e-4, step=1e-4):
    loss = build_loss()
    ps.zero_grad()
    tg.backward(loss)
    analytic = {name: p.grad.copy() for name, p in ps.items()}
    numeric = tg.finite_difference_gradients(lambda: float(build_loss().value), ps, step=step)
    err = tg.max_relative_error(analytic, numeric)
    assert err < tol, f"gradient mismatch: {err}"


def test_gradcheck_dense_layer():
    rng = np.random.default_rng(21)
    ps, t = _param_set(rng, [("w", (4, 3)), ("b", (3,)), ("x", (5, 4))])
    labels = rng.integers(0, 2, size=(5, 3)).astype(float)

    def build():
        return tg.bce_with_logits(tg.dense(t["x"], t["w"], t["b"]), labels)

    _finite_diff_check(build, ps)


def test_gradcheck_separable_conv():
    rng = np.random.default_rng(22)
    ps, t = _param_set(rng, [("k", (3, 3, 2)), ("pw", (2, 3)), ("b", (3,)),
                             ("x", (4, 5, 2))])
    labels = rng.integers(0, 2, size=(4, 5, 3)).astype(float)

    def build():
        return tg.bce_with_logits(
            tg.separable_conv2d(t["x"], t["k"], t["pw"], t["b"]), labels)

    _finite_diff_check(build, ps)


def test_gradcheck_relu_sigmoid_concat_mean_chain():
    rng = np.random.default_rng(23)
    ps, t = _param_set(rng, [("a", (2, 3, 4)), ("b", (2, 3, 4))])
    labels = rng.integers(0, 2, size=(2, 3, 8)).astype(float)

    def build():
        agg = tg.mean_over_others(tg.concat([t["a"], t["b"]], axis=-1), axis=0)
        mixed = tg.add(tg.relu(agg), tg.scale(tg.sigmoid(agg), 0.5))
        return tg.bce_with_logits(tg.reshape(mixed, (2, 3, 8)), labels)

    _finite_diff_check(build, ps)


def test_mean_over_others_values():
    rng = np.random.default_rng(24)
    x = rng.standard_normal((3, 2, 2))
    out = tg.mean_over_others(tg.constant(x), axis=0).value
    np.testing.assert_allclose(out[0], (x[1] + x[2]) / 2, atol=1e-15)
    # two entries: the aggregate for each is exactly the other one
    pair = tg.mean_over_others(tg.constant(x[:2]), axis=0).value
    np.testing.assert_allclose(pair[0], x[1], atol=1e-15)
    np.testing.assert_allclose(pair[1], x[0], atol=1e-15)
    single = tg.mean_over_others(tg.constant(x[:1]), axis=0).value
    np.testing.assert_array_equal(single, np.zeros_like(single))


def test_mean_over_others_single_entry_still_populates_grads():
    ps = tg.ParamSet()
    x = ps.add("x", np.ones((1, 4)))
    loss = tg.bce_with_logits(tg.mean_over_others(x, axis=0), np.ones((1, 4)))
    tg.backward(loss)
    assert x.grad is not None
    np.testing.assert_array_equal(x.grad, np.zeros((1, 4)))


def test_nan_gradient_is_hard_error():
    ps = tg.ParamSet()
    x = ps.add("x", np.array(0.0))
    loss = tg.scale(x, float("nan"))
    loss_node = tg.bce_with_logits(loss, np.ones(()))
    with pytest.raises(NumericalError):
        tg.backward(loss_node)


def test_forward_determinism_bit_identical():
    rng = np.random.default_rng(25)
    x = rng.standard_normal((6, 7, 3))
    k = rng.standard_normal((3, 3, 3))
    pw = rng.standard_normal((3, 4))
    b = rng.standard_normal(4)

    def run():
        h = tg.separable_conv2d(tg.constant(x), tg.constant(k), tg.constant(pw),
                                tg.constant(b))
        return tg.dense(tg.relu(h), tg.constant(pw.T), tg.constant(np.zeros(3))).value

    a, bb = run(), run()
    assert np.array_equal(a, bb)


# ----------------------------------------------------------------- adam

def test_adam_zero_gradient_leaves_params_unchanged():
    ps = tg.ParamSet()
    p = ps.add("p", np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    tg.Adam(ps, lr=1e-3).step()
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    ps = tg.ParamSet()
    p = ps.add("p", np.zeros(3))
    p.grad = np.array([2.0, -0.5, 1e3])
    tg.Adam(ps, lr=1e-3).step()
    np.testing.assert_allclose(p.value, [-1e-3, 1e-3, -1e-3], rtol=1e-6)


def test_adam_two_steps_match_scalar_oracle():
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    # hand-rolled scalar Adam, g = 1 twice
    theta, m, v = 0.3, 0.0, 0.0
    for t in (1, 2):
        g = 1.0
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        theta -= lr * mh / (np.sqrt(vh) + eps)

    ps = tg.ParamSet()
    p = ps.add("p", np.array(0.3))
    opt = tg.Adam(ps, lr=lr, beta1=b1, beta2=b2, eps=eps)
    for _ in range(2):
        p.grad = np.array(1.0)
        opt.step()
    assert abs(float(p.value) - theta) < 1e-12


def test_adam_missing_gradient_names_parameter():
    ps = tg.ParamSet()
    ps.add("first", np.zeros(2))
    ps.add("second", np.zeros(2))
    ps["first"].grad = np.zeros(2)
    with pytest.raises(StateError, match="second"):
        tg.Adam(ps).step()


def test_adam_zeroes_gradients_after_step():
    ps = tg.ParamSet()
    p = ps.add("p", np.zeros(2))
    p.grad = np.ones(2)
    tg.Adam(ps).step()
    assert p.grad is None


# ------------------------------------------------------------ container

def test_container_round_trip_with_metadata(tmp_path):
    rng = np.random.default_rng(31)
    tensors = {
        "alpha": rng.standard_normal((3, 4)),
        "beta/gamma": rng.standard_normal(7).astype(np.float32),
    }
    path = tmp_path / "weights.nt"
    tg.save_tensors(path, tensors, metadata={"kind": "test", "n": 3})
    loaded, meta = tg.load_tensors(path)
    assert meta == {"kind": "test", "n": 3}
    assert set(loaded) == set(tensors)
    np.testing.assert_array_equal(loaded["alpha"], tensors["alpha"])
    np.testing.assert_array_equal(loaded["beta/gamma"], tensors["beta/gamma"])
    assert loaded["beta/gamma"].dtype == np.float32


def test_container_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.nt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        tg.load_tensors(path)


def test_container_rejects_truncation(tmp_path):
    path = tmp_path / "trunc.nt"
    tg.save_tensors(path, {"x": np.ones(10)})
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        tg.load_tensors(path)


def test_paramset_load_rejects_unknown_names():
    ps = tg.ParamSet()
    ps.add("a", np.zeros(2))
    with pytest.raises(CheckpointError):
        ps.load_state_dict({"a": np.zeros(2), "zz": np.zeros(1)})


def test_paramset_duplicate_name_rejected():
    ps = tg.ParamSet()
    ps.add("a", np.zeros(2))
    with pytest.raises(Exception):
        ps.add("a", np.zeros(2))


def test_paramset_state_dict_round_trip():
    rng = np.random.default_rng(33)
    ps = tg.ParamSet()
    ps.add("w", rng.standard_normal((2, 3)))
    ps.add("b", rng.standard_normal(3))
    snap = ps.state_dict()
    ps["w"].value += 1.0
    ps.load_state_dict(snap)
    np.testing.assert_array_equal(ps["w"].value, snap["w"])
