"""Tests for the neural receiver: shapes, symmetries, gradients, checkpoints."""

import numpy as np
import pytest

from slotrx import channel, grid, neural
from slotrx import tensorgrad as tg
from slotrx.errors import CheckpointError, ContractError, DimensionError


def tiny_hyper(n_rx=2, **kw):
    args = dict(d_s=8, d_m=8, n_it=2, msg_hidden=8, readout_hidden=8,
                conv_init_width=8, conv_state_width=8, n_rx=n_rx, bits_per_symbol=4)
    args.update(kw)
    return neural.Hyperparams(**args)


def make_inputs(n_f=12, n_t=2, n_rx=2, seed=0, n_s=14, ports=None):
    c = grid.SlotConfig(n_f=n_f, n_t=n_t, n_rx=n_rx, bits_per_symbol=4, n_s=n_s)
    pattern = grid.build_pilot_pattern(c, seed=seed, ports=ports)
    rng = np.random.default_rng(seed)
    bits = grid.sample_bits(c, pattern, rng)
    x = grid.assemble_slot(bits, pattern, c)
    h = channel.sample_channel(channel.flat_rayleigh(), c, seed=seed + 1)
    sigma2 = 0.05
    y = channel.add_awgn(channel.apply_channel(h, x), channel.NoiseConfig(sigma2),
                         rng)
    return c, pattern, bits, y, sigma2


def test_input_feature_count_for_four_antennas():
    assert neural.Hyperparams(n_rx=4).n_input_planes == 19
    assert tiny_hyper(n_rx=2).n_input_planes == 11


def test_forward_output_shape_and_finiteness():
    c, pattern, _, y, sigma2 = make_inputs()
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=1)
    llr = rx.forward(y, sigma2, pattern)
    assert llr.shape == (2, 12, 14, 4)
    assert np.all(np.isfinite(llr))


def test_all_zero_weights_give_bias_valued_output():
    c, pattern, _, y, sigma2 = make_inputs()
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=1)
    for _, p in rx.params.items():
        p.value[...] = 0.0
    rx.params["readout.l1.b"].value[...] = np.array([0.5, -0.25, 1.0, 0.0])
    llr = rx.forward(y, sigma2, pattern)
    np.testing.assert_array_equal(llr, np.broadcast_to([0.5, -0.25, 1.0, 0.0], llr.shape))


def test_forward_handles_single_layer():
    c, pattern, _, y, sigma2 = make_inputs(n_t=1)
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=2)
    llr = rx.forward(y, sigma2, pattern)
    assert llr.shape == (1, 12, 14, 4)
    assert np.all(np.isfinite(llr))


def test_same_weights_for_one_to_four_layers():
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=3)
    count = rx.n_params()
    for n_t in (1, 2, 3, 4):
        c, pattern, _, y, sigma2 = make_inputs(n_t=n_t)
        llr = rx.forward(y, sigma2, pattern)
        assert llr.shape[0] == n_t
        assert np.all(np.isfinite(llr))
        assert rx.n_params() == count


def test_weights_transfer_across_subcarrier_counts():
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=4)
    for n_f in (48, 96):
        c, pattern, _, y, sigma2 = make_inputs(n_f=n_f)
        llr = rx.forward(y, sigma2, pattern)
        assert llr.shape == (2, n_f, 14, 4)
        assert np.all(np.isfinite(llr))


def test_parameter_count_matches_hand_formula():
    h = tiny_hyper()
    rx = neural.NeuralReceiver.build(h, seed=5)

    def conv(c_in, c_out):
        return 9 * c_in + c_in * c_out + c_out

    def mlp(d_in, hidden, d_out):
        return d_in * hidden + hidden + hidden * d_out + d_out

    expect = (conv(h.n_input_planes, 8) + conv(8, 8) + conv(8, h.d_s)
              + h.n_it * (mlp(h.d_s, 8, h.d_m)
                          + conv(h.d_m + 2 + h.d_s, 8) + conv(8, 8) + conv(8, h.d_s))
              + mlp(h.d_s, 8, 4))
    assert rx.n_params() == expect


def test_iteration_parameter_groups_are_distinct():
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=6)
    names = rx.params.names()
    assert any(n.startswith("it0.") for n in names)
    assert any(n.startswith("it1.") for n in names)
    assert rx.params["it0.msg.l0.w"] is not rx.params["it1.msg.l0.w"]


def test_zero_state_convs_make_update_a_pure_skip():
    c, pattern, _, y, sigma2 = make_inputs()
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=7)
    for name, p in rx.params.items():
        if ".state." in name:
            p.value[...] = 0.0
    llrs = rx.forward(y, sigma2, pattern, train=True)
    assert len(llrs) == 2
    np.testing.assert_array_equal(llrs[0].value, llrs[1].value)


def test_reduced_iteration_inference():
    c, pattern, _, y, sigma2 = make_inputs()
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=8)
    full = rx.forward(y, sigma2, pattern)
    shallow = rx.forward(y, sigma2, pattern, n_it=1)
    assert full.shape == shallow.shape
    assert np.all(np.isfinite(shallow))
    assert not np.array_equal(full, shallow)
    with pytest.raises(ContractError):
        rx.forward(y, sigma2, pattern, n_it=3)


def test_layer_permutation_equivariance():
    c, pattern, _, y, sigma2 = make_inputs(n_t=3)
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=9)
    perm = [2, 0, 1]
    permuted = grid.PilotPattern(
        n_f=pattern.n_f, n_s=pattern.n_s,
        positions=[pattern.positions[i] for i in perm],
        values=[pattern.values[i] for i in perm],
        ports=tuple(pattern.ports[i] for i in perm))
    out = rx.forward(y, sigma2, pattern)
    out_perm = rx.forward(y, sigma2, permuted)
    assert np.max(np.abs(out_perm - out[perm])) < 1e-6


def test_subcarrier_translation_locality():
    # pilots on every subcarrier make the pattern invariant under a shift,
    # so shifting the received grid must shift the output (away from borders)
    n_f, n_s, n_rx = 48, 14, 2
    pos = np.array([[f, s] for s in (2, 11) for f in range(n_f)])
    pattern = grid.PilotPattern(n_f=n_f, n_s=n_s, positions=[pos],
                                values=[np.ones(len(pos), dtype=complex)], ports=(0,))
    rng = np.random.default_rng(10)
    y = rng.standard_normal((n_f, n_s, n_rx)) + 1j * rng.standard_normal((n_f, n_s, n_rx))
    shift = 4
    y_shift = np.roll(y, shift, axis=0)
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=11)
    out = rx.forward(y, 0.1, pattern)
    out_shift = rx.forward(y_shift, 0.1, pattern)
    reach = 9  # 3 init convs + 2 iterations x 3 convs, radius 1 each
    lo, hi = reach, n_f - reach - shift
    assert hi - lo > 2
    assert np.max(np.abs(out_shift[:, lo + shift:hi + shift] - out[:, lo:hi])) < 1e-6


def test_gradient_reaches_every_parameter_group():
    c, pattern, bits, y, sigma2 = make_inputs(n_t=2)
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=12)
    llrs = rx.forward(y[None], np.array([sigma2]), pattern, train=True)
    mask = pattern.data_mask()[None, None, :, :, None].astype(float)
    labels = bits[None].astype(float)
    loss = tg.scale(
        tg.add(tg.bce_with_logits(llrs[0], labels, mask),
               tg.bce_with_logits(llrs[1], labels, mask)), 0.5)
    tg.backward(loss)
    for name, p in rx.params.items():
        assert p.grad is not None, name
        assert np.any(p.grad != 0), f"all-zero gradient for {name}"


def test_full_receiver_gradcheck_8x14():
    # 8x14 grid with a hand-built pilot pattern (the receiver itself has no
    # whole-PRB requirement); finite differences vs autodiff in double
    n_f, n_s, n_rx, n_t = 8, 14, 2, 2
    pos = [np.array([[f, s] for s in (2, 11) for f in range(off, n_f, 2)])
           for off in (0, 1)]
    rng = np.random.default_rng(13)
    vals = [np.exp(2j * np.pi * rng.random(len(p))) for p in pos]
    pattern = grid.PilotPattern(n_f=n_f, n_s=n_s, positions=pos, values=vals,
                                ports=(0, 2))
    y = rng.standard_normal((n_f, n_s, n_rx)) + 1j * rng.standard_normal((n_f, n_s, n_rx))
    labels = rng.integers(0, 2, size=(1, n_t, n_f, n_s, 4)).astype(float)
    mask = pattern.data_mask()[None, None, :, :, None].astype(float)
    hyper = tiny_hyper(d_s=4, d_m=4, msg_hidden=4, readout_hidden=4,
                       conv_init_width=4, conv_state_width=4)
    # zero biases put many pre-activations exactly on the ReLU kink where the
    # finite-difference oracle is invalid; randomized biases and a pinned seed
    # keep the evaluation point generic (no unit within the FD window)
    rx = neural.NeuralReceiver.build(hyper, seed=21)
    bias_rng = np.random.default_rng(121)
    for name, p in rx.params.items():
        if name.endswith(".b"):
            p.value[...] = bias_rng.uniform(-0.3, 0.3, size=p.value.shape)

    def build_loss():
        llrs = rx.forward(y[None], np.array([0.1]), pattern, train=True)
        total = llrs[0]
        loss = tg.bce_with_logits(llrs[0], labels, mask)
        for extra in llrs[1:]:
            loss = tg.add(loss, tg.bce_with_logits(extra, labels, mask))
        return tg.scale(loss, 1.0 / len(llrs))

    loss = build_loss()
    rx.params.zero_grad()
    tg.backward(loss)
    analytic = {name: p.grad.copy() for name, p in rx.params.items()}
    numeric = tg.finite_difference_gradients(
        lambda: float(build_loss().value), rx.params, step=1e-4)
    err = tg.max_relative_error(analytic, numeric)
    assert err < 1e-4, err


def test_checkpoint_round_trip_bit_identical(tmp_path):
    c, pattern, _, y, sigma2 = make_inputs()
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=15)
    before = rx.forward(y, sigma2, pattern)
    path = tmp_path / "model.ckpt"
    neural.save_checkpoint(path, rx)
    loaded, meta = neural.load_checkpoint(path)
    assert meta["hyper"]["d_s"] == 8
    after = loaded.forward(y, sigma2, pattern)
    np.testing.assert_array_equal(before, after)


def test_checkpoint_rejects_tampered_magic(tmp_path):
    rx = neural.NeuralReceiver.build(tiny_hyper(), seed=16)
    path = tmp_path / "model.ckpt"
    neural.save_checkpoint(path, rx)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        neural.load_checkpoint(path)


def test_paper_scale_preset_uses_published_conv_widths():
    h = neural.Hyperparams.paper_scale(n_rx=4)
    assert (h.conv_init_width, h.conv_state_width) == (128, 256)
    rx = neural.NeuralReceiver.build(h, seed=18)
    assert rx.n_params() > 100_000


def test_forward_rejects_wrong_antenna_count():
    c, pattern, _, y, sigma2 = make_inputs(n_rx=2)
    rx = neural.NeuralReceiver.build(tiny_hyper(n_rx=4), seed=17)
    with pytest.raises(DimensionError):
        rx.forward(y, sigma2, pattern)
