"""Tests for channel generation, channel application, and AWGN."""

import numpy as np
import pytest

from slotrx import channel, grid
from slotrx.errors import ConfigError, ContractError, DimensionError, ModelValidationError


def cfg(n_f=12, n_t=1, n_rx=1, n_s=14):
    return grid.SlotConfig(n_f=n_f, n_t=n_t, n_rx=n_rx, bits_per_symbol=4, n_s=n_s)


def test_flat_channel_constant_over_slot():
    h = channel.sample_channel(channel.flat_rayleigh(), cfg(n_rx=2), seed=0)
    assert np.all(h == h[:1, :1])


def test_tdl_zero_doppler_static_in_time():
    model = channel.tdl("tdl-b", delay_spread_s=100e-9, doppler_hz=0.0)
    h = channel.sample_channel(model, cfg(), seed=1)
    assert np.allclose(h, h[:, :1], atol=1e-12)


def test_single_tap_flat_in_frequency():
    model = channel.ChannelModel(kind="tdl", delays=np.array([0.0]),
                                 powers=np.array([1.0]), delay_spread_s=100e-9,
                                 doppler_hz=200.0)
    h = channel.sample_channel(model, cfg(), seed=2)
    assert np.allclose(h, h[:1, :], atol=1e-12)


@pytest.mark.slow
def test_mean_coefficient_power_within_one_percent():
    c = cfg(n_f=12, n_s=2)
    for model in (channel.flat_rayleigh(),
                  channel.tdl("tdl-b", delay_spread_s=100e-9, doppler_hz=400.0)):
        h = channel.sample_channels(model, c, 100_000, seed=7)
        power = np.mean(np.abs(h) ** 2)
        assert abs(power - 1.0) < 0.01, (model.kind, power)


def test_seeded_reproducibility():
    model = channel.tdl("tdl-c", delay_spread_s=300e-9, doppler_hz=100.0)
    a = channel.sample_channel(model, cfg(n_rx=2), seed=11)
    b = channel.sample_channel(model, cfg(n_rx=2), seed=11)
    np.testing.assert_array_equal(a, b)


def test_model_validation_errors():
    with pytest.raises(ModelValidationError):
        channel.ChannelModel(kind="tdl", delays=np.array([0.0, 0.0]),
                             powers=np.array([0.5, 0.5]), delay_spread_s=1e-7)
    with pytest.raises(ModelValidationError):
        channel.ChannelModel(kind="tdl", delays=np.array([0.0, 1.0]),
                             powers=np.array([0.9, 0.9]), delay_spread_s=1e-7)
    with pytest.raises(ModelValidationError):
        channel.ChannelModel(kind="flat", doppler_hz=-1.0)


def test_profile_loader_normalizes():
    delays, powers = channel.load_tdl_profile("tdl-b")
    assert abs(powers.sum() - 1.0) < 1e-12
    mean = powers @ delays
    rms = np.sqrt(powers @ delays ** 2 - mean ** 2)
    assert abs(rms - 1.0) < 1e-9
    assert np.all(np.diff(delays) > 0)


def test_apply_channel_zero_input():
    c = cfg(n_t=2, n_rx=3)
    h = channel.sample_channel(channel.flat_rayleigh(), c, seed=0)
    y = channel.apply_channel(h, np.zeros((2, c.n_f, c.n_s), dtype=complex))
    np.testing.assert_array_equal(y, 0)


def test_apply_channel_single_layer_scalar_product():
    c = cfg(n_t=1, n_rx=2)
    rng = np.random.default_rng(3)
    h = channel.sample_channel(channel.flat_rayleigh(), c, seed=3)
    x = rng.standard_normal((1, c.n_f, c.n_s)) + 1j * rng.standard_normal((1, c.n_f, c.n_s))
    y = channel.apply_channel(h, x)
    np.testing.assert_allclose(y, h[:, :, :, 0] * x[0][:, :, None], atol=1e-14)


def test_apply_channel_superposition():
    c = cfg(n_t=2, n_rx=3)
    rng = np.random.default_rng(4)
    h = channel.sample_channel(channel.flat_rayleigh(), c, seed=4)
    x = rng.standard_normal((2, c.n_f, c.n_s)) + 1j * rng.standard_normal((2, c.n_f, c.n_s))
    x1 = x.copy()
    x1[1] = 0
    x2 = x.copy()
    x2[0] = 0
    lhs = channel.apply_channel(h, x1) + channel.apply_channel(h, x2)
    rhs = channel.apply_channel(h, x)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_apply_channel_shape_mismatch():
    c = cfg(n_t=2, n_rx=3)
    h = channel.sample_channel(channel.flat_rayleigh(), c, seed=4)
    with pytest.raises(DimensionError):
        channel.apply_channel(h, np.zeros((3, c.n_f, c.n_s), dtype=complex))


def test_awgn_zero_variance_is_identity():
    y = np.ones((4, 5), dtype=complex)
    out = channel.add_awgn(y, channel.NoiseConfig(0.0), rng=0)
    np.testing.assert_array_equal(out, y)


def test_awgn_empirical_variance():
    sigma2 = 0.37
    noise = channel.add_awgn(np.zeros((1000, 1000), dtype=complex),
                             channel.NoiseConfig(sigma2), rng=5)
    measured = np.mean(np.abs(noise) ** 2)
    assert abs(measured - sigma2) / sigma2 < 0.01


def test_n0_plane_value():
    plane = channel.NoiseConfig(0.1).n0_plane(6, 4)
    np.testing.assert_allclose(plane, -10.0, atol=1e-12)
    assert plane.shape == (6, 4)
    with pytest.raises(ContractError):
        channel.NoiseConfig(0.0).n0_plane(6, 4)
    with pytest.raises(ConfigError):
        channel.NoiseConfig(-0.1)


def test_snr_conversion():
    assert abs(channel.snr_db_to_sigma2(10.0) - 0.1) < 1e-15


def _freq_correlation(model, lag, n):
    c = cfg(n_f=12, n_s=1)
    h = channel.sample_channels(model, c, n, seed=99)[:, :, 0, 0, 0]
    num = np.mean(h[:, :-lag] * np.conj(h[:, lag:]))
    den = np.mean(np.abs(h) ** 2)
    return abs(num) / den


def _time_correlation(model, n):
    c = cfg(n_f=12, n_s=2)
    h = channel.sample_channels(model, c, n, seed=98)[:, :, :, 0, 0]
    num = np.mean(h[:, :, 0] * np.conj(h[:, :, 1]))
    den = np.mean(np.abs(h) ** 2)
    return abs(num) / den


@pytest.mark.slow
def test_frequency_correlation_decreases_with_delay_spread():
    corr = [
        _freq_correlation(channel.tdl("tdl-b", ds, 0.0), lag=6, n=10_000)
        for ds in (30e-9, 100e-9, 300e-9)
    ]
    assert corr[0] > corr[1] > corr[2], corr


@pytest.mark.slow
def test_time_correlation_decreases_with_doppler():
    corr = [
        _time_correlation(channel.tdl("tdl-b", 100e-9, fd), n=10_000)
        for fd in (0.0, 400.0, 1200.0)
    ]
    assert corr[0] > corr[1] > corr[2], corr
