"""Frequency-domain MIMO channel generation and AWGN.

Two model kinds:

* ``flat``: one i.i.d. CN(0,1) matrix per (RX, TX) pair, constant over the
  whole slot (block fading).
* ``tdl``: tapped-delay-line profiles (TDL-B / TDL-C tables ship as data
  files). Each tap is a complex Gaussian process with Jakes-type time
  correlation approximated by a 32-term sum of sinusoids; the frequency
  response is h(f) = sum_k a_k(t) * exp(-j 2 pi f tau_k) evaluated at the
  subcarrier frequencies.

All coefficients have unit average power. Antenna pairs and layers fade
independently (no spatial correlation).
"""

import importlib.resources
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, ModelValidationError

N_SINUSOIDS = 32


@dataclass(frozen=True)
class ChannelModel:
    kind: str
    delays: np.ndarray | None = None       # normalized to unit RMS delay spread
    powers: np.ndarray | None = None       # linear, sums to 1
    delay_spread_s: float = 100e-9
    doppler_hz: float = 0.0
    subcarrier_spacing_hz: float = 30e3
    symbol_duration_s: float | None = None

    def __post_init__(self):
        if self.kind not in ("flat", "tdl"):
            raise ModelValidationError(f"unknown channel kind {self.kind!r}")
        if self.doppler_hz < 0:
            raise ModelValidationError(f"doppler must be >= 0, got {self.doppler_hz}")
        if self.kind == "tdl":
            if self.delays is None or self.powers is None:
                raise ModelValidationError("tdl model needs delays and powers")
            d = np.asarray(self.delays, dtype=float)
            p = np.asarray(self.powers, dtype=float)
            if d.shape != p.shape or d.ndim != 1 or d.size == 0:
                raise ModelValidationError("delays and powers must be equal-length vectors")
            if d.size > 1 and np.any(np.diff(d) <= 0):
                raise ModelValidationError("tap delays must be strictly increasing")
            if abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0):
                raise ModelValidationError("tap powers must be non-negative and sum to 1")
            if self.delay_spread_s <= 0:
                raise ModelValidationError(
                    f"delay spread must be > 0, got {self.delay_spread_s}")

    @property
    def t_symbol(self):
        return self.symbol_duration_s or 1.0 / self.subcarrier_spacing_hz


def flat_rayleigh():
    return ChannelModel(kind="flat")


def load_tdl_profile(name_or_path):
    """Read a (delay_ns, power_db) table and normalize it.

    Taps are sorted by delay; powers are scaled to unit total power and
    delays to unit RMS delay spread, so any reference scale used in the file
    cancels out.
    """
    name = str(name_or_path).lower()
    if name in ("tdl-b", "tdl_b", "b"):
        text = importlib.resources.files("slotrx.data").joinpath("tdl_b.txt").read_text()
    elif name in ("tdl-c", "tdl_c", "c"):
        text = importlib.resources.files("slotrx.data").joinpath("tdl_c.txt").read_text()
    else:
        with open(name_or_path) as f:
            text = f.read()
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"bad TDL profile row {line!r} (expected: delay_ns power_db)")
        rows.append((float(parts[0]), float(parts[1])))
    if not rows:
        raise ConfigError(f"TDL profile {name_or_path!r} holds no taps")
    delays_ns = np.array([r[0] for r in rows])
    powers = 10.0 ** (np.array([r[1] for r in rows]) / 10.0)
    order = np.argsort(delays_ns, kind="stable")
    delays_ns, powers = delays_ns[order], powers[order]
    powers = powers / powers.sum()
    mean = float(powers @ delays_ns)
    rms = float(np.sqrt(powers @ delays_ns ** 2 - mean ** 2))
    if rms <= 0:
        raise ConfigError(f"TDL profile {name_or_path!r} has zero delay spread")
    return delays_ns / rms, powers


def tdl(profile, delay_spread_s, doppler_hz, subcarrier_spacing_hz=30e3,
        symbol_duration_s=None):
    delays, powers = load_tdl_profile(profile)
    return ChannelModel(kind="tdl", delays=delays, powers=powers,
                        delay_spread_s=delay_spread_s, doppler_hz=doppler_hz,
                        subcarrier_spacing_hz=subcarrier_spacing_hz,
                        symbol_duration_s=symbol_duration_s)


def sample_channels(model, cfg, n, seed, chunk=2048):
    """n independent realizations H[n, n_f, n_s, n_rx, n_tx] for one slot each."""
    rng = np.random.default_rng(seed)
    out = np.empty((n, cfg.n_f, cfg.n_s, cfg.n_rx, cfg.n_tx), dtype=complex)
    if model.kind == "flat":
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            g = rng.standard_normal((hi - lo, cfg.n_rx, cfg.n_tx, 2)) / np.sqrt(2.0)
            out[lo:hi] = (g[..., 0] + 1j * g[..., 1])[:, None, None, :, :]
        return out

    taps = model.delays * model.delay_spread_s
    freqs = np.arange(cfg.n_f) * model.subcarrier_spacing_hz
    phase = np.exp(-2j * np.pi * np.outer(freqs, taps))          # [n_f, taps]
    times = np.arange(cfg.n_s) * model.t_symbol
    amp = np.sqrt(model.powers / N_SINUSOIDS)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        shape = (hi - lo, len(taps), cfg.n_rx, cfg.n_tx, N_SINUSOIDS)
        alpha = rng.uniform(0.0, 2.0 * np.pi, size=shape)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=shape)
        # a[b, k, r, t, s] = amp_k * sum_n exp(j(2 pi f_d cos(alpha) t_s + phi))
        omega = 2.0 * np.pi * model.doppler_hz * np.cos(alpha)
        theta = omega[..., None] * times + phi[..., None]
        a = amp[None, :, None, None, None] * np.exp(1j * theta).sum(axis=4)
        out[lo:hi] = np.einsum("fk,bkrts->bfsrt", phase, a)
    return out


def sample_channel(model, cfg, seed):
    """One realization H[n_f, n_s, n_rx, n_tx]."""
    return sample_channels(model, cfg, 1, seed)[0]


def apply_channel(h, x):
    """Noiseless received grid y = H x per RE.

    h: [n_f, n_s, n_rx, n_tx] (or with a leading batch axis),
    x: [n_tx, n_f, n_s] per-layer grids (or with a leading batch axis).
    """
    h = np.asarray(h)
    x = np.asarray(x)
    if h.ndim == 4 and x.ndim == 3:
        if x.shape != (h.shape[3], h.shape[0], h.shape[1]):
            raise DimensionError(
                f"grids {x.shape} do not match channel {h.shape} (want "
                f"[{h.shape[3]}, {h.shape[0]}, {h.shape[1]}])")
        return np.einsum("fsrt,tfs->fsr", h, x)
    if h.ndim == 5 and x.ndim == 4:
        if x.shape != (h.shape[0], h.shape[4], h.shape[1], h.shape[2]):
            raise DimensionError(
                f"batched grids {x.shape} do not match channel {h.shape}")
        return np.einsum("bfsrt,btfs->bfsr", h, x)
    raise DimensionError(f"unsupported ranks: channel {h.shape}, grids {x.shape}")


@dataclass(frozen=True)
class NoiseConfig:
    """Total complex noise variance per RE per receive antenna."""

    sigma2: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ConfigError(f"sigma2 must be >= 0, got {self.sigma2}")

    @property
    def n0_db(self):
        if self.sigma2 <= 0:
            raise ContractError("N0 in dB is undefined for sigma2 = 0")
        return 10.0 * np.log10(self.sigma2)

    def n0_plane(self, n_f, n_s):
        """The dB-valued noise-power feature plane, constant over the grid."""
        return np.full((n_f, n_s), self.n0_db)


def snr_db_to_sigma2(snr_db):
    """Per-layer Es/N0 in dB -> total complex noise variance (unit Es)."""
    return 10.0 ** (-np.asarray(snr_db, dtype=float) / 10.0)


def add_awgn(y, noise, rng):
    """Add circular complex white Gaussian noise of total variance sigma2."""
    rng = np.random.default_rng(rng)
    sigma2 = noise.sigma2 if isinstance(noise, NoiseConfig) else float(noise)
    if sigma2 == 0:
        return np.array(y, copy=True)
    y = np.asarray(y)
    w = rng.standard_normal(y.shape + (2,))
    return y + np.sqrt(sigma2 / 2.0) * (w[..., 0] + 1j * w[..., 1])
