"""Resource-grid construction for one slot.

Covers slot dimensioning, Gray-QAM mapping, DMRS-like pilot patterns with
comb/cover multiplexing, the per-layer nearest-pilot positional encoding, and
assembly of the per-layer transmit grids.

Grid conventions: arrays are indexed [subcarrier, symbol] (frequency first),
both 0-based. Pilot symbols carry no data for any layer; every other symbol
is data.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

PILOT_SYMBOLS = (2, 11)
MAX_PORTS = 4
PILOT_SCHEME_ID = "dmrs-sym2+11-comb2-cover2"


@dataclass(frozen=True)
class SlotConfig:
    """Dimensions and modulation of one simulated slot."""

    n_f: int
    n_t: int
    n_rx: int
    bits_per_symbol: int
    n_s: int = 14

    def __post_init__(self):
        if self.n_f < 12 or self.n_f % 12 != 0:
            raise ConfigError(f"n_f must be a positive multiple of 12, got {self.n_f}")
        if self.n_t < 1:
            raise ConfigError(f"n_t must be >= 1, got {self.n_t}")
        if self.n_rx < 1:
            raise ConfigError(f"n_rx must be >= 1, got {self.n_rx}")
        if self.bits_per_symbol not in (2, 4):
            raise ConfigError(
                f"bits_per_symbol must be 2 (QPSK) or 4 (16-QAM), got {self.bits_per_symbol}")
        if self.n_s < 1:
            raise ConfigError(f"n_s must be >= 1, got {self.n_s}")

    @property
    def n_tx(self):
        # one transmit antenna per layer
        return self.n_t


# ----------------------------------------------------------------- QAM

def constellation(bits_per_symbol):
    """Gray-labelled unit-energy constellation -> (points[2^m], labels[2^m, m]).

    Even bit positions select the in-phase axis, odd positions the quadrature
    axis; on each axis the Gray rule maps (sign bit, magnitude bit) so that
    all-zero bits land on the most positive level.
    """
    m = bits_per_symbol
    if m not in (2, 4):
        raise ConfigError(f"unsupported bits_per_symbol {m}")
    n = 1 << m
    labels = ((np.arange(n)[:, None] >> (m - 1 - np.arange(m))) & 1).astype(np.uint8)
    points = _pam(labels[:, 0::2]) + 1j * _pam(labels[:, 1::2])
    return points, labels


def _pam(bits):
    """Gray PAM levels for the bits of one axis; unit energy jointly with the
    other axis."""
    half = bits.shape[-1]
    sign = 1.0 - 2.0 * bits[..., 0]
    if half == 1:
        level = sign
    else:
        level = sign * (1.0 + 2.0 * bits[..., 1])
    norm = np.sqrt(2.0 * (4.0 ** half - 1.0) / 3.0)
    return level / norm


def map_bits_to_symbols(bits, bits_per_symbol):
    """Map {0,1} bit vectors along the last axis to unit-energy QAM symbols."""
    bits = np.asarray(bits)
    if bits.shape[-1] != bits_per_symbol:
        raise DimensionError(
            f"last axis holds {bits.shape[-1]} bits, expected {bits_per_symbol}")
    return _pam(bits[..., 0::2]) + 1j * _pam(bits[..., 1::2])


def demap_nearest(symbols, bits_per_symbol):
    """Nearest-neighbour hard demapping back to bit vectors."""
    points, labels = constellation(bits_per_symbol)
    symbols = np.asarray(symbols)
    idx = np.argmin(np.abs(symbols[..., None] - points) ** 2, axis=-1)
    return labels[idx]


# -------------------------------------------------------- pilot pattern

@dataclass
class PilotPattern:
    """Per-layer pilot RE positions and values for one slot.

    ``positions[l]`` is an int array [P, 2] of (subcarrier, symbol) pairs in
    symbol-major order; ``values[l]`` the unit-magnitude pilots transmitted
    there. Layers on the same comb (CDM group) share positions and are
    separated by length-2 cover codes over adjacent comb subcarriers.
    """

    n_f: int
    n_s: int
    positions: list = field(repr=False)
    values: list = field(repr=False)
    ports: tuple = ()

    @property
    def n_layers(self):
        return len(self.positions)

    def comb_offset(self, layer):
        return self.ports[layer] // 2

    def cover(self, layer):
        """Length-2 cover over each adjacent pilot-subcarrier pair."""
        return np.array([1.0, 1.0]) if self.ports[layer] % 2 == 0 else np.array([1.0, -1.0])

    def mask(self, layer):
        out = np.zeros((self.n_f, self.n_s), dtype=bool)
        p = self.positions[layer]
        out[p[:, 0], p[:, 1]] = True
        return out

    def data_mask(self):
        """True on REs that carry data (every RE outside the pilot symbols)."""
        out = np.ones((self.n_f, self.n_s), dtype=bool)
        symbols = np.unique(np.concatenate([p[:, 1] for p in self.positions]))
        out[:, symbols] = False
        return out

    def value_grid(self, layer):
        out = np.zeros((self.n_f, self.n_s), dtype=complex)
        p = self.positions[layer]
        out[p[:, 0], p[:, 1]] = self.values[layer]
        return out

    def n_data_res(self):
        return int(self.data_mask().sum())


def build_pilot_pattern(cfg, seed, ports=None):
    """Comb-2 pilot pattern at the standard pilot symbols.

    Ports 0,1 share the even-subcarrier comb (CDM group 0) with covers
    [+1,+1] / [+1,-1]; ports 2,3 share the odd comb (group 1). By default
    layer l gets port l. Base pilot values are pseudo-random unit QPSK drawn
    from ``seed``, identical for the layers of a group before the cover.
    """
    if ports is None:
        ports = tuple(range(cfg.n_t))
    ports = tuple(int(p) for p in ports)
    if len(ports) != cfg.n_t:
        raise ConfigError(f"{len(ports)} ports given for {cfg.n_t} layers")
    if len(set(ports)) != len(ports):
        raise ConfigError(f"duplicate ports {ports}")
    if any(p < 0 or p >= MAX_PORTS for p in ports):
        raise ConfigError(
            f"only {MAX_PORTS} DMRS ports are supported; cannot place layers on ports {ports}")
    if cfg.n_s <= max(PILOT_SYMBOLS):
        raise ConfigError(f"slot with n_s={cfg.n_s} cannot hold pilot symbols {PILOT_SYMBOLS}")

    rng = np.random.default_rng(seed)
    n_comb = cfg.n_f // 2
    # one QPSK base sequence per CDM group, ordered (symbol, comb position)
    qpsk = np.exp(1j * (np.pi / 4)) * (1j ** rng.integers(
        0, 4, size=(2, len(PILOT_SYMBOLS), n_comb)))

    positions, values = [], []
    for port in ports:
        group, cover_idx = port // 2, port % 2
        subcarriers = np.arange(n_comb) * 2 + group
        pos = np.array([[f, s] for s in PILOT_SYMBOLS for f in subcarriers], dtype=int)
        cover = np.tile([1.0, -1.0] if cover_idx else [1.0, 1.0], n_comb // 2)
        vals = (qpsk[group] * cover).reshape(-1)
        positions.append(pos)
        values.append(vals)
    return PilotPattern(n_f=cfg.n_f, n_s=cfg.n_s, positions=positions, values=values,
                        ports=ports)


# -------------------------------------------------- positional encoding

@dataclass(frozen=True)
class PilotEncoding:
    """Raw and normalized per-RE distances to the nearest pilot.

    Plane 0 is the distance in OFDM symbols (time), plane 1 in subcarriers
    (frequency). Each normalized plane has zero mean and unit variance over
    the grid, or is all-zero when the raw plane is constant.
    """

    raw: np.ndarray
    normalized: np.ndarray


def positional_encoding(pattern, layer):
    pos = pattern.positions[layer]
    if len(pos) == 0:
        raise ContractError(f"layer {layer} has no pilots")
    pilot_f = np.unique(pos[:, 0])
    pilot_s = np.unique(pos[:, 1])
    d_s = np.min(np.abs(np.arange(pattern.n_s)[:, None] - pilot_s), axis=1)
    d_f = np.min(np.abs(np.arange(pattern.n_f)[:, None] - pilot_f), axis=1)
    raw = np.empty((pattern.n_f, pattern.n_s, 2))
    raw[:, :, 0] = d_s[None, :]
    raw[:, :, 1] = d_f[:, None]

    normalized = np.empty_like(raw)
    for plane in range(2):
        p = raw[:, :, plane]
        var = p.var()
        normalized[:, :, plane] = 0.0 if var < 1e-30 else (p - p.mean()) / np.sqrt(var)
    return PilotEncoding(raw=raw, normalized=normalized)


# --------------------------------------------------------- bits & slots

def sample_bits(cfg, pattern, rng):
    """Random payload bits on the data REs; zero elsewhere.

    Returns a uint8 array [n_t, n_f, n_s, m].
    """
    bits = rng.integers(0, 2, size=(cfg.n_t, cfg.n_f, cfg.n_s, cfg.bits_per_symbol),
                        dtype=np.uint8)
    bits[:, ~pattern.data_mask(), :] = 0
    return bits


def assemble_slot(bits, pattern, cfg):
    """Per-layer transmit grids: mapped data symbols plus pilots.

    Pilot symbols carry no data for any layer; REs of the other CDM group on
    those symbols are left empty (zero).
    """
    bits = np.asarray(bits)
    expect = (cfg.n_t, cfg.n_f, cfg.n_s, cfg.bits_per_symbol)
    if bits.shape != expect:
        raise DimensionError(f"bit grid has shape {bits.shape}, expected {expect}")
    if pattern.n_layers != cfg.n_t:
        raise DimensionError(
            f"pattern has {pattern.n_layers} layers, config has {cfg.n_t}")
    data = pattern.data_mask()
    x = map_bits_to_symbols(bits, cfg.bits_per_symbol)
    x[:, ~data] = 0.0
    for layer in range(cfg.n_t):
        pos = pattern.positions[layer]
        x[layer, pos[:, 0], pos[:, 1]] = pattern.values[layer]
    return x
