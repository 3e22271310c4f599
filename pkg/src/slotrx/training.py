"""Training loop for the neural receiver.

Per step: draw the number of active layers from a triangular distribution,
simulate a batch of slots (per-example SNR, channel realization, payload
bits), run the receiver in training mode, average the masked BCE loss over
all unrolled iterations, backpropagate, and take one Adam step.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import channel, grid
from . import tensorgrad as tg
from .errors import ConfigError, NumericalError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    lr: float = 1e-3
    steps: int = 20000
    snr_min_db: float = 0.0
    snr_max_db: float = 20.0
    n_t_max: int = 4
    seed: int = 0
    channel_kind: str = "flat"          # flat | tdl-b | tdl-c
    delay_spread_min_ns: float = 10.0   # tdl randomization range per example
    delay_spread_max_ns: float = 300.0
    doppler_max_hz: float = 1000.0
    grad_clip: float = 1.0              # 0 disables
    multi_loss: bool = True             # False: train on the last iteration only

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_t_max < 1:
            raise ConfigError(f"n_t_max must be >= 1, got {self.n_t_max}")
        if self.snr_min_db > self.snr_max_db:
            raise ConfigError(
                f"snr range [{self.snr_min_db}, {self.snr_max_db}] dB is inverted")
        if self.channel_kind not in ("flat", "tdl-b", "tdl-c"):
            raise ConfigError(f"unknown training channel {self.channel_kind!r}")


def sample_num_layers(n_t_max, rng):
    """Triangular draw on 1..n_t_max: P(k) proportional to k."""
    weights = np.arange(1, n_t_max + 1, dtype=float)
    return int(rng.choice(np.arange(1, n_t_max + 1), p=weights / weights.sum()))


def sample_snr_db(rng, lo, hi):
    """Uniform in dB over the configured range."""
    return float(rng.uniform(lo, hi))


def bce_multi_loss(llr_iterations, bits, data_mask):
    """Masked BCE averaged over batch, REs, layers, bits, and iterations.

    llr_iterations: per-iteration graph nodes [b, n_t, n_f, n_s, m]; bits the
    matching {0,1} labels; data_mask a [n_f, n_s] bool plane (pilot symbols
    excluded from the loss).
    """
    labels = np.asarray(bits, dtype=float)
    mask = np.asarray(data_mask, dtype=float)[None, None, :, :, None]
    loss = tg.bce_with_logits(llr_iterations[0], labels, mask)
    for node in llr_iterations[1:]:
        loss = tg.add(loss, tg.bce_with_logits(node, labels, mask))
    loss = tg.scale(loss, 1.0 / len(llr_iterations))
    if not np.isfinite(loss.value):
        raise NumericalError("training loss is not finite")
    return loss


def _sample_train_channel(cfg, slot_cfg, rng):
    if cfg.channel_kind == "flat":
        return channel.sample_channel(channel.flat_rayleigh(), slot_cfg,
                                      rng.integers(0, 2**63))
    profile = cfg.channel_kind
    ds = rng.uniform(cfg.delay_spread_min_ns, cfg.delay_spread_max_ns) * 1e-9
    doppler = rng.uniform(0.0, cfg.doppler_max_hz)
    model = channel.tdl(profile, delay_spread_s=ds, doppler_hz=doppler)
    return channel.sample_channel(model, slot_cfg, rng.integers(0, 2**63))


@dataclass
class TrainState:
    receiver: object
    optimizer: tg.Adam
    cfg: TrainConfig
    slot_template: grid.SlotConfig
    slot_cfgs: dict
    rng: np.random.Generator
    step: int = 0
    log_rows: list = field(default_factory=list)


def init_training(receiver, slot_cfg, cfg):
    """Build per-layer-count slot configs and the optimizer; seeds fixed by cfg."""
    slot_cfgs = {}
    for n_t in range(1, cfg.n_t_max + 1):
        slot_cfgs[n_t] = grid.SlotConfig(
            n_f=slot_cfg.n_f, n_t=n_t, n_rx=slot_cfg.n_rx,
            bits_per_symbol=slot_cfg.bits_per_symbol, n_s=slot_cfg.n_s)
    return TrainState(
        receiver=receiver,
        optimizer=tg.Adam(receiver.params, lr=cfg.lr),
        cfg=cfg,
        slot_template=slot_cfg,
        slot_cfgs=slot_cfgs,
        rng=np.random.default_rng(np.random.SeedSequence(cfg.seed)),
    )


def simulate_batch(state, n_t, pattern):
    """One training batch: per-example SNR, channel, bits -> (y, sigma2, bits)."""
    cfg = state.cfg
    c = state.slot_cfgs[n_t]
    rng = state.rng
    b = cfg.batch_size
    y = np.empty((b, c.n_f, c.n_s, c.n_rx), dtype=complex)
    bits = np.empty((b, n_t, c.n_f, c.n_s, c.bits_per_symbol), dtype=np.uint8)
    sigma2 = np.empty(b)
    for i in range(b):
        snr_db = sample_snr_db(rng, cfg.snr_min_db, cfg.snr_max_db)
        sigma2[i] = channel.snr_db_to_sigma2(snr_db)
        h = _sample_train_channel(cfg, c, rng)
        bits[i] = grid.sample_bits(c, pattern, rng)
        x = grid.assemble_slot(bits[i], pattern, c)
        y[i] = channel.add_awgn(channel.apply_channel(h, x),
                                channel.NoiseConfig(sigma2[i]), rng)
    return y, sigma2, bits


def clip_gradients(params, max_norm):
    """Global-norm gradient clip; returns the pre-clip norm."""
    total = 0.0
    for _, p in params.items():
        total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, p in params.items():
            p.grad *= factor
    return norm


def train_step(state):
    """One optimisation step; returns (n_t, mean sigma2 dB, loss).

    Pilot values are redrawn every step (they change per slot in the real
    system), so the receiver cannot latch onto one pilot sequence.
    """
    cfg = state.cfg
    n_t = sample_num_layers(cfg.n_t_max, state.rng)
    pattern = grid.build_pilot_pattern(state.slot_cfgs[n_t],
                                       seed=state.rng.integers(0, 2**63))
    y, sigma2, bits = simulate_batch(state, n_t, pattern)
    llrs = state.receiver.forward(y, sigma2, pattern, train=True)
    if not cfg.multi_loss:
        llrs = llrs[-1:]
    loss = bce_multi_loss(llrs, bits, pattern.data_mask())
    state.receiver.params.zero_grad()
    tg.backward(loss)
    if cfg.grad_clip > 0:
        norm = clip_gradients(state.receiver.params, cfg.grad_clip)
        if norm > cfg.grad_clip:
            log.info("step %d: gradient norm %.3f clipped to %.3f",
                     state.step, norm, cfg.grad_clip)
    state.optimizer.step()
    state.step += 1
    mean_sigma2_db = float(np.mean(10.0 * np.log10(sigma2)))
    loss_val = float(loss.value)
    state.log_rows.append((state.step, n_t, mean_sigma2_db, loss_val))
    return n_t, mean_sigma2_db, loss_val


def run_training(receiver, slot_cfg, cfg, log_path=None, progress=None):
    """Full training run; writes the per-step CSV log if a path is given."""
    state = init_training(receiver, slot_cfg, cfg)
    handle = open(log_path, "w") if log_path else None
    try:
        if handle:
            handle.write("step,n_layers,mean_sigma2_db,loss\n")
        for _ in range(cfg.steps):
            n_t, mean_db, loss = train_step(state)
            if handle:
                handle.write(f"{state.step},{n_t},{mean_db:.6f},{loss:.8e}\n")
            if progress is not None:
                progress(state.step, loss)
    finally:
        if handle:
            handle.close()
    return state
