"""Monte-Carlo BER evaluation sweeps over SNR and layer counts.

Each (receiver, n_layers, snr) point simulates slots in fixed-size chunks
whose seeds derive from the master seed and the chunk index; chunk results
are consumed in index order with the stop rule applied per chunk, so the
outcome is byte-identical no matter how many workers execute the chunks.
All receivers see the same slots at a given point.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import channel, classic, grid, neural
from ..errors import CheckpointError, ConfigError
from . import config as cfgmod

CSV_COMMENT = ("# slotrx uncoded evaluation: BER over data bits; slot_errors counts "
               "slots with any data-bit error (uncoded stand-in for the coded "
               "transport-block error rate)")
CSV_HEADER = "receiver,n_layers,snr_db,bits,bit_errors,ber,slots,slot_errors,seconds"

RECEIVERS = ("neural", "ls-lmmse", "lmmse-kbest")

_STATS_TAG = 1001
_CHUNK_TAG = 2002


@dataclass
class EvalResult:
    receiver: str
    n_layers: int
    snr_db: float
    bits: int
    bit_errors: int
    ber: float
    slots: int
    slot_errors: int
    seconds: float

    def csv_row(self):
        return (f"{self.receiver},{self.n_layers},{self.snr_db:g},{self.bits},"
                f"{self.bit_errors},{self.ber:.6e},{self.slots},{self.slot_errors},"
                f"{self.seconds:.3f}")


@dataclass
class EvalContext:
    """Everything a chunk needs; picklable for worker processes."""

    n_f: int
    n_s: int
    n_rx: int
    bits_per_symbol: int
    pattern_seed: int
    channel_kind: str
    delay_spread_ns: float
    doppler_hz: float
    kbest_k: int
    llr_clip: float
    ckpt_path: str | None = None
    cov: np.ndarray | None = None


_CTX = None
_CACHE = {}


def _init_worker(ctx):
    global _CTX
    _CTX = ctx
    _CACHE.clear()


def _channel_model(ctx):
    if ctx.channel_kind == "flat":
        return channel.flat_rayleigh()
    return channel.tdl(ctx.channel_kind, delay_spread_s=ctx.delay_spread_ns * 1e-9,
                       doppler_hz=ctx.doppler_hz)


def _cached_receiver(ctx):
    key = ("rx", ctx.ckpt_path)
    if key not in _CACHE:
        _CACHE[key] = neural.load_checkpoint(ctx.ckpt_path)[0]
    return _CACHE[key]


def _cached_smoothers(ctx, pattern, n_t, sigma2):
    key = ("smoother", n_t, sigma2)
    if key not in _CACHE:
        _CACHE[key] = [
            classic.LmmseSmoother(ctx.cov, pattern, layer, noise_var=sigma2,
                                  despread=True)
            for layer in range(n_t)
        ]
    return _CACHE[key]


def _detect(ctx, pattern, y, sigma2, receiver):
    """Hard bit decisions on the data REs -> [n_slots, n_t, D, m]."""
    n_t = pattern.n_layers
    data = pattern.data_mask()
    m = ctx.bits_per_symbol
    if receiver == "neural":
        rx = _cached_receiver(ctx)
        llr = rx.forward(y, sigma2, pattern)
        return (llr[:, :, data, :] > 0).astype(np.uint8)
    if receiver == "ls-lmmse":
        hhat = np.stack([
            classic.interpolate_channel(
                classic.ls_estimate(y, pattern, layer, despread=True), pattern, layer)
            for layer in range(n_t)
        ], axis=-1)
        eq = classic.lmmse_equalize(y[:, data, :], hhat[:, data, :, :], sigma2)
        gains = np.where(np.abs(eq.gains) < 1e-12, 1e-12, eq.gains)
        llr = classic.scalar_maxlog_demap(eq.xhat / gains, eq.noise_var, m,
                                          clip=ctx.llr_clip)
        return np.moveaxis(llr > 0, 2, 1).astype(np.uint8)
    if receiver == "lmmse-kbest":
        smoothers = _cached_smoothers(ctx, pattern, n_t, sigma2)
        hhat = np.stack([
            smoothers[layer].apply(classic.ls_estimate(y, pattern, layer))
            for layer in range(n_t)
        ], axis=-1)
        n_slots = y.shape[0]
        yd = y[:, data, :].reshape(-1, ctx.n_rx)
        hd = hhat[:, data, :, :].reshape(-1, ctx.n_rx, n_t)
        res = classic.kbest_detect(yd, hd, k=ctx.kbest_k, bits_per_symbol=m)
        hard = res.hard_bits.reshape(n_slots, -1, n_t, m)
        return np.moveaxis(hard, 2, 1)
    raise ConfigError(f"unknown receiver name {receiver!r}")


def simulate_chunk(ctx, receiver, n_t, sigma2, entropy, n_slots):
    """Simulate and detect one chunk -> (bits, bit_errors, slots, slot_errors)."""
    c = grid.SlotConfig(n_f=ctx.n_f, n_t=n_t, n_rx=ctx.n_rx,
                        bits_per_symbol=ctx.bits_per_symbol, n_s=ctx.n_s)
    pattern = grid.build_pilot_pattern(c, seed=ctx.pattern_seed)
    data = pattern.data_mask()
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    bits = rng.integers(0, 2, size=(n_slots, n_t, c.n_f, c.n_s, c.bits_per_symbol),
                        dtype=np.uint8)
    bits[:, :, ~data, :] = 0
    x = grid.map_bits_to_symbols(bits, c.bits_per_symbol)
    x[:, :, ~data] = 0.0
    for layer in range(n_t):
        pos = pattern.positions[layer]
        x[:, layer, pos[:, 0], pos[:, 1]] = pattern.values[layer]
    model = _channel_model(ctx)
    h = channel.sample_channels(model, c, n_slots, seed=rng.integers(0, 2**63))
    y = channel.add_awgn(channel.apply_channel(h, x), channel.NoiseConfig(sigma2), rng)

    hard = _detect(ctx, pattern, y, sigma2, receiver)
    ref = bits[:, :, data, :]
    errors = hard != ref
    return (int(ref.size), int(errors.sum()), n_slots,
            int(errors.any(axis=(1, 2, 3)).sum()))


def _chunk_task(args):
    receiver, n_t, sigma2, entropy, n_slots = args
    return simulate_chunk(_CTX, receiver, n_t, sigma2, entropy, n_slots)


def _chunk_plan(master_seed, point_idx, n_t, max_slots, chunk_slots):
    plan = []
    done = 0
    idx = 0
    while done < max_slots:
        size = min(chunk_slots, max_slots - done)
        entropy = (master_seed, _CHUNK_TAG, n_t, point_idx, idx)
        plan.append((entropy, size))
        done += size
        idx += 1
    return plan


def run_point(ctx, receiver, n_t, snr_db, point_idx, master_seed, min_errors,
              max_slots, chunk_slots, executor=None, workers=1):
    """One (receiver, n_layers, snr) Monte-Carlo point with the stop rule."""
    sigma2 = float(channel.snr_db_to_sigma2(snr_db))
    plan = _chunk_plan(master_seed, point_idx, n_t, max_slots, chunk_slots)
    args = [(receiver, n_t, sigma2, entropy, size) for entropy, size in plan]
    totals = [0, 0, 0, 0]

    def consume(result):
        for i, v in enumerate(result):
            totals[i] += v
        return totals[1] >= min_errors

    if executor is None:
        for a in args:
            if consume(simulate_chunk(ctx, *a)):
                break
    else:
        pending = {}
        next_submit = 0
        next_consume = 0
        stopped = False
        while next_consume < len(args) and not stopped:
            while next_submit < len(args) and next_submit - next_consume < workers:
                pending[next_submit] = executor.submit(_chunk_task, args[next_submit])
                next_submit += 1
            stopped = consume(pending.pop(next_consume).result())
            next_consume += 1
        for fut in pending.values():
            fut.cancel()
    bits, bit_errors, slots, slot_errors = totals
    return EvalResult(receiver=receiver, n_layers=n_t, snr_db=snr_db, bits=bits,
                      bit_errors=bit_errors, ber=bit_errors / bits if bits else 0.0,
                      slots=slots, slot_errors=slot_errors, seconds=0.0)


def run_eval_sweep(cfg, ckpt_path=None, out_csv=None):
    """Full sweep over receivers x layer counts x SNR points; returns results.

    Deterministic given the master seed (the ``seconds`` column stays 0.000
    unless timing=wall is configured, which trades byte-identical reruns for
    wall-clock visibility).
    """
    ev = cfg["eval"]
    receivers = cfgmod.parse_str_list(ev["receivers"])
    snrs = cfgmod.parse_float_list(ev["snr_db"])
    layer_counts = cfgmod.parse_int_list(ev["n_layers"])
    for name in receivers:
        if name not in RECEIVERS:
            raise ConfigError(f"unknown receiver name {name!r} (choices: {RECEIVERS})")
    if not snrs or not layer_counts:
        raise ConfigError("eval needs at least one SNR point and one layer count")
    timing = ev["timing"]
    if timing not in ("off", "wall"):
        raise ConfigError(f"timing must be off or wall, got {timing!r}")

    master_seed = cfg["run"]["seed"]
    slot = cfg["slot"]
    ctx = EvalContext(
        n_f=slot["n_f"], n_s=slot["n_s"], n_rx=slot["n_rx"],
        bits_per_symbol=slot["bits_per_symbol"],
        pattern_seed=int(np.random.SeedSequence([master_seed, 7]).generate_state(1)[0]),
        channel_kind=cfg["channel"]["kind"],
        delay_spread_ns=cfg["channel"]["delay_spread_ns"],
        doppler_hz=cfg["channel"]["doppler_hz"],
        kbest_k=ev["kbest_k"], llr_clip=ev["llr_clip"], ckpt_path=None, cov=None)

    if "neural" in receivers:
        if not ckpt_path:
            raise ConfigError("the neural receiver needs a checkpoint (--ckpt)")
        rx, _ = neural.load_checkpoint(ckpt_path)
        if rx.hyper.bits_per_symbol != slot["bits_per_symbol"]:
            raise CheckpointError(
                f"checkpoint was trained for bits_per_symbol="
                f"{rx.hyper.bits_per_symbol}, evaluation uses {slot['bits_per_symbol']} "
                "(the constellation is baked into the weights)")
        if rx.hyper.n_rx != slot["n_rx"]:
            raise CheckpointError(
                f"checkpoint expects {rx.hyper.n_rx} receive antennas, "
                f"evaluation uses {slot['n_rx']}")
        ctx.ckpt_path = str(ckpt_path)
    if "lmmse-kbest" in receivers:
        template = grid.SlotConfig(n_f=slot["n_f"], n_t=1, n_rx=slot["n_rx"],
                                   bits_per_symbol=slot["bits_per_symbol"],
                                   n_s=slot["n_s"])
        ctx.cov = classic.estimate_channel_covariance(
            _channel_model(ctx), template, ev["stats_samples"],
            seed=np.random.SeedSequence([master_seed, _STATS_TAG]))

    _init_worker(ctx)
    workers = max(1, ev["workers"])
    executor = None
    if workers > 1:
        executor = ProcessPoolExecutor(max_workers=workers,
                                       initializer=_init_worker, initargs=(ctx,))
    results = []
    try:
        point_idx = 0
        for n_t in layer_counts:
            for snr in snrs:
                for name in receivers:
                    t0 = time.perf_counter()
                    res = run_point(ctx, name, n_t, snr, point_idx, master_seed,
                                    ev["min_errors"], ev["max_slots"],
                                    ev["chunk_slots"], executor=executor,
                                    workers=workers)
                    if timing == "wall":
                        res.seconds = time.perf_counter() - t0
                    results.append(res)
                point_idx += 1
    finally:
        if executor is not None:
            executor.shutdown(cancel_futures=True)

    if out_csv:
        write_csv(out_csv, results)
    return results


def write_csv(path, results):
    with open(path, "w") as f:
        f.write(CSV_COMMENT + "\n")
        f.write(CSV_HEADER + "\n")
        for res in results:
            f.write(res.csv_row() + "\n")
