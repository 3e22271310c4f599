"""Command-line front end: train, eval, inspect, gradcheck."""

import argparse
import sys

import numpy as np

from .. import grid, neural, training
from .. import tensorgrad as tg
from ..errors import SlotrxError
from . import config as cfgmod
from . import evaluate


def _add_schema_flags(parser):
    for sec, keys in cfgmod.SCHEMA.items():
        group = parser.add_argument_group(f"[{sec}] overrides")
        for key, (_, default, help_text) in keys.items():
            group.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                               metavar="V", help=f"{help_text} (default: {default})")


def _resolved(args):
    overrides = {key: getattr(args, key) for sec in cfgmod.SCHEMA
                 for key in cfgmod.SCHEMA[sec]}
    return cfgmod.resolve(args.config, overrides)


def _hyper_from_cfg(cfg):
    m = cfg["model"]
    return neural.Hyperparams(
        d_s=m["d_s"], d_m=m["d_m"], n_it=m["n_it"], msg_hidden=m["msg_hidden"],
        readout_hidden=m["readout_hidden"], conv_init_width=m["conv_init_width"],
        conv_state_width=m["conv_state_width"], n_rx=cfg["slot"]["n_rx"],
        bits_per_symbol=cfg["slot"]["bits_per_symbol"])


def _slot_from_cfg(cfg, n_t):
    s = cfg["slot"]
    return grid.SlotConfig(n_f=s["n_f"], n_t=n_t, n_rx=s["n_rx"],
                           bits_per_symbol=s["bits_per_symbol"], n_s=s["n_s"])


def cmd_train(args):
    cfg = _resolved(args)
    t = cfg["train"]
    ch = cfg["channel"]
    slot = _slot_from_cfg(cfg, n_t=1)
    hyper = _hyper_from_cfg(cfg)
    dtype = np.dtype(cfg["model"]["dtype"])
    seed_seq = np.random.SeedSequence([cfg["run"]["seed"], 11])
    receiver = neural.NeuralReceiver.build(hyper, seed=seed_seq, dtype=dtype)
    train_cfg = training.TrainConfig(
        batch_size=t["batch_size"], lr=t["lr"], steps=t["steps"],
        snr_min_db=t["snr_min_db"], snr_max_db=t["snr_max_db"],
        n_t_max=cfg["slot"]["n_t_max"], seed=cfg["run"]["seed"],
        channel_kind=ch["kind"], delay_spread_min_ns=ch["delay_spread_min_ns"],
        delay_spread_max_ns=ch["delay_spread_max_ns"],
        doppler_max_hz=ch["doppler_max_hz"], grad_clip=t["grad_clip"],
        multi_loss=t["multi_loss"])

    log_path = args.log or f"{args.out}.train_log.csv"
    cfgmod.dump(cfg, f"{args.out}.effective.cfg")

    def progress(step, loss):
        if not args.quiet and (step % max(1, t["steps"] // 100) == 0 or step == 1):
            print(f"step {step}/{t['steps']}  loss {loss:.5f}", file=sys.stderr)

    training.run_training(receiver, slot, train_cfg, log_path=log_path,
                          progress=progress)
    neural.save_checkpoint(args.out, receiver, extra_metadata={
        "train_steps": t["steps"], "train_seed": cfg["run"]["seed"],
        "train_channel": ch["kind"]})
    print(f"checkpoint written to {args.out}; training log at {log_path}")
    return 0


def cmd_eval(args):
    cfg = _resolved(args)
    cfgmod.dump(cfg, f"{args.out}.effective.cfg")
    results = evaluate.run_eval_sweep(cfg, ckpt_path=args.ckpt, out_csv=args.out)
    print(evaluate.CSV_HEADER)
    for res in results:
        print(res.csv_row())
    print(f"results written to {args.out}")
    return 0


def cmd_inspect(args):
    cfg = _resolved(args)
    n_t = cfg["slot"]["n_t_max"]
    slot = _slot_from_cfg(cfg, n_t=n_t)
    pattern_seed = int(np.random.SeedSequence([cfg["run"]["seed"], 7])
                       .generate_state(1)[0])
    pattern = grid.build_pilot_pattern(slot, seed=pattern_seed)
    tensors = {"data_mask": pattern.data_mask().astype(np.float64)}
    for layer in range(n_t):
        pe = grid.positional_encoding(pattern, layer)
        tensors[f"layer{layer}/pe"] = pe.normalized
        tensors[f"layer{layer}/pe_raw"] = pe.raw
        tensors[f"layer{layer}/pilot_mask"] = pattern.mask(layer).astype(np.float64)
        vals = pattern.value_grid(layer)
        tensors[f"layer{layer}/pilot_re"] = vals.real
        tensors[f"layer{layer}/pilot_im"] = vals.imag
    tg.save_tensors(args.out, tensors, metadata={
        "kind": "slotrx-inspect", "n_f": slot.n_f, "n_s": slot.n_s,
        "n_layers": n_t, "pilot_scheme": grid.PILOT_SCHEME_ID})
    cfgmod.dump(cfg, f"{args.out}.effective.cfg")
    print(f"slot {slot.n_f}x{slot.n_s}, {n_t} layers, "
          f"{pattern.n_data_res()} data REs per layer")
    for layer in range(n_t):
        print(f"  layer {layer}: port {pattern.ports[layer]}, "
              f"{len(pattern.positions[layer])} pilot REs")
    print(f"named tensors written to {args.out}")
    return 0


def cmd_gradcheck(args):
    failures = []

    def check(name, build_loss, params, tol=1e-4):
        loss = build_loss()
        params.zero_grad()
        tg.backward(loss)
        analytic = {n: p.grad.copy() for n, p in params.items()}
        numeric = tg.finite_difference_gradients(
            lambda: float(build_loss().value), params, step=1e-4)
        err = tg.max_relative_error(analytic, numeric)
        status = "ok" if err < tol else "FAIL"
        print(f"{name:28s} max rel err {err:.3e}  {status}")
        if err >= tol:
            failures.append(name)

    rng = np.random.default_rng(5)

    ps = tg.ParamSet()
    t = {n: ps.add(n, rng.standard_normal(s))
         for n, s in [("w", (6, 4)), ("b", (4,)), ("x", (3, 6))]}
    labels = rng.integers(0, 2, size=(3, 4)).astype(float)
    check("dense", lambda: tg.bce_with_logits(tg.dense(t["x"], t["w"], t["b"]),
                                              labels), ps)

    ps2 = tg.ParamSet()
    t2 = {n: ps2.add(n, rng.standard_normal(s))
          for n, s in [("k", (3, 3, 2)), ("pw", (2, 3)), ("cb", (3,)),
                       ("cx", (5, 6, 2))]}
    labels2 = rng.integers(0, 2, size=(5, 6, 3)).astype(float)
    check("separable_conv2d",
          lambda: tg.bce_with_logits(
              tg.separable_conv2d(t2["cx"], t2["k"], t2["pw"], t2["cb"]), labels2),
          ps2)

    ps3 = tg.ParamSet()
    x3 = ps3.add("x", rng.standard_normal((4, 3, 5)))
    labels3 = rng.integers(0, 2, size=(4, 3, 5)).astype(float)
    check("relu+sigmoid+mean_others",
          lambda: tg.bce_with_logits(
              tg.add(tg.relu(tg.mean_over_others(x3, axis=0)),
                     tg.sigmoid(x3)), labels3),
          ps3)

    # small full receiver (pinned generic point; see tests for the kink rationale)
    n_f, n_s, n_rx = 8, 14, 2
    pos = [np.array([[f, s] for s in (2, 11) for f in range(off, n_f, 2)])
           for off in (0, 1)]
    vals = [np.exp(2j * np.pi * rng.random(len(p))) for p in pos]
    pattern = grid.PilotPattern(n_f=n_f, n_s=n_s, positions=pos, values=vals,
                                ports=(0, 2))
    y = rng.standard_normal((n_f, n_s, n_rx)) + 1j * rng.standard_normal((n_f, n_s, n_rx))
    labels4 = rng.integers(0, 2, size=(1, 2, n_f, n_s, 4)).astype(float)
    mask = pattern.data_mask()
    hyper = neural.Hyperparams(d_s=4, d_m=4, n_it=2, msg_hidden=4, readout_hidden=4,
                               conv_init_width=4, conv_state_width=4, n_rx=n_rx,
                               bits_per_symbol=4)
    rx = neural.NeuralReceiver.build(hyper, seed=21)
    bias_rng = np.random.default_rng(121)
    for name, p in rx.params.items():
        if name.endswith(".b"):
            p.value[...] = bias_rng.uniform(-0.3, 0.3, size=p.value.shape)
    check("neural_receiver_8x14",
          lambda: training.bce_multi_loss(
              rx.forward(y[None], np.array([0.1]), pattern, train=True),
              labels4, mask),
          rx.params)

    if failures:
        print(f"gradient check FAILED for: {', '.join(failures)}")
        return 1
    print("all gradient checks passed")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="slotrx",
        description="MU-MIMO OFDM link-level simulation: train and evaluate the "
                    "neural receiver against classical baselines.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the neural receiver")
    p_train.add_argument("--config", help="configuration file")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--log", default=None, help="training log path")
    p_train.add_argument("--quiet", action="store_true")
    _add_schema_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="Monte-Carlo BER sweep")
    p_eval.add_argument("--config", help="configuration file")
    p_eval.add_argument("--ckpt", default=None, help="neural receiver checkpoint")
    p_eval.add_argument("--out", required=True, help="CSV output path")
    _add_schema_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_inspect = sub.add_parser("inspect",
                               help="dump pilot pattern and encoding planes")
    p_inspect.add_argument("--config", help="configuration file")
    p_inspect.add_argument("--out", default="pattern_dump.nt",
                           help="named-tensor output path")
    _add_schema_flags(p_inspect)
    p_inspect.set_defaults(func=cmd_inspect)

    p_grad = sub.add_parser("gradcheck",
                            help="finite-difference gradient verification")
    p_grad.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SlotrxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
