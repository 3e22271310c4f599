"""Run configuration: flat key-value file with sections, mirrored by CLI flags.

Resolution order: schema default < config file < command-line flag. Keys are
globally unique across sections so every key maps to one ``--key`` flag.
Every run writes the fully resolved configuration next to its outputs.
"""

import configparser

from ..errors import ConfigError


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


# section -> key -> (parser, default, help)
SCHEMA = {
    "run": {
        "seed": (int, 0, "master seed for all randomness"),
    },
    "slot": {
        "n_f": (int, 48, "subcarriers (whole PRBs, multiple of 12)"),
        "n_s": (int, 14, "OFDM symbols per slot"),
        "n_rx": (int, 4, "receive antennas"),
        "n_t_max": (int, 4, "maximum number of active layers"),
        "bits_per_symbol": (int, 4, "2 = QPSK, 4 = 16-QAM"),
    },
    "channel": {
        "kind": (str, "flat", "flat | tdl-b | tdl-c"),
        "delay_spread_ns": (float, 100.0, "TDL delay spread (evaluation)"),
        "doppler_hz": (float, 400.0, "TDL Doppler shift (evaluation)"),
        "delay_spread_min_ns": (float, 10.0, "per-example training randomization, low"),
        "delay_spread_max_ns": (float, 300.0, "per-example training randomization, high"),
        "doppler_max_hz": (float, 1000.0, "per-example training randomization, high"),
    },
    "model": {
        "d_s": (int, 32, "state feature depth"),
        "d_m": (int, 32, "message depth"),
        "n_it": (int, 2, "unrolled receiver iterations"),
        "msg_hidden": (int, 64, "message MLP hidden width"),
        "readout_hidden": (int, 64, "read-out MLP hidden width"),
        "conv_init_width": (int, 64, "input-embedding conv width"),
        "conv_state_width": (int, 64, "state-update conv width"),
        "dtype": (str, "float32", "float32 | float64"),
    },
    "train": {
        "batch_size": (int, 8, "slots per optimisation step"),
        "steps": (int, 20000, "optimisation steps"),
        "lr": (float, 1e-3, "Adam learning rate"),
        "snr_min_db": (float, 0.0, "training SNR range, low (dB)"),
        "snr_max_db": (float, 20.0, "training SNR range, high (dB)"),
        "grad_clip": (float, 1.0, "global-norm gradient clip (0 disables)"),
        "multi_loss": (_bool, True, "average the loss over all iterations"),
    },
    "eval": {
        "receivers": (str, "neural,ls-lmmse,lmmse-kbest", "comma-separated receiver list"),
        "snr_db": (str, "0,5,10,15,20", "comma-separated SNR points (dB)"),
        "n_layers": (str, "1,2", "comma-separated active layer counts"),
        "min_errors": (int, 100, "stop a point after this many bit errors"),
        "max_slots": (int, 2000, "hard slot cap per point"),
        "chunk_slots": (int, 16, "slots simulated per chunk"),
        "workers": (int, 1, "parallel chunk workers"),
        "kbest_k": (int, 16, "K-best survivors per level"),
        "llr_clip": (float, 20.0, "LLR clip magnitude"),
        "stats_samples": (int, 4000, "Monte-Carlo samples for LMMSE statistics"),
        "timing": (str, "off", "off | wall (wall-clock breaks byte-identical reruns)"),
    },
}

_KEY_TO_SECTION = {}
for _sec, _keys in SCHEMA.items():
    for _key in _keys:
        if _key in _KEY_TO_SECTION:
            raise AssertionError(f"duplicate config key {_key}")
        _KEY_TO_SECTION[_key] = _sec


def defaults():
    return {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}


def load_file(path):
    """Parse one INI-style config file against the schema."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{sec}]")
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]")
            parse = SCHEMA[sec][key][0]
            try:
                out.setdefault(sec, {})[key] = parse(raw)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{path}: bad value for {key}: {raw!r} ({exc})") from exc
    return out


def resolve(config_path=None, overrides=None):
    """defaults < file < overrides -> nested {section: {key: value}} dict."""
    cfg = defaults()
    if config_path:
        for sec, keys in load_file(config_path).items():
            cfg[sec].update(keys)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        sec = _KEY_TO_SECTION.get(key)
        if sec is None:
            raise ConfigError(f"unknown configuration key {key!r}")
        parse = SCHEMA[sec][key][0]
        cfg[sec][key] = parse(value) if isinstance(value, str) else value
    return cfg


def dump(cfg, path):
    """Write the effective (fully resolved) configuration."""
    with open(path, "w") as f:
        f.write("# effective configuration (all defaults resolved)\n")
        for sec in SCHEMA:
            f.write(f"[{sec}]\n")
            for key in SCHEMA[sec]:
                f.write(f"{key} = {cfg[sec][key]}\n")
            f.write("\n")


def parse_float_list(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def parse_int_list(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def parse_str_list(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]
