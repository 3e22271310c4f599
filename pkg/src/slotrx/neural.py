"""The neural MU-MIMO receiver.

One forward pass processes a whole slot for all layers jointly: a per-layer
input embedding CNN over [received grid, pilot positional encoding, noise
power, LS bootstrap estimate], a fixed number of unrolled iterations of
per-RE message passing between layers followed by a convolutional state
update with a skip connection, and a per-RE MLP read-out to bit LLRs.

All weights are shared across layers (the layer count is not baked into any
parameter), the message MLP and state CNN have separate weights per
iteration, and the read-out MLP is shared. Convolutions are 3x3 separable
with zero "same" padding, so the subcarrier count is free at inference time.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import tensorgrad as tg
from .classic import interpolate_channel, ls_estimate
from .errors import CheckpointError, ConfigError, ContractError, DimensionError
from .grid import PILOT_SCHEME_ID, positional_encoding

CHECKPOINT_KIND = "slotrx-neural-rx"


@dataclass(frozen=True)
class Hyperparams:
    """Architecture knobs; the defaults are the desk-scale preset."""

    d_s: int = 32
    d_m: int = 32
    n_it: int = 2
    msg_hidden: int = 64
    readout_hidden: int = 64
    conv_init_width: int = 64
    conv_state_width: int = 64
    n_rx: int = 4
    bits_per_symbol: int = 4

    def __post_init__(self):
        for name in ("d_s", "d_m", "n_it", "msg_hidden", "readout_hidden",
                     "conv_init_width", "conv_state_width", "n_rx"):
            if getattr(self, name) < 1:
                raise ConfigError(f"hyperparameter {name} must be >= 1")
        if self.bits_per_symbol not in (2, 4):
            raise ConfigError(f"bits_per_symbol must be 2 or 4, got {self.bits_per_symbol}")

    @property
    def n_input_planes(self):
        # [Re Y, Im Y | PE | N0 | Re H_hat, Im H_hat]
        return 4 * self.n_rx + 3

    @classmethod
    def paper_scale(cls, **overrides):
        """Conv widths of the published architecture; the rest stays configurable."""
        args = dict(conv_init_width=128, conv_state_width=256, d_s=64, d_m=64)
        args.update(overrides)
        return cls(**args)


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class NeuralReceiver:
    """Holds the hyperparameters and one ParamSet; forward is pure in both."""

    def __init__(self, hyper, params):
        self.hyper = hyper
        self.params = params

    # ------------------------------------------------------------ build

    @classmethod
    def build(cls, hyper, seed, dtype=np.float64):
        """Glorot-uniform weights, zero biases, fixed creation order."""
        rng = np.random.default_rng(seed)
        ps = tg.ParamSet()

        def conv(prefix, c_in, c_out):
            ps.add(f"{prefix}.dw", _glorot(rng, (3, 3, c_in), 9, 9).astype(dtype))
            ps.add(f"{prefix}.pw", _glorot(rng, (c_in, c_out), c_in, c_out).astype(dtype))
            ps.add(f"{prefix}.b", np.zeros(c_out, dtype=dtype))

        def linear(prefix, d_in, d_out):
            ps.add(f"{prefix}.w", _glorot(rng, (d_in, d_out), d_in, d_out).astype(dtype))
            ps.add(f"{prefix}.b", np.zeros(d_out, dtype=dtype))

        h = hyper
        conv("init.conv0", h.n_input_planes, h.conv_init_width)
        conv("init.conv1", h.conv_init_width, h.conv_init_width)
        conv("init.conv2", h.conv_init_width, h.d_s)
        for t in range(h.n_it):
            linear(f"it{t}.msg.l0", h.d_s, h.msg_hidden)
            linear(f"it{t}.msg.l1", h.msg_hidden, h.d_m)
            state_in = h.d_m + 2 + h.d_s
            conv(f"it{t}.state.conv0", state_in, h.conv_state_width)
            conv(f"it{t}.state.conv1", h.conv_state_width, h.conv_state_width)
            conv(f"it{t}.state.conv2", h.conv_state_width, h.d_s)
        linear("readout.l0", h.d_s, h.readout_hidden)
        linear("readout.l1", h.readout_hidden, h.bits_per_symbol)
        return cls(hyper, ps)

    def n_params(self):
        return self.params.n_scalars()

    @property
    def dtype(self):
        return self.params["init.conv0.dw"].dtype

    # ---------------------------------------------------------- forward

    def _conv_stack(self, x, prefix):
        p = self.params
        x = tg.relu(tg.separable_conv2d(x, p[f"{prefix}0.dw"], p[f"{prefix}0.pw"],
                                        p[f"{prefix}0.b"]))
        x = tg.relu(tg.separable_conv2d(x, p[f"{prefix}1.dw"], p[f"{prefix}1.pw"],
                                        p[f"{prefix}1.b"]))
        return tg.separable_conv2d(x, p[f"{prefix}2.dw"], p[f"{prefix}2.pw"],
                                   p[f"{prefix}2.b"])

    def _mlp(self, x, prefix):
        p = self.params
        h = tg.relu(tg.dense(x, p[f"{prefix}.l0.w"], p[f"{prefix}.l0.b"]))
        return tg.dense(h, p[f"{prefix}.l1.w"], p[f"{prefix}.l1.b"])

    def _input_features(self, y, sigma2, pattern):
        """Constant input tensor [b, n_t, n_f, n_s, 4*n_rx+3]."""
        b, n_f, n_s, n_rx = y.shape
        n_t = pattern.n_layers
        feats = np.empty((b, n_t, n_f, n_s, self.hyper.n_input_planes), dtype=self.dtype)
        feats[..., :n_rx] = y.real[:, None]
        feats[..., n_rx:2 * n_rx] = y.imag[:, None]
        for layer in range(n_t):
            pe = positional_encoding(pattern, layer).normalized
            feats[:, layer, :, :, 2 * n_rx:2 * n_rx + 2] = pe
            est = ls_estimate(y, pattern, layer)
            boot = interpolate_channel(est, pattern, layer)
            feats[:, layer, :, :, 2 * n_rx + 3:3 * n_rx + 3] = boot.real
            feats[:, layer, :, :, 3 * n_rx + 3:] = boot.imag
        if np.any(sigma2 <= 0):
            raise ContractError("the N0 input plane needs sigma2 > 0")
        n0_db = 10.0 * np.log10(sigma2)
        feats[..., 2 * n_rx + 2] = n0_db[:, None, None, None]
        return feats

    def forward(self, y, sigma2, pattern, train=False, n_it=None):
        """Detect one batch of slots.

        y: complex [n_f, n_s, n_rx] or [b, n_f, n_s, n_rx]; sigma2: scalar or
        [b]. Returns LLRs [b, n_t, n_f, n_s, m] as an array in inference mode;
        with ``train=True`` returns the per-iteration LLR graph nodes for the
        multi-iteration loss. ``n_it`` may reduce the number of unrolled
        iterations below the trained depth (the multi-iteration loss keeps
        every depth usable).
        """
        y = np.asarray(y)
        single = y.ndim == 3
        if single:
            y = y[None]
        if y.ndim != 4:
            raise DimensionError(f"received grid has rank {y.ndim}, expected 3 or 4")
        b, n_f, n_s, n_rx = y.shape
        if n_rx != self.hyper.n_rx:
            raise DimensionError(
                f"received grid has {n_rx} antennas, model expects {self.hyper.n_rx}")
        if n_f < 3 or n_s < 3:
            raise ContractError(f"grid {n_f}x{n_s} is below the 3x3 kernel support")
        n_t = pattern.n_layers
        if n_t < 1:
            raise ContractError("need at least one layer with a pilot pattern")
        if pattern.n_f != n_f or pattern.n_s != n_s:
            raise DimensionError(
                f"pattern grid {pattern.n_f}x{pattern.n_s} != received {n_f}x{n_s}")
        sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (b,))
        if n_it is None:
            n_it = self.hyper.n_it
        if not 1 <= n_it <= self.hyper.n_it:
            raise ContractError(
                f"n_it={n_it} outside [1, {self.hyper.n_it}] trained iterations")

        feats = self._input_features(y, sigma2, pattern)
        h = self.hyper
        flat = (b * n_t, n_f, n_s)
        x0 = tg.constant(feats.reshape(flat + (h.n_input_planes,)))
        pe4 = tg.constant(
            np.ascontiguousarray(feats[..., 2 * h.n_rx:2 * h.n_rx + 2])
            .reshape(flat + (2,)))

        state = self._conv_stack(x0, "init.conv")
        per_iteration = []
        for t in range(n_it):
            msg = self._mlp(state, f"it{t}.msg")
            msg5 = tg.reshape(msg, (b, n_t, n_f, n_s, h.d_m))
            agg = tg.reshape(tg.mean_over_others(msg5, axis=1), flat + (h.d_m,))
            upd = self._conv_stack(tg.concat([agg, pe4, state], axis=-1),
                                   f"it{t}.state.conv")
            state = tg.add(upd, state)
            if train:
                per_iteration.append(
                    tg.reshape(self._mlp(state, "readout"),
                               (b, n_t, n_f, n_s, h.bits_per_symbol)))
        if train:
            return per_iteration
        llr = self._mlp(state, "readout").value.reshape(
            (b, n_t, n_f, n_s, h.bits_per_symbol))
        if not np.all(np.isfinite(llr)):
            raise ContractError("forward pass produced non-finite LLRs")
        return llr[0] if single else llr


# ------------------------------------------------------------ checkpoints

def save_checkpoint(path, receiver, extra_metadata=None):
    meta = {
        "kind": CHECKPOINT_KIND,
        "hyper": asdict(receiver.hyper),
        "pilot_scheme": PILOT_SCHEME_ID,
        "dtype": str(np.dtype(receiver.dtype)),
    }
    if extra_metadata:
        meta.update(extra_metadata)
    tg.save_tensors(path, {name: t.value for name, t in receiver.params.items()}, meta)


def load_checkpoint(path):
    tensors, meta = tg.load_tensors(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: not a neural receiver checkpoint "
                              f"(kind={meta.get('kind')!r})")
    if meta.get("pilot_scheme") != PILOT_SCHEME_ID:
        raise CheckpointError(
            f"{path}: trained for pilot scheme {meta.get('pilot_scheme')!r}, "
            f"this build uses {PILOT_SCHEME_ID!r}")
    try:
        hyper = Hyperparams(**meta["hyper"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed hyperparameter header ({exc})") from exc
    rx = NeuralReceiver.build(hyper, seed=0, dtype=np.dtype(meta.get("dtype", "float64")))
    rx.params.load_state_dict(tensors)
    return rx, meta
