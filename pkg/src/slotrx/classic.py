"""Classical receiver chain.

Per-RE least-squares channel estimation at pilot positions, linear
time/frequency interpolation, LMMSE channel smoothing from Monte-Carlo
second-order statistics, LMMSE equalization with per-layer post-equalization
statistics, breadth-first K-best detection on the real-valued decomposition,
max-log demapping from candidate lists, and an exhaustive ML oracle.

LLR convention everywhere: positive means bit 1 is more likely, matching the
sigmoid convention of the training loss.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericalError
from .grid import SlotConfig, constellation, _pam
from .channel import sample_channels

EQUALIZER_RIDGE = 1e-12
SMOOTHER_RIDGE = 1e-12
DEFAULT_KBEST_K = 16
DEFAULT_LLR_CLIP = 20.0


# ------------------------------------------------------- LS estimation

def ls_estimate(y, pattern, layer, despread=False):
    """Per-pilot-RE LS estimates for one layer.

    y: [n_f, n_s, n_rx] or [batch, n_f, n_s, n_rx]. Returns estimates aligned
    with ``pattern.positions[layer]`` (shape [..., P, n_rx]).

    With ``despread=True`` the estimates of each adjacent comb pair are
    averaged (cover despreading) and the average is assigned to both REs,
    which cancels the other layer of the CDM group when the channel is
    constant over the pair.
    """
    pos = pattern.positions[layer]
    if len(pos) == 0:
        raise ContractError(f"layer {layer} has no pilots")
    p = pattern.values[layer]
    if np.any(p == 0):
        raise ContractError("pilot values must be non-zero")
    y = np.asarray(y)
    obs = y[..., pos[:, 0], pos[:, 1], :]               # [..., P, n_rx]
    est = obs * (np.conj(p) / np.abs(p) ** 2)[:, None]
    if despread:
        lead = est.shape[:-2]
        pairs = est.reshape(lead + (len(pos) // 2, 2, est.shape[-1]))
        avg = pairs.mean(axis=-2, keepdims=True)
        est = np.broadcast_to(avg, pairs.shape).reshape(est.shape).copy()
    return est


def _interp_matrix(targets, knots):
    """Rows map knot values to target positions: linear inside, constant outside."""
    knots = np.asarray(knots, dtype=float)
    w = np.zeros((len(targets), len(knots)))
    for row, t in enumerate(targets):
        if t <= knots[0]:
            w[row, 0] = 1.0
        elif t >= knots[-1]:
            w[row, -1] = 1.0
        else:
            j = int(np.searchsorted(knots, t, side="right")) - 1
            span = knots[j + 1] - knots[j]
            w[row, j] = (knots[j + 1] - t) / span
            w[row, j + 1] = (t - knots[j]) / span
    return w


def interp_operators(pattern, layer):
    """(time, frequency) interpolation matrices for a layer's pilot lattice."""
    pos = pattern.positions[layer]
    pilot_s = np.unique(pos[:, 1])
    pilot_f = np.unique(pos[:, 0])
    wt = _interp_matrix(np.arange(pattern.n_s), pilot_s)
    wf = _interp_matrix(np.arange(pattern.n_f), pilot_f)
    return wt, wf


def interpolate_channel(pilot_est, pattern, layer):
    """Spread pilot-RE estimates over the grid -> [..., n_f, n_s, n_rx].

    Linear along frequency between the layer's comb subcarriers and along
    time between the pilot symbols, constant extension outside.
    """
    pos = pattern.positions[layer]
    pilot_s = np.unique(pos[:, 1])
    pilot_f = np.unique(pos[:, 0])
    wt, wf = interp_operators(pattern, layer)
    est = np.asarray(pilot_est)
    lead = est.shape[:-2]
    grid_est = est.reshape(lead + (len(pilot_s), len(pilot_f), est.shape[-1]))
    return np.einsum("fq,...pqr,sp->...fsr", wf, grid_est, wt)


# ------------------------------------------------ LMMSE channel smoothing

@dataclass
class ChannelEstimate:
    """Per-layer channel estimate over the full grid plus its error variance."""

    h: np.ndarray                    # [..., n_f, n_s, n_rx]
    err_var: np.ndarray | None = None  # [n_f, n_s] or None


def estimate_channel_covariance(model, cfg, n_samples, seed):
    """Monte-Carlo full-grid covariance R[(f,s),(f',s')] of one coefficient.

    Coefficients are i.i.d. across antenna pairs, so a scalar-channel run
    suffices.
    """
    scalar_cfg = SlotConfig(n_f=cfg.n_f, n_t=1, n_rx=1,
                            bits_per_symbol=cfg.bits_per_symbol, n_s=cfg.n_s)
    h = sample_channels(model, scalar_cfg, n_samples, seed)[:, :, :, 0, 0]
    v = h.reshape(n_samples, -1)
    return (v.T @ v.conj()) / n_samples


class LmmseSmoother:
    """Precomputed LMMSE map from plain per-RE pilot LS estimates to the grid.

    With ``despread=True`` the observation model averages each adjacent comb
    pair first (halving the noise), matching cover despreading.
    """

    def __init__(self, cov, pattern, layer, noise_var, despread=False):
        n_f, n_s = pattern.n_f, pattern.n_s
        g = n_f * n_s
        cov = np.asarray(cov)
        if cov.shape != (g, g):
            raise DimensionError(f"covariance shape {cov.shape} != ({g}, {g})")
        pos = pattern.positions[layer]
        flat = pos[:, 0] * n_s + pos[:, 1]
        n_pilots = len(flat)
        if despread:
            if n_pilots % 2:
                raise ContractError("despreading needs complete pilot pairs")
            a = np.zeros((n_pilots // 2, n_pilots))
            for row in range(n_pilots // 2):
                a[row, 2 * row] = 0.5
                a[row, 2 * row + 1] = 0.5
            obs_noise = noise_var / 2.0
        else:
            a = np.eye(n_pilots)
            obs_noise = noise_var
        sel = cov[np.ix_(flat, flat)]                  # [P, P]
        c_oo = a @ sel @ a.conj().T
        c_ho = cov[:, flat] @ a.conj().T               # [G, n_obs]
        ridge = SMOOTHER_RIDGE * max(1.0, float(np.mean(np.abs(np.diag(c_oo)))))
        system = c_oo + (obs_noise + ridge) * np.eye(c_oo.shape[0])
        try:
            np.linalg.cholesky(system)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("pilot covariance is not positive definite "
                                 "even after regularization") from exc
        self.weights = np.linalg.solve(system, c_ho.conj().T).conj().T  # [G, n_obs]
        err = np.real(np.diag(cov)) - np.real(
            np.einsum("go,og->g", self.weights, (a @ cov[flat, :])))
        self.err_var = np.maximum(err, 0.0).reshape(n_f, n_s)
        self._a = a
        self._shape = (n_f, n_s)

    def apply(self, pilot_est):
        """pilot_est: plain per-RE LS estimates [..., P, n_rx]."""
        obs = np.einsum("op,...pr->...or", self._a, np.asarray(pilot_est))
        full = np.einsum("go,...or->...gr", self.weights, obs)
        return full.reshape(full.shape[:-2] + self._shape + (full.shape[-1],))


def lmmse_channel_estimate(y, pattern, layer, smoother):
    """LMMSE smoothing of plain pilot LS estimates onto the full grid."""
    est = ls_estimate(y, pattern, layer, despread=False)
    return ChannelEstimate(h=smoother.apply(est), err_var=smoother.err_var)


# ------------------------------------------------------- LMMSE equalizer

@dataclass
class EqualizedSymbols:
    """LMMSE equalizer output per RE.

    ``xhat`` is the raw equalizer output, ``gains`` the per-layer effective
    channel (bias), and ``noise_var`` the residual variance of
    ``xhat/gains - x`` used for Gaussian-approximation demapping (its inverse
    is the per-layer effective SNR).
    """

    xhat: np.ndarray       # [..., n_t]
    gains: np.ndarray      # [..., n_t]
    noise_var: np.ndarray  # [..., n_t]


def lmmse_equalize(y, h, sigma2):
    """x_hat = (H^H H + sigma2 I)^-1 H^H y per RE, batched over leading axes.

    At sigma2 = 0 a documented ridge of 1e-12 keeps rank-deficient systems
    solvable (the estimator then reduces to regularized zero-forcing).
    """
    y = np.asarray(y)
    h = np.asarray(h)
    if h.shape[:-2] != y.shape[:-1] or h.shape[-2] != y.shape[-1]:
        raise DimensionError(f"channel {h.shape} does not match received {y.shape}")
    n_t = h.shape[-1]
    hh = np.swapaxes(h.conj(), -1, -2)
    a = hh @ h
    load = sigma2 if sigma2 > 0 else EQUALIZER_RIDGE
    a = a + load * np.eye(n_t)
    w = np.linalg.solve(a, hh)                        # [..., n_t, n_rx]
    xhat = np.einsum("...tr,...r->...t", w, y)
    gains_full = w @ h                                # [..., n_t, n_t]
    gains = np.einsum("...tt->...t", gains_full)
    interference = np.sum(np.abs(gains_full) ** 2, axis=-1) - np.abs(gains) ** 2
    noise = sigma2 * np.sum(np.abs(w) ** 2, axis=-1)
    denom = np.maximum(np.abs(gains) ** 2, 1e-300)
    noise_var = (interference + noise) / denom
    return EqualizedSymbols(xhat=xhat, gains=gains, noise_var=noise_var)


# ------------------------------------------------------------ demapping

def scalar_maxlog_demap(z, noise_var, bits_per_symbol, clip=DEFAULT_LLR_CLIP):
    """Per-symbol max-log LLRs for a unit-gain scalar channel z = x + n."""
    points, labels = constellation(bits_per_symbol)
    z = np.asarray(z)
    metrics = np.abs(z[..., None] - points) ** 2       # [..., M]
    nu = np.maximum(np.asarray(noise_var), 1e-300)[..., None]
    llr = np.empty(z.shape + (bits_per_symbol,))
    for i in range(bits_per_symbol):
        one = labels[:, i] == 1
        m0 = np.min(metrics[..., ~one] / nu, axis=-1)
        m1 = np.min(metrics[..., one] / nu, axis=-1)
        llr[..., i] = m0 - m1
    return np.clip(llr, -clip, clip)


def maxlog_demap(metrics, bits, sigma2, clip=DEFAULT_LLR_CLIP):
    """Max-log LLRs from a candidate list.

    metrics: [N, L] accumulated Euclidean metrics; bits: [N, L, n_t, m].
    A missing counter-hypothesis saturates at +/- clip. ``clip=None`` skips
    clipping (exhaustive lists only).
    """
    metrics = np.asarray(metrics, dtype=float)
    bits = np.asarray(bits)
    if metrics.shape[0] != bits.shape[0] or metrics.shape[1] != bits.shape[1]:
        raise DimensionError(f"metrics {metrics.shape} and bits {bits.shape} disagree")
    if metrics.shape[1] == 0:
        raise ContractError("empty candidate list")
    expanded = metrics[:, :, None, None]
    m1 = np.min(np.where(bits == 1, expanded, np.inf), axis=1)
    m0 = np.min(np.where(bits == 0, expanded, np.inf), axis=1)
    with np.errstate(invalid="ignore"):
        llr = (m0 - m1) / sigma2
    if clip is not None:
        llr = np.where(np.isposinf(m1), -clip, llr)    # no bit-1 candidate
        llr = np.where(np.isposinf(m0), clip, llr)     # no bit-0 candidate
        llr = np.clip(llr, -clip, clip)
    elif not np.all(np.isfinite(llr)):
        raise ContractError("candidate list misses hypotheses; a clip value is required")
    return llr


# ---------------------------------------------------------------- K-best

def _pam_alphabet(bits_per_symbol):
    """One real axis: (levels[A], labels[A, m/2]) in Gray labelling."""
    half = bits_per_symbol // 2
    n = 1 << half
    labels = ((np.arange(n)[:, None] >> (half - 1 - np.arange(half))) & 1).astype(np.uint8)
    return _pam(labels), labels


@dataclass
class KBestResult:
    metrics: np.ndarray    # [N, L] true Euclidean metrics ||y - Hx||^2
    bits: np.ndarray       # [N, L, n_t, m]
    hard_bits: np.ndarray  # [N, n_t, m]


def kbest_detect(y, h, k, bits_per_symbol):
    """Breadth-first K-best on the real-valued decomposition (2 n_t levels).

    y: [N, n_rx], h: [N, n_rx, n_t]. Survivor metrics include the projection
    residual so they equal true Euclidean metrics. Requires n_rx >= n_t.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    y = np.asarray(y)
    h = np.asarray(h)
    n, n_rx = y.shape
    n_t = h.shape[2]
    if h.shape != (n, n_rx, n_t):
        raise DimensionError(f"channel {h.shape} does not match received {y.shape}")
    if n_rx < n_t:
        raise ContractError(f"k-best needs n_rx >= n_t, got {n_rx} < {n_t}")
    pam, pam_bits = _pam_alphabet(bits_per_symbol)
    a = len(pam)
    d = 2 * n_t

    hr = np.concatenate([
        np.concatenate([h.real, -h.imag], axis=2),
        np.concatenate([h.imag, h.real], axis=2),
    ], axis=1)                                        # [N, 2r, 2t]
    yr = np.concatenate([y.real, y.imag], axis=1)     # [N, 2r]
    q, r = np.linalg.qr(hr)
    z = np.einsum("nij,ni->nj", q, yr)                # Q^T y
    base = np.sum(yr ** 2, axis=1) - np.sum(z ** 2, axis=1)  # projection residual

    metrics = np.maximum(base, 0.0)[:, None]          # [N, 1]
    idx = np.zeros((n, 1, 0), dtype=np.int64)         # PAM index per filled dim
    vals = np.zeros((n, 1, 0))
    for level in range(d - 1, -1, -1):
        kc = metrics.shape[1]
        if vals.shape[2]:
            b = np.einsum("nj,nkj->nk", r[:, level, level + 1:], vals)
        else:
            b = np.zeros((n, kc))
        resid = z[:, level][:, None] - b              # [N, kc]
        branch = (resid[:, :, None] - r[:, level, level][:, None, None] * pam) ** 2
        cand = (metrics[:, :, None] + branch).reshape(n, kc * a)
        keep = min(k, kc * a)
        order = np.argsort(cand, axis=1, kind="stable")[:, :keep]
        metrics = np.take_along_axis(cand, order, axis=1)
        parent = order // a
        pam_idx = order % a
        idx = np.concatenate([
            pam_idx[:, :, None],
            np.take_along_axis(idx, parent[:, :, None], axis=1),
        ], axis=2)
        vals = np.concatenate([
            pam[pam_idx][:, :, None],
            np.take_along_axis(vals, parent[:, :, None], axis=1),
        ], axis=2)

    # idx[:, :, j] now holds the PAM index of real dim j (ascending order)
    l_cnt = metrics.shape[1]
    bits = np.zeros((n, l_cnt, n_t, bits_per_symbol), dtype=np.uint8)
    for dim in range(d):
        lab = pam_bits[idx[:, :, dim]]                # [N, L, m/2]
        if dim < n_t:
            bits[:, :, dim, 0::2] = lab
        else:
            bits[:, :, dim - n_t, 1::2] = lab
    best = np.argmin(metrics, axis=1)
    hard = bits[np.arange(n), best]
    return KBestResult(metrics=metrics, bits=bits, hard_bits=hard)


# -------------------------------------------------------------- ML oracle

ML_ORACLE_LIMIT = 1 << 16


@dataclass
class MlResult:
    llr: np.ndarray        # [N, n_t, m], exact max-log, unclipped
    hard_bits: np.ndarray  # [N, n_t, m]
    metrics: np.ndarray    # [N, M^n_t]
    bits: np.ndarray       # [M^n_t, n_t, m] hypothesis labels


def ml_oracle(y, h, sigma2, bits_per_symbol):
    """Exhaustive enumeration: exact max-log LLRs and the ML hard decision.

    y: [N, n_rx], h: [N, n_rx, n_t]. Guarded to |constellation|^n_t <= 2^16.
    """
    y = np.asarray(y)
    h = np.asarray(h)
    n_t = h.shape[2]
    points, labels = constellation(bits_per_symbol)
    m_const = len(points)
    n_hyp = m_const ** n_t
    if n_hyp > ML_ORACLE_LIMIT:
        raise ContractError(
            f"{n_hyp} hypotheses exceed the ML oracle guard of {ML_ORACLE_LIMIT}")
    combos = np.stack(np.meshgrid(*([np.arange(m_const)] * n_t), indexing="ij"),
                      axis=-1).reshape(n_hyp, n_t)
    xvec = points[combos]                               # [n_hyp, n_t]
    bits = labels[combos]                               # [n_hyp, n_t, m]
    pred = np.einsum("nrt,ct->ncr", h, xvec)
    metrics = np.sum(np.abs(y[:, None, :] - pred) ** 2, axis=2)  # [N, n_hyp]
    llr = np.empty((y.shape[0], n_t, bits_per_symbol))
    for t in range(n_t):
        for i in range(bits_per_symbol):
            one = bits[:, t, i] == 1
            m0 = metrics[:, ~one].min(axis=1)
            m1 = metrics[:, one].min(axis=1)
            llr[:, t, i] = (m0 - m1) / sigma2
    hard = bits[np.argmin(metrics, axis=1)]
    return MlResult(llr=llr, hard_bits=hard, metrics=metrics, bits=bits)
