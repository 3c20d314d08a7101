"""Loss, backpropagation through time, Adam, and the training loop.

The network trains on sequences of frames. Each step draws a batch of
random contiguous frame sequences, runs the full forward pass with cached
activations, backpropagates the masked band loss plus a weighted VAD
cross-entropy, clips the global gradient norm, and applies one Adam step.

The band loss treats -1 targets as sentinels for bands with no usable
evidence: they are excluded from every term and provably contribute zero
gradient. All heavy math vectorizes over (batch, time); only the GRU
recurrences run a per-step python loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from rnx import neural
from rnx.features import EXTENDED_DIM, REFERENCE_DIM, FeatureStats, compute_stats

LOG_FLOOR = 1e-7
# below this the gamma-power branch treats the prediction as constant
POWER_FLOOR = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 120
    steps_per_epoch: int = 8
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    sequence_len: int = 500
    batch_sequences: int = 32
    grad_clip_norm: float = 5.0
    gamma: float = 0.5
    vad_loss_weight: float = 0.5
    seed: int = 0


# ---------------------------------------------------------------------------
# loss


def _mask_loss_terms(m, m_hat, gamma):
    """Per-frame band loss and its gradient w.r.t. the predicted mask.

    Shapes: m and m_hat are (..., N); returns ((...,), (..., N)).
    Sentinel targets (m < 0) are masked out of both sums. The log argument
    is clamped to [LOG_FLOOR, 1], which keeps the loss finite everywhere
    and exactly zero for a perfect all-ones prediction.
    """
    m = np.asarray(m)
    m_hat = np.asarray(m_hat)
    n_bands = m.shape[-1]
    valid = m >= 0
    ms = np.where(valid, m, 0.0)

    m_log = np.log(np.clip(m_hat, LOG_FLOOR, 1.0))
    mp = np.maximum(m_hat, POWER_FLOOR)
    diff = ms - m_hat
    pow_gap = mp**gamma - ms**gamma

    first = 10.0 * diff**4 + pow_gap**2 - 0.01 * ms * m_log
    second_w = np.abs(ms - 0.5) * ms  # second-sum weight, halves cancel the 2x
    per_band = (10.0 / n_bands) * first - (1.0 / n_bands) * second_w * m_log
    loss = np.sum(np.where(valid, per_band, 0.0), axis=-1)

    dlog = np.where(m_hat > LOG_FLOOR, 1.0 / np.clip(m_hat, LOG_FLOOR, None), 0.0)
    dpow = np.where(m_hat > POWER_FLOOR, gamma * mp ** (gamma - 1.0), 0.0)
    dfirst = -40.0 * diff**3 + 2.0 * pow_gap * dpow - 0.01 * ms * dlog
    grad = (10.0 / n_bands) * dfirst - (1.0 / n_bands) * second_w * dlog
    return loss, np.where(valid, grad, 0.0)


def loss(m: np.ndarray, m_hat: np.ndarray, gamma: float) -> float:
    """Band loss for one frame of targets and predictions."""
    value, _ = _mask_loss_terms(
        np.asarray(m, dtype=np.float64), np.asarray(m_hat, dtype=np.float64), gamma
    )
    return float(value)


def _bce_terms(target, pred):
    """Binary cross-entropy and d/dpred, with the prediction clamped."""
    target = np.asarray(target)
    pred = np.asarray(pred)
    pc = np.clip(pred, LOG_FLOOR, 1.0 - LOG_FLOOR)
    value = -(target * np.log(pc) + (1.0 - target) * np.log1p(-pc))
    inside = (pred > LOG_FLOOR) & (pred < 1.0 - LOG_FLOOR)
    grad = np.where(inside, (pc - target) / (pc * (1.0 - pc)), 0.0)
    return value, grad


def binary_cross_entropy(target: float, pred: float) -> float:
    value, _ = _bce_terms(np.float64(target), np.float64(pred))
    return float(value)


def total_loss(frames_loss: float, vad_pred: float, vad_target: float, w_vad: float) -> float:
    """Band loss plus weighted VAD cross-entropy for one frame."""
    return float(frames_loss) + w_vad * binary_cross_entropy(vad_target, vad_pred)


# ---------------------------------------------------------------------------
# forward / backward engine


def _act_forward(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    raise ValueError(f"unsupported recurrent activation {name!r}")


@dataclass
class _GruCache:
    x: np.ndarray  # (B, T, in)
    h: np.ndarray  # (B, T+1, out), h[:, 0] is the initial state
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray

    @property
    def out(self):
        return self.h[:, 1:]


def _gru_scan(layer, x):
    b, t, _ = x.shape
    u = layer.out_dim
    dtype = x.dtype
    gx = x @ layer.weights.T + layer.bias
    u_zr = layer.recurrent[: 2 * u]
    u_c = layer.recurrent[2 * u :]
    h = np.zeros((b, t + 1, u), dtype=dtype)
    z_all = np.empty((b, t, u), dtype=dtype)
    r_all = np.empty((b, t, u), dtype=dtype)
    c_all = np.empty((b, t, u), dtype=dtype)
    h_t = h[:, 0]
    for i in range(t):
        zr = expit(gx[:, i, : 2 * u] + h_t @ u_zr.T)
        z = zr[:, :u]
        r = zr[:, u:]
        c = _act_forward(layer.activation, gx[:, i, 2 * u :] + (r * h_t) @ u_c.T)
        h_t = z * h_t + (1.0 - z) * c
        z_all[:, i] = z
        r_all[:, i] = r
        c_all[:, i] = c
        h[:, i + 1] = h_t
    return _GruCache(x, h, z_all, r_all, c_all)


@dataclass
class _ForwardCache:
    feats: np.ndarray
    dense: np.ndarray
    vad_gru: _GruCache
    noise_gru: _GruCache
    denoise_gru: _GruCache
    mask: np.ndarray  # (B, T, 22)
    vad: np.ndarray  # (B, T)


def _forward(model: neural.NetworkModel, feats: np.ndarray) -> _ForwardCache:
    dense = np.tanh(feats @ model.dense_in.weights.T + model.dense_in.bias)
    g1 = _gru_scan(model.vad_gru, dense)
    g2 = _gru_scan(model.noise_gru, np.concatenate((dense, g1.out, feats), axis=2))
    g3 = _gru_scan(model.denoise_gru, np.concatenate((g1.out, g2.out, feats), axis=2))
    mask = expit(g3.out @ model.gains_out.weights.T + model.gains_out.bias)
    vad = expit(g1.out @ model.vad_out.weights.T + model.vad_out.bias)[..., 0]
    return _ForwardCache(feats, dense, g1, g2, g3, mask, vad)


def _promote(feats, gains, vads):
    feats = np.asarray(feats)
    gains = np.asarray(gains)
    vads = np.asarray(vads)
    if feats.ndim == 2:
        feats, gains, vads = feats[None], gains[None], vads[None]
    return feats, gains, vads


def sequence_loss(model, feats, gains, vads, gamma=0.5, vad_weight=0.5) -> float:
    """Mean per-frame total loss over (batch of) sequences; forward only."""
    feats, gains, vads = _promote(feats, gains, vads)
    fw = _forward(model, feats)
    band, _ = _mask_loss_terms(gains, fw.mask, gamma)
    bce, _ = _bce_terms(vads, fw.vad)
    return float(np.mean(band + vad_weight * bce))


def _gru_backward(layer, cache: _GruCache, delta_out: np.ndarray):
    """Backprop one GRU over its scan; returns (dW, dU, db, dX)."""
    b, t, u = delta_out.shape
    u_z = layer.recurrent[:u]
    u_r = layer.recurrent[u : 2 * u]
    u_c = layer.recurrent[2 * u :]
    u_zr = layer.recurrent[: 2 * u]
    d_az = np.empty_like(cache.z)
    d_ar = np.empty_like(cache.z)
    d_ac = np.empty_like(cache.z)
    carry = np.zeros((b, u), dtype=delta_out.dtype)
    relu = layer.activation == "relu"
    for i in range(t - 1, -1, -1):
        delta = delta_out[:, i] + carry
        h_prev = cache.h[:, i]
        z = cache.z[:, i]
        r = cache.r[:, i]
        c = cache.c[:, i]
        if relu:
            dac = delta * (1.0 - z) * (c > 0)
        else:
            dac = delta * (1.0 - z) * (1.0 - c * c)
        ds = dac @ u_c
        daz = delta * (h_prev - c) * z * (1.0 - z)
        dar = ds * h_prev * r * (1.0 - r)
        carry = delta * z + ds * r + np.concatenate((daz, dar), axis=1) @ u_zr
        d_az[:, i] = daz
        d_ar[:, i] = dar
        d_ac[:, i] = dac
    gates = np.concatenate((d_az, d_ar, d_ac), axis=2).reshape(b * t, 3 * u)
    x_flat = cache.x.reshape(b * t, -1)
    h_prev_flat = cache.h[:, :t].reshape(b * t, u)
    s_flat = (cache.r * cache.h[:, :t]).reshape(b * t, u)
    d_w = gates.T @ x_flat
    d_b = gates.sum(axis=0)
    d_u = np.empty_like(layer.recurrent)
    d_u[:u] = d_az.reshape(b * t, u).T @ h_prev_flat
    d_u[u : 2 * u] = d_ar.reshape(b * t, u).T @ h_prev_flat
    d_u[2 * u :] = d_ac.reshape(b * t, u).T @ s_flat
    d_x = (gates @ layer.weights).reshape(b, t, -1)
    return d_w, d_u, d_b, d_x


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place to the global norm cap; returns the raw norm."""
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if max_norm is not None and total > max_norm > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def backward_tbptt(
    model: neural.NetworkModel,
    feats: np.ndarray,
    gains: np.ndarray,
    vads: np.ndarray,
    gamma: float = 0.5,
    vad_weight: float = 0.5,
    clip_norm: float | None = 5.0,
):
    """Exact gradients of the mean total loss over the given sequences.

    feats is (B, T, F) already standardized, gains (B, T, 22) with -1
    sentinels, vads (B, T). Returns (grads keyed like model.parameters(),
    mean loss). Gradients are clipped to the global norm unless clip_norm
    is None. Hidden states start at zero for every sequence.
    """
    feats, gains, vads = _promote(feats, gains, vads)
    b, t, _ = feats.shape
    if feats.shape[2] != model.feature_dim:
        raise ValueError(f"feature width {feats.shape[2]} != model feature_dim {model.feature_dim}")
    fw = _forward(model, feats)

    band, d_mask = _mask_loss_terms(gains, fw.mask, gamma)
    bce, d_vad = _bce_terms(vads, fw.vad)
    mean_loss = float(np.mean(band + vad_weight * bce))
    scale = 1.0 / (b * t)
    d_mask = d_mask * scale
    d_vad = d_vad * (vad_weight * scale)

    n1 = model.dense_in.out_dim
    n2 = model.vad_gru.out_dim
    n3 = model.noise_gru.out_dim

    grads: dict[str, np.ndarray] = {}

    da_g = d_mask * fw.mask * (1.0 - fw.mask)
    h3_flat = fw.denoise_gru.out.reshape(b * t, -1)
    grads["gains_out.W"] = da_g.reshape(b * t, -1).T @ h3_flat
    grads["gains_out.b"] = da_g.sum(axis=(0, 1))
    d_h3 = da_g @ model.gains_out.weights

    da_v = (d_vad * fw.vad * (1.0 - fw.vad))[..., None]
    h1_flat = fw.vad_gru.out.reshape(b * t, -1)
    grads["vad_out.W"] = da_v.reshape(b * t, 1).T @ h1_flat
    grads["vad_out.b"] = da_v.sum(axis=(0, 1))
    d_h1 = da_v @ model.vad_out.weights

    d_w, d_u, d_b, d_x3 = _gru_backward(model.denoise_gru, fw.denoise_gru, d_h3)
    grads["denoise_gru.W"], grads["denoise_gru.U"], grads["denoise_gru.b"] = d_w, d_u, d_b
    d_h1 = d_h1 + d_x3[..., :n2]
    d_h2 = d_x3[..., n2 : n2 + n3]

    d_w, d_u, d_b, d_x2 = _gru_backward(model.noise_gru, fw.noise_gru, d_h2)
    grads["noise_gru.W"], grads["noise_gru.U"], grads["noise_gru.b"] = d_w, d_u, d_b
    d_dense = d_x2[..., :n1]
    d_h1 = d_h1 + d_x2[..., n1 : n1 + n2]

    d_w, d_u, d_b, d_x1 = _gru_backward(model.vad_gru, fw.vad_gru, d_h1)
    grads["vad_gru.W"], grads["vad_gru.U"], grads["vad_gru.b"] = d_w, d_u, d_b
    d_dense = d_dense + d_x1

    da_d = d_dense * (1.0 - fw.dense * fw.dense)
    grads["dense_in.W"] = da_d.reshape(b * t, -1).T @ feats.reshape(b * t, -1)
    grads["dense_in.b"] = da_d.sum(axis=(0, 1))

    if not np.isfinite(mean_loss):
        raise RuntimeError("non-finite training loss; aborting step")
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient in {key}; aborting step")
    if clip_norm is not None:
        clip_gradients(grads, clip_norm)
    return grads, mean_loss


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_update(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step, updating params in place."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for key, p in params.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckResult:
    instances: int
    checked: int
    failures: int
    max_rel_err: float
    max_abs_err: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


def gradient_check(
    seed: int = 0,
    instances: int = 20,
    feature_dim: int = EXTENDED_DIM,
    sequence_len: int = 5,
    widths=(4, 3, 5, 6),
    step: float = 1e-4,
    rel_tol: float = 1e-4,
    abs_tol: float = 1e-7,
) -> GradCheckResult:
    """Verify every analytic gradient against central finite differences.

    Uses reduced-width models with the standard wiring so the whole
    parameter set can be swept. A coordinate passes when the difference is
    within abs_tol or within rel_tol of the larger magnitude.
    """
    rng = np.random.default_rng(seed)
    checked = failures = 0
    max_rel = max_abs = 0.0
    for _ in range(instances):
        model = neural.build_model(feature_dim, widths, seed=rng)
        feats = rng.normal(size=(1, sequence_len, feature_dim))
        gains = rng.uniform(0.0, 1.0, size=(1, sequence_len, neural.NUM_GAINS))
        gains[rng.random(gains.shape) < 0.1] = -1.0
        vads = rng.integers(0, 2, size=(1, sequence_len)).astype(np.float64)

        grads, _ = backward_tbptt(model, feats, gains, vads, clip_norm=None)
        params = model.parameters()
        for key, p in params.items():
            analytic = grads[key]
            flat = p.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + step
                up = sequence_loss(model, feats, gains, vads)
                flat[idx] = orig - step
                down = sequence_loss(model, feats, gains, vads)
                flat[idx] = orig
                fd = (up - down) / (2.0 * step)
                a = analytic.reshape(-1)[idx]
                err = abs(a - fd)
                denom = max(abs(a), abs(fd))
                checked += 1
                max_abs = max(max_abs, err)
                if denom > 0:
                    rel = err / denom
                    if err > abs_tol:
                        max_rel = max(max_rel, rel)
                if err > abs_tol and err > rel_tol * denom:
                    failures += 1
    return GradCheckResult(instances, checked, failures, max_rel, max_abs)


# ---------------------------------------------------------------------------
# the training loop


def _set_precision(model: neural.NetworkModel, dtype):
    for layer in model.layers():
        layer.weights = layer.weights.astype(dtype)
        if layer.recurrent is not None:
            layer.recurrent = layer.recurrent.astype(dtype)
        layer.bias = layer.bias.astype(dtype)


def train(
    data,
    cfg: TrainConfig,
    mode: str = "extended",
    precision=np.float32,
    on_step=None,
) -> neural.NetworkModel:
    """Train a fresh model on a feature dataset.

    `data` carries feature_dim, features (raw), gains, and vad arrays (see
    rnx.dataset.FeatureDataset). Extended-feature statistics are computed
    from the whole dataset, frozen into the model, and applied before
    training. Arithmetic runs in float32 by default (the model file stores
    float32 anyway); pass np.float64 for full-precision runs. Fixed seeds
    give bit-identical results.
    """
    if mode not in ("reference", "extended"):
        raise ValueError(f"unknown mode {mode!r}")
    want_dim = EXTENDED_DIM if mode == "extended" else REFERENCE_DIM
    if data.feature_dim != want_dim:
        raise ValueError(
            f"dataset feature_dim {data.feature_dim} does not match {mode} mode ({want_dim})"
        )
    feats = np.asarray(data.features, dtype=np.float64)
    n = feats.shape[0]
    if n == 0:
        raise ValueError("empty dataset")

    model = neural.init_weights(cfg.seed, want_dim)
    if mode == "extended":
        stats = compute_stats(feats[:, REFERENCE_DIM:])
        # freeze at file precision so training and later inference agree
        stats = FeatureStats(
            stats.mean.astype(np.float32).astype(np.float64),
            stats.std.astype(np.float32).astype(np.float64),
        )
        model.stats = stats
        feats = feats.copy()
        feats[:, REFERENCE_DIM:] = (feats[:, REFERENCE_DIM:] - stats.mean) / stats.std

    total_steps = cfg.epochs * cfg.steps_per_epoch
    if total_steps > 0:
        if n < cfg.sequence_len:
            raise ValueError(f"dataset has {n} frames, smaller than one {cfg.sequence_len}-frame sequence")
        _set_precision(model, precision)
        x_all = feats.astype(precision)
        g_all = np.asarray(data.gains, dtype=precision)
        v_all = np.asarray(data.vad, dtype=precision)
        params = model.parameters()
        adam = AdamState.init_like(params)
        draw = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1,)))
        offsets = np.arange(cfg.sequence_len)
        for epoch in range(1, cfg.epochs + 1):
            for step in range(1, cfg.steps_per_epoch + 1):
                starts = draw.integers(0, n - cfg.sequence_len + 1, size=cfg.batch_sequences)
                rows = starts[:, None] + offsets
                grads, step_loss = backward_tbptt(
                    model, x_all[rows], g_all[rows], v_all[rows],
                    gamma=cfg.gamma, vad_weight=cfg.vad_loss_weight,
                    clip_norm=cfg.grad_clip_norm,
                )
                adam_update(
                    params, grads, adam, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps
                )
                if on_step is not None:
                    on_step(epoch, step, step_loss)
        _set_precision(model, np.float64)
    return model
