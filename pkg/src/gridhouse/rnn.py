"""Recurrent encoder-decoder predictor for zone temperatures and power.

An LSTM encoder consumes a window of (setpoints, weather, temperatures,
power) samples to build a context state; an LSTM decoder driven by future
setpoints and weather rolls that state forward; a small perceptron head
maps each decoder state to the eight zone temperatures and thermal
electric power. Everything is plain numpy: forward passes, reverse-mode
training gradients, and forward-mode input jacobians for control.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

N_EXOGENOUS = 12
N_TEMPS = 8
N_POWER = 1
N_ENCODER_FEATURES = N_EXOGENOUS + N_TEMPS + N_POWER
N_OUTPUTS = N_TEMPS + N_POWER

_FORMAT_VERSION = 1

_PARAM_NAMES = ("enc_wx", "enc_wh", "enc_b", "dec_wx", "dec_wh", "dec_b")


class TrainingDivergence(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings for minibatch training."""

    batch_size: int = 200
    learning_rate: float = 1e-4
    clip_norm: float = 1.0
    decode_lengths: tuple[int, ...] = (2, 4, 6, 8, 10, 16, 24, 32, 64, 88, 144)
    epochs: int = 20
    seed: int = 0
    steps_per_epoch: int | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be positive")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning rate and clip norm must be positive")
        if not self.decode_lengths or any(t < 1 for t in self.decode_lengths):
            raise ValueError("decode lengths must be positive integers")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps per epoch must be positive")


@dataclass(frozen=True)
class EncoderDecoderModel:
    """LSTM encoder-decoder with a perceptron output head.

    Parameters live in `params`; gate blocks are stacked [input, forget,
    cell, output] along the first axis of each weight matrix. `in_mean`
    and `in_scale` normalize the 21 encoder features; the last 9 entries
    double as the output statistics.
    """

    params: dict = field(repr=False)
    hidden_size: int
    n_encoder: int
    mlp_hidden: tuple[int, ...]
    in_mean: np.ndarray
    in_scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "in_mean",
                           np.ascontiguousarray(self.in_mean, dtype=float))
        object.__setattr__(self, "in_scale",
                           np.ascontiguousarray(self.in_scale, dtype=float))
        if self.in_mean.shape != (N_ENCODER_FEATURES,) \
                or self.in_scale.shape != (N_ENCODER_FEATURES,):
            raise ValueError("normalization statistics must cover all features")
        if np.any(self.in_scale <= 0):
            raise ValueError("feature scales must be positive")
        p = self.hidden_size
        expected = {
            "enc_wx": (4 * p, N_ENCODER_FEATURES), "enc_wh": (4 * p, p),
            "enc_b": (4 * p,),
            "dec_wx": (4 * p, N_EXOGENOUS), "dec_wh": (4 * p, p),
            "dec_b": (4 * p,),
        }
        widths = [p, *self.mlp_hidden, N_OUTPUTS]
        for li in range(len(widths) - 1):
            expected[f"mlp_w{li}"] = (widths[li + 1], widths[li])
            expected[f"mlp_b{li}"] = (widths[li + 1],)
        if set(self.params) != set(expected):
            raise ValueError("parameter set does not match architecture")
        for name, shape in expected.items():
            arr = np.ascontiguousarray(self.params[name], dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            self.params[name] = arr

    @property
    def out_mean(self) -> np.ndarray:
        return self.in_mean[N_EXOGENOUS:]

    @property
    def out_scale(self) -> np.ndarray:
        return self.in_scale[N_EXOGENOUS:]

    def normalize(self, w: np.ndarray) -> np.ndarray:
        return (w - self.in_mean) / self.in_scale

    def denormalize(self, w: np.ndarray) -> np.ndarray:
        return w * self.in_scale + self.in_mean


def init_encdec(hidden_size: int = 64, n_encoder: int = 48,
                mlp_hidden: tuple[int, ...] = (64, 32),
                seed: int = 0) -> EncoderDecoderModel:
    """Glorot-uniform weights, zero biases except forget gate at 1."""
    if hidden_size < 1 or n_encoder < 1:
        raise ValueError("hidden size and encoder length must be positive")
    if not mlp_hidden or any(h < 1 for h in mlp_hidden):
        raise ValueError("perceptron hidden sizes must be positive")
    rng = np.random.default_rng(seed)
    p = hidden_size

    def glorot(rows, cols):
        lim = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-lim, lim, size=(rows, cols))

    params = {}
    for prefix, n_in in (("enc", N_ENCODER_FEATURES), ("dec", N_EXOGENOUS)):
        params[f"{prefix}_wx"] = glorot(4 * p, n_in)
        params[f"{prefix}_wh"] = glorot(4 * p, p)
        bias = np.zeros(4 * p)
        bias[p:2 * p] = 1.0
        params[f"{prefix}_b"] = bias
    widths = [p, *mlp_hidden, N_OUTPUTS]
    for li in range(len(widths) - 1):
        params[f"mlp_w{li}"] = glorot(widths[li + 1], widths[li])
        params[f"mlp_b{li}"] = np.zeros(widths[li + 1])
    return EncoderDecoderModel(
        params=params, hidden_size=p, n_encoder=n_encoder,
        mlp_hidden=tuple(mlp_hidden),
        in_mean=np.zeros(N_ENCODER_FEATURES),
        in_scale=np.ones(N_ENCODER_FEATURES))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _cell_forward(x, h, c, wx, wh, b, p):
    gates = x @ wx.T + h @ wh.T + b
    i = _sigmoid(gates[:, :p])
    f = _sigmoid(gates[:, p:2 * p])
    g = np.tanh(gates[:, 2 * p:3 * p])
    o = _sigmoid(gates[:, 3 * p:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    cache = (x, h, c, i, f, g, o, tc)
    return h_new, c_new, cache


def _cell_backward(dh, dc, cache, wx, wh, grads, prefix):
    x, h_prev, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    df = dc * c_prev
    di = dc * g
    dg = dc * i
    dc_prev = dc * f
    dgates = np.concatenate([
        di * i * (1.0 - i), df * f * (1.0 - f),
        dg * (1.0 - g * g), do * o * (1.0 - o)], axis=1)
    grads[f"{prefix}_wx"] += dgates.T @ x
    grads[f"{prefix}_wh"] += dgates.T @ h_prev
    grads[f"{prefix}_b"] += dgates.sum(axis=0)
    dh_prev = dgates @ wh
    return dh_prev, dc_prev


def _head_forward(h, params, n_layers):
    acts = [h]
    a = h
    for li in range(n_layers - 1):
        a = np.tanh(a @ params[f"mlp_w{li}"].T + params[f"mlp_b{li}"])
        acts.append(a)
    last = n_layers - 1
    out = a @ params[f"mlp_w{last}"].T + params[f"mlp_b{last}"]
    return out, acts


def _head_backward(dout, acts, params, n_layers, grads):
    last = n_layers - 1
    grads[f"mlp_w{last}"] += dout.T @ acts[-1]
    grads[f"mlp_b{last}"] += dout.sum(axis=0)
    da = dout @ params[f"mlp_w{last}"]
    for li in range(n_layers - 2, -1, -1):
        dz = da * (1.0 - acts[li + 1] * acts[li + 1])
        grads[f"mlp_w{li}"] += dz.T @ acts[li]
        grads[f"mlp_b{li}"] += dz.sum(axis=0)
        da = dz @ params[f"mlp_w{li}"]
    return da


def _n_head_layers(model: EncoderDecoderModel) -> int:
    return len(model.mlp_hidden) + 1


def _encode_batch(model, w_norm):
    """w_norm: (batch, n, 21) normalized encoder windows."""
    p = model.hidden_size
    bsz = w_norm.shape[0]
    h = np.zeros((bsz, p))
    c = np.zeros((bsz, p))
    caches = []
    for t in range(w_norm.shape[1]):
        h, c, cache = _cell_forward(w_norm[:, t], h, c, model.params["enc_wx"],
                                    model.params["enc_wh"],
                                    model.params["enc_b"], p)
        caches.append(cache)
    return h, c, caches


def _decode_batch(model, h, c, u_norm):
    """u_norm: (batch, horizon, 12); returns normalized head outputs."""
    p = model.hidden_size
    n_layers = _n_head_layers(model)
    outs = []
    cell_caches = []
    head_caches = []
    for t in range(u_norm.shape[1]):
        h, c, cache = _cell_forward(u_norm[:, t], h, c, model.params["dec_wx"],
                                    model.params["dec_wh"],
                                    model.params["dec_b"], p)
        out, acts = _head_forward(h, model.params, n_layers)
        outs.append(out)
        cell_caches.append(cache)
        head_caches.append(acts)
    return np.stack(outs, axis=1), cell_caches, head_caches


def encode(model: EncoderDecoderModel, history: np.ndarray):
    """Context state from a raw window of (u, y, z) rows of length n."""
    w = np.asarray(history, dtype=float)
    if w.shape != (model.n_encoder, N_ENCODER_FEATURES):
        raise ValueError(
            f"history must have shape ({model.n_encoder}, {N_ENCODER_FEATURES})")
    h, c, _ = _encode_batch(model, model.normalize(w)[None])
    return c[0], h[0]


def decode(model: EncoderDecoderModel, c: np.ndarray, h: np.ndarray,
           u_seq: np.ndarray):
    """Temperatures and power over a raw future input sequence."""
    u = np.atleast_2d(np.asarray(u_seq, dtype=float))
    if u.shape[0] < 1 or u.shape[1] != N_EXOGENOUS:
        raise ValueError("u_seq must be a nonempty (horizon, 12) array")
    u_norm = (u - model.in_mean[:N_EXOGENOUS]) / model.in_scale[:N_EXOGENOUS]
    out_norm, _, _ = _decode_batch(model, h[None].copy(), c[None].copy(),
                                   u_norm[None])
    out = out_norm[0] * model.out_scale + model.out_mean
    return out[:, :N_TEMPS], out[:, N_TEMPS]


def loss_and_gradients(model: EncoderDecoderModel, enc_norm: np.ndarray,
                       dec_norm: np.ndarray, target_norm: np.ndarray):
    """MSE loss and exact parameter gradients on a normalized batch.

    enc_norm (B, n, 21), dec_norm (B, T, 12), target_norm (B, T, 9).
    Reverse-mode accumulation runs back through the decoder, the state
    handoff, and the encoder.
    """
    p = model.hidden_size
    n_layers = _n_head_layers(model)
    params = model.params
    h, c, enc_caches = _encode_batch(model, enc_norm)
    out, cell_caches, head_caches = _decode_batch(model, h, c, dec_norm)
    err = out - target_norm
    loss = float(np.mean(err * err))

    grads = {name: np.zeros_like(arr) for name, arr in params.items()}
    dh = np.zeros_like(h)
    dc = np.zeros_like(c)
    dout_all = (2.0 / err.size) * err
    for t in range(dec_norm.shape[1] - 1, -1, -1):
        dh = dh + _head_backward(dout_all[:, t], head_caches[t], params,
                                 n_layers, grads)
        dh, dc = _cell_backward(dh, dc, cell_caches[t], params["dec_wx"],
                                params["dec_wh"], grads, "dec")
    for t in range(enc_norm.shape[1] - 1, -1, -1):
        dh, dc = _cell_backward(dh, dc, enc_caches[t], params["enc_wx"],
                                params["enc_wh"], grads, "enc")
    return loss, grads


def clip_gradients(grads: dict, max_norm: float):
    """Scale gradients to a global norm cap; returns (grads, norm after)."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        grads = {name: g * factor for name, g in grads.items()}
        return grads, max_norm
    return grads, total


def train(model: EncoderDecoderModel, inputs: np.ndarray, temps: np.ndarray,
          power: np.ndarray, cfg: TrainConfig):
    """Minibatch Adam over random windows; returns (model, loss history).

    Normalization statistics are recomputed from this dataset and baked
    into the returned model. Each iteration draws one decode length
    uniformly from the configured set.
    """
    u = np.asarray(inputs, dtype=float)
    y = np.asarray(temps, dtype=float)
    z = np.asarray(power, dtype=float).reshape(-1, 1)
    if u.ndim != 2 or u.shape[1] != N_EXOGENOUS or y.shape != (len(u), N_TEMPS) \
            or len(z) != len(u):
        raise ValueError("dataset arrays are inconsistent")
    w = np.hstack([u, y, z])
    max_len = max(cfg.decode_lengths)
    if len(w) < model.n_encoder + max_len + 1:
        raise ValueError("dataset shorter than encoder window plus decode range")

    mean = w.mean(axis=0)
    scale = np.maximum(w.std(axis=0), 1e-6)
    w_norm = (w - mean) / scale

    params = {name: arr.copy() for name, arr in model.params.items()}
    work = replace(model, params=params, in_mean=mean, in_scale=scale)

    adam_m = {name: np.zeros_like(arr) for name, arr in params.items()}
    adam_v = {name: np.zeros_like(arr) for name, arr in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-7
    rng = np.random.default_rng(cfg.seed)
    steps = cfg.steps_per_epoch or max(1, len(w) // cfg.batch_size)
    n_enc = model.n_encoder
    offsets_enc = np.arange(n_enc)
    history = []
    it = 0
    for _ in range(cfg.epochs):
        epoch_losses = []
        for _ in range(steps):
            horizon = int(rng.choice(cfg.decode_lengths))
            starts = rng.integers(0, len(w) - n_enc - horizon + 1,
                                  size=cfg.batch_size)
            enc_idx = starts[:, None] + offsets_enc
            dec_idx = starts[:, None] + n_enc + np.arange(horizon)
            enc_batch = w_norm[enc_idx]
            dec_batch = w_norm[dec_idx][:, :, :N_EXOGENOUS]
            target = w_norm[dec_idx][:, :, N_EXOGENOUS:]
            loss, grads = loss_and_gradients(work, enc_batch, dec_batch, target)
            if not np.isfinite(loss):
                raise TrainingDivergence(
                    f"loss became non-finite at iteration {it}")
            grads, _ = clip_gradients(grads, cfg.clip_norm)
            it += 1
            bc1 = 1.0 - beta1 ** it
            bc2 = 1.0 - beta2 ** it
            for name, g in grads.items():
                adam_m[name] = beta1 * adam_m[name] + (1 - beta1) * g
                adam_v[name] = beta2 * adam_v[name] + (1 - beta2) * g * g
                step_dir = (adam_m[name] / bc1) / (np.sqrt(adam_v[name] / bc2) + eps)
                params[name] -= cfg.learning_rate * step_dir
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))
    done = replace(work, params={name: arr.copy() for name, arr in params.items()})
    return done, history


def io_jacobian(model: EncoderDecoderModel, c: np.ndarray, h: np.ndarray,
                u_seq: np.ndarray, wrt: np.ndarray | None = None):
    """Decoded outputs plus exact jacobians w.r.t. selected input channels.

    Forward-mode tangents, one direction per (future step, channel) pair,
    propagated together through the decoder. Returns raw-unit
    (y_pred (T, 8), z_pred (T,), jac_y (T, 8, T, n_c), jac_z (T, T, n_c));
    entries for input steps at or after the output step being differenced
    only appear when causally allowed, later ones are exactly zero.
    """
    u = np.atleast_2d(np.asarray(u_seq, dtype=float))
    horizon = u.shape[0]
    wrt = np.arange(N_EXOGENOUS) if wrt is None else np.asarray(wrt, dtype=int)
    n_c = len(wrt)
    p = model.hidden_size
    params = model.params
    n_layers = _n_head_layers(model)
    u_scale = model.in_scale[:N_EXOGENOUS]
    u_norm = (u - model.in_mean[:N_EXOGENOUS]) / u_scale

    n_dirs = horizon * n_c
    hh = np.asarray(h, dtype=float)[None]
    cc = np.asarray(c, dtype=float)[None]
    dh = np.zeros((n_dirs, p))
    dc = np.zeros((n_dirs, p))
    outs = np.empty((horizon, N_OUTPUTS))
    jac = np.zeros((horizon, N_OUTPUTS, horizon, n_c))
    for t in range(horizon):
        x = u_norm[t][None]
        gates = (x @ params["dec_wx"].T + hh @ params["dec_wh"].T
                 + params["dec_b"])
        i = _sigmoid(gates[:, :p])
        f = _sigmoid(gates[:, p:2 * p])
        g = np.tanh(gates[:, 2 * p:3 * p])
        o = _sigmoid(gates[:, 3 * p:])
        c_new = f * cc + i * g
        tc = np.tanh(c_new)
        h_new = o * tc

        # tangent of the gate preactivation: recurrent part for every
        # direction, plus the input injection for this step's directions
        dgates = dh @ params["dec_wh"].T
        rows = slice(t * n_c, (t + 1) * n_c)
        dgates[rows] += params["dec_wx"].T[wrt] / u_scale[wrt][:, None]
        di = i * (1 - i) * dgates[:, :p]
        df = f * (1 - f) * dgates[:, p:2 * p]
        dg = (1 - g * g) * dgates[:, 2 * p:3 * p]
        do = o * (1 - o) * dgates[:, 3 * p:]
        dc = df * cc + f * dc + di * g + i * dg
        dh = do * tc + o * (1 - tc * tc) * dc

        a = h_new
        da = dh
        for li in range(n_layers - 1):
            zpre = a @ params[f"mlp_w{li}"].T + params[f"mlp_b{li}"]
            a = np.tanh(zpre)
            da = (1 - a * a) * (da @ params[f"mlp_w{li}"].T)
        last = n_layers - 1
        out = a @ params[f"mlp_w{last}"].T + params[f"mlp_b{last}"]
        dout = da @ params[f"mlp_w{last}"].T
        outs[t] = out[0]
        # only injected directions (t' <= t) carry signal; the rest stay 0
        jac[t] = (dout * model.out_scale).reshape(horizon, n_c,
                                                  N_OUTPUTS).transpose(2, 0, 1)
        hh, cc = h_new, c_new

    out_raw = outs * model.out_scale + model.out_mean
    y_pred = out_raw[:, :N_TEMPS]
    z_pred = out_raw[:, N_TEMPS]
    jac_y = jac[:, :N_TEMPS]
    jac_z = jac[:, N_TEMPS]
    return y_pred, z_pred, jac_y, jac_z


def encdec_forecast(model: EncoderDecoderModel, u_hist: np.ndarray,
                    y_hist: np.ndarray, z_hist: np.ndarray,
                    u_future: np.ndarray):
    """Forecast from raw history tails; mirrors the state-space pipeline."""
    n = model.n_encoder
    u_hist = np.asarray(u_hist, dtype=float)
    y_hist = np.asarray(y_hist, dtype=float)
    z_hist = np.asarray(z_hist, dtype=float).reshape(-1, 1)
    if len(u_hist) < n:
        raise ValueError(f"history must contain at least {n} samples")
    w = np.hstack([u_hist[-n:], y_hist[-n:], z_hist[-n:]])
    c, h = encode(model, w)
    return decode(model, c, h, u_future)


def encdec_forecast_with_jacobian(model: EncoderDecoderModel,
                                  u_hist: np.ndarray, y_hist: np.ndarray,
                                  z_hist: np.ndarray, u_future: np.ndarray,
                                  wrt: np.ndarray | None = None):
    n = model.n_encoder
    u_hist = np.asarray(u_hist, dtype=float)
    y_hist = np.asarray(y_hist, dtype=float)
    z_hist = np.asarray(z_hist, dtype=float).reshape(-1, 1)
    if len(u_hist) < n:
        raise ValueError(f"history must contain at least {n} samples")
    w = np.hstack([u_hist[-n:], y_hist[-n:], z_hist[-n:]])
    c, h = encode(model, w)
    return io_jacobian(model, c, h, u_future, wrt=wrt)


def forecast_windows(model: EncoderDecoderModel, inputs: np.ndarray,
                     temps: np.ndarray, power: np.ndarray,
                     starts: np.ndarray, horizon: int):
    """Batched forecasts at many anchor points of one record.

    Each start index marks the first forecast step; the encoder window is
    the n samples before it. Returns (y_pred (B, horizon, 8),
    z_pred (B, horizon)).
    """
    u = np.asarray(inputs, dtype=float)
    y = np.asarray(temps, dtype=float)
    z = np.asarray(power, dtype=float).reshape(-1, 1)
    starts = np.asarray(starts, dtype=int)
    n = model.n_encoder
    if np.any(starts < n) or np.any(starts + horizon > len(u)):
        raise ValueError("window bounds exceed the record")
    w_norm = model.normalize(np.hstack([u, y, z]))
    enc_idx = (starts[:, None] - n) + np.arange(n)
    dec_idx = starts[:, None] + np.arange(horizon)
    h, c, _ = _encode_batch(model, w_norm[enc_idx])
    out_norm, _, _ = _decode_batch(model, h, c,
                                   w_norm[dec_idx][:, :, :N_EXOGENOUS])
    out = out_norm * model.out_scale + model.out_mean
    return out[:, :, :N_TEMPS], out[:, :, N_TEMPS]


def save_encdec(path, model: EncoderDecoderModel) -> None:
    arrays = {f"param_{name}": arr for name, arr in model.params.items()}
    np.savez(path, format_version=np.int64(_FORMAT_VERSION),
             hidden_size=np.int64(model.hidden_size),
             n_encoder=np.int64(model.n_encoder),
             mlp_hidden=np.asarray(model.mlp_hidden, dtype=np.int64),
             in_mean=model.in_mean, in_scale=model.in_scale, **arrays)


def load_encdec(path) -> EncoderDecoderModel:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = {key[len("param_"):]: data[key] for key in data.files
                  if key.startswith("param_")}
        return EncoderDecoderModel(
            params=params, hidden_size=int(data["hidden_size"]),
            n_encoder=int(data["n_encoder"]),
            mlp_hidden=tuple(int(v) for v in data["mlp_hidden"]),
            in_mean=data["in_mean"], in_scale=data["in_scale"])
