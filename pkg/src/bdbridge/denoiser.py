"""Noise-conditioned distributional denoiser trained on the negated energy score.

The model is a SELU multilayer perceptron mapping (scaled noisy counts, time,
Gaussian noise, optional side information) to a continuous endpoint
prediction.  Continuous outputs feed the loss; integer samples for the
reverse kernel come from clamping at zero and randomized rounding.  Training
is Adam with global-norm clipping, a linear learning-rate warmup, and an
exponential moving average of the parameters used at inference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bridge import BridgeSchedule, corrupt
from .rng import RngState
from .scoring import ScoreConfig

_SELU_SCALE = 1.0507009873554805
_SELU_ALPHA = 1.6732632423543772


class TrainingError(RuntimeError):
    """Raised when the loss turns non-finite during training."""


@dataclass(frozen=True)
class DenoiserConfig:
    input_dim: int
    noise_dim: int = 100
    hidden_dim: int = 128
    layers: int = 4
    cond_dim: int = 0
    input_scale: float = 1.0 / 128.0
    output_scale: float = 128.0

    def __post_init__(self):
        if min(self.input_dim, self.noise_dim, self.hidden_dim, self.layers) < 1 or self.cond_dim < 0:
            raise ValueError("invalid denoiser dimensions")

    @property
    def feature_dim(self) -> int:
        return self.input_dim + 1 + self.noise_dim + self.cond_dim


@dataclass
class TrainConfig:
    lr: float = 1e-3
    warmup_steps: int = 100
    batch_size: int = 256
    epochs: int = 500
    grad_clip_norm: float = 1.0
    ema_decay: float = 0.999
    m_samples: int = 2
    seed: int = 0
    beta: float = 1.0
    cosine_decay: bool = False

    def __post_init__(self):
        if self.lr <= 0 or not 0 < self.ema_decay < 1 or self.grad_clip_norm <= 0:
            raise ValueError("invalid training configuration")


@dataclass
class EmaState:
    """Exponential moving average of the parameters: shadow <- d*shadow + (1-d)*p."""

    shadow: dict
    decay: float

    @classmethod
    def init(cls, params: dict, decay: float) -> "EmaState":
        return cls(shadow={k: v.copy() for k, v in params.items()}, decay=decay)

    def update(self, params: dict) -> None:
        for k, v in params.items():
            self.shadow[k] = self.decay * self.shadow[k] + (1.0 - self.decay) * v


def _selu(x):
    return _SELU_SCALE * np.where(x > 0, x, _SELU_ALPHA * np.expm1(x))


def _selu_grad(x):
    return _SELU_SCALE * np.where(x > 0, 1.0, _SELU_ALPHA * np.exp(x))


class Denoiser:
    """SELU MLP over (x_t * input_scale, t, zeta, side_info)."""

    def __init__(self, config: DenoiserConfig, params: Optional[dict] = None):
        self.config = config
        self.params = params if params is not None else {}

    def init_params(self, rng: RngState) -> dict:
        """Lecun-normal hidden layers; the output head starts at zero."""
        gen = rng.generator
        cfg = self.config
        widths = [cfg.feature_dim] + [cfg.hidden_dim] * cfg.layers
        params = {}
        for i in range(cfg.layers):
            fan_in = widths[i]
            params[f"W{i}"] = gen.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, widths[i + 1]))
            params[f"b{i}"] = np.zeros(widths[i + 1])
        params["W_out"] = np.zeros((cfg.hidden_dim, cfg.input_dim))
        params["b_out"] = np.zeros(cfg.input_dim)
        self.params = params
        return params

    # -- forward/backward ---------------------------------------------------

    def _features(self, x_t, t, noise, side_info):
        cfg = self.config
        x = np.atleast_2d(np.asarray(x_t, dtype=float)) * cfg.input_scale
        b = x.shape[0]
        t_col = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1) if np.ndim(t) else np.full((b, 1), float(t)), (b, 1))
        cols = [x, t_col, np.asarray(noise, dtype=float).reshape(b, cfg.noise_dim)]
        if cfg.cond_dim:
            if side_info is None:
                raise ValueError("side_info required: cond_dim > 0")
            cols.append(np.atleast_2d(np.asarray(side_info, dtype=float)).reshape(b, cfg.cond_dim))
        feats = np.concatenate(cols, axis=1)
        if feats.shape[1] != cfg.feature_dim:
            raise ValueError(f"feature width {feats.shape[1]} != expected {cfg.feature_dim}")
        return feats

    def forward(self, feats, params=None, keep_cache=False):
        p = self.params if params is None else params
        cfg = self.config
        h = feats
        pre_acts, acts = [], [feats]
        for i in range(cfg.layers):
            z = h @ p[f"W{i}"] + p[f"b{i}"]
            h = _selu(z)
            if keep_cache:
                pre_acts.append(z)
                acts.append(h)
        out = (h @ p["W_out"] + p["b_out"]) * cfg.output_scale
        cache = (pre_acts, acts) if keep_cache else None
        return out, cache

    def backward(self, d_out, cache, params=None):
        """Gradients of sum(d_out * out) w.r.t. every parameter."""
        p = self.params if params is None else params
        cfg = self.config
        pre_acts, acts = cache
        grads = {}
        delta = d_out * cfg.output_scale
        grads["W_out"] = acts[-1].T @ delta
        grads["b_out"] = delta.sum(axis=0)
        delta = delta @ p["W_out"].T
        for i in reversed(range(cfg.layers)):
            delta = delta * _selu_grad(pre_acts[i])
            grads[f"W{i}"] = acts[i].T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            delta = delta @ p[f"W{i}"].T
        return grads

    # -- sampling -----------------------------------------------------------

    def continuous(self, rng: RngState, x_t, t, side_info=None, m: int = 1, params=None):
        """m continuous endpoint predictions, shape (m, batch, input_dim)."""
        cfg = self.config
        x = np.atleast_2d(np.asarray(x_t))
        outs = np.empty((m, x.shape[0], cfg.input_dim))
        for j in range(m):
            noise = rng.generator.normal(size=(x.shape[0], cfg.noise_dim))
            feats = self._features(x, t, noise, side_info)
            outs[j], _ = self.forward(feats, params=params)
        return outs

    def sample(self, rng: RngState, x_t, t, side_info=None, m: int = 1, params=None):
        """Integer endpoint samples: clamp at 0, then unbiased randomized rounding."""
        from .deconv import randomized_round

        cont = np.maximum(self.continuous(rng, x_t, t, side_info, m, params), 0.0)
        return randomized_round(rng, cont)

    def endpoint_sampler(self, params=None):
        """Adapter with the (rng, x_t, t, side_info) -> x0_hat signature."""

        def _sampler(rng, x_t, t, side_info):
            flat = self.sample(rng, np.atleast_2d(x_t), t, side_info, m=1, params=params)[0]
            return flat.reshape(np.asarray(x_t).shape)

        return _sampler


def denoise_sample(rng: RngState, model: Denoiser, x_t, t, side_info=None, m: int = 1):
    """m integer endpoint samples conditioned on the noisy state."""
    return model.sample(rng, x_t, t, side_info=side_info, m=m)


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------

def _rho_and_grad(diff: np.ndarray, beta: float):
    """rho = ||diff||^beta rowwise and d rho / d diff (subgradient 0 at 0)."""
    norms = np.linalg.norm(diff, axis=-1)
    rho = norms**beta
    safe = np.where(norms > 0, norms, 1.0)
    grad = beta * (rho / (safe * safe))[..., None] * diff
    grad = np.where(norms[..., None] > 0, grad, 0.0)
    return rho, grad


def loss_and_grads(model: Denoiser, x0, x_t, t, side_info, score_config: ScoreConfig, noise):
    """Negated plug-in energy score averaged over the batch, with exact grads.

    ``noise`` has shape (m, batch, noise_dim) and is treated as a constant,
    as is the target; gradients flow through the network outputs only.
    """
    x0_a = np.atleast_2d(np.asarray(x0, dtype=float))
    x_t_a = np.atleast_2d(np.asarray(x_t))
    b = x0_a.shape[0]
    m = score_config.m
    beta = score_config.beta
    if noise.shape[0] != m or noise.shape[1] != b:
        raise ValueError("noise must have shape (m, batch, noise_dim)")

    feats = np.concatenate([model._features(x_t_a, t, noise[j], side_info) for j in range(m)], axis=0)
    out, cache = model.forward(feats, keep_cache=True)
    y = out.reshape(m, b, -1)

    # fit term: (1/m) sum_j rho(y_j, x0)
    fit_rho, fit_grad = _rho_and_grad(y - x0_a[None, :, :], beta)
    # spread term: (1/(m(m-1))) sum over ordered pairs of rho/2
    d_y = np.zeros_like(y)
    spread = np.zeros(b)
    for j in range(m):
        for jp in range(m):
            if j == jp:
                continue
            r, g = _rho_and_grad(y[j] - y[jp], beta)
            spread += 0.5 * r
            d_y[j] += g  # d/dy_j of (rho(j,jp) + rho(jp,j))/2
    spread /= m * (m - 1)
    d_y /= m * (m - 1)
    score = spread - fit_rho.mean(axis=0)
    loss = float(-score.mean())
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss")

    d_y -= fit_grad / m
    d_y *= -1.0 / b  # negate the score, average over the batch
    grads = model.backward(d_y.reshape(m * b, -1), cache)
    return loss, grads


def lr_at_step(config: TrainConfig, step: int, total_steps: int) -> float:
    """Linear ramp 0 -> lr over warmup_steps, then constant (or cosine decay)."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if config.warmup_steps > 0 and step < config.warmup_steps:
        return config.lr * step / config.warmup_steps
    if not config.cosine_decay:
        return config.lr
    span = max(total_steps - config.warmup_steps, 1)
    frac = min(max(step - config.warmup_steps, 0) / span, 1.0)
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads: dict, max_norm: float):
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()})

    def update(self, params: dict, grads: dict, lr: float) -> None:
        self.step += 1
        b1c = 1.0 - self.beta1**self.step
        b2c = 1.0 - self.beta2**self.step
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


@dataclass
class TrainResult:
    model: Denoiser
    ema: EmaState
    log: list = field(default_factory=list)
    steps: int = 0

    def ema_model(self) -> Denoiser:
        return Denoiser(self.model.config, params=self.ema.shadow)


def train(rng: RngState, x0_data, x1_data, schedule: BridgeSchedule,
          denoiser_config: DenoiserConfig, train_config: TrainConfig,
          side_info=None, log_every: int = 50) -> TrainResult:
    """Fit the denoiser on endpoint pairs drawn through the forward bridge.

    Per minibatch: sample one time per example uniformly on [0,1], corrupt
    the pair through the endpoint-conditioned kernel, and take an Adam step
    on the negated energy score of m noise-conditioned predictions.
    """
    x0_data = np.atleast_2d(np.asarray(x0_data, dtype=np.int64))
    x1_data = np.atleast_2d(np.asarray(x1_data, dtype=np.int64))
    if x0_data.shape != x1_data.shape or x0_data.shape[0] == 0:
        raise ValueError("paired endpoint arrays must be nonempty and congruent")

    model = Denoiser(denoiser_config)
    model.init_params(rng)
    ema = EmaState.init(model.params, train_config.ema_decay)
    adam = AdamState.init(model.params)
    score_cfg = ScoreConfig(beta=train_config.beta, m=train_config.m_samples)

    n = x0_data.shape[0]
    bs = min(train_config.batch_size, n)
    steps_per_epoch = (n + bs - 1) // bs
    total_steps = steps_per_epoch * train_config.epochs
    gen = rng.generator
    log = []
    step = 0
    for _ in range(train_config.epochs):
        order = gen.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            x0_b = x0_data[idx]
            x1_b = x1_data[idx]
            z_b = side_info[idx] if side_info is not None else None
            t_b = gen.random((idx.shape[0], 1))
            x_t = corrupt(rng, schedule, x0_b, x1_b, t_b).x_t
            noise = gen.normal(size=(score_cfg.m, idx.shape[0], denoiser_config.noise_dim))
            try:
                loss, grads = loss_and_grads(model, x0_b, x_t, t_b, z_b, score_cfg, noise)
            except TrainingError as err:
                raise TrainingError(f"diverged at step {step}: {err}") from err
            grads, raw_norm = clip_by_global_norm(grads, train_config.grad_clip_norm)
            lr = lr_at_step(train_config, step, total_steps)
            adam.update(model.params, grads, lr)
            ema.update(model.params)
            if step % log_every == 0 or step == total_steps - 1:
                log.append({"step": step, "loss": loss, "lr": lr, "grad_norm": raw_norm})
            step += 1
    return TrainResult(model=model, ema=ema, log=log, steps=step)


# ---------------------------------------------------------------------------
# Checkpoint format: JSON manifest + little-endian float64 flat binary
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: Denoiser, ema: EmaState, schedule: BridgeSchedule,
                    train_config: Optional[TrainConfig] = None, step: int = 0) -> None:
    import os

    os.makedirs(path, exist_ok=True)
    order = sorted(model.params)
    manifest = {
        "format_version": 1,
        "step": step,
        "denoiser": vars(model.config) if not hasattr(model.config, "__dataclass_fields__")
        else {k: getattr(model.config, k) for k in model.config.__dataclass_fields__},
        "train": None if train_config is None else {k: getattr(train_config, k) for k in train_config.__dataclass_fields__},
        "schedule": {"lambda_plus": schedule.lambda_plus, "lambda_minus": schedule.lambda_minus,
                     "shape": schedule.shape, "power": schedule.power},
        "tensors": [{"name": k, "shape": list(model.params[k].shape)} for k in order],
        "segments": ["raw", "ema"],
        "dtype": "<f8",
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    blob = np.concatenate(
        [model.params[k].astype("<f8").reshape(-1) for k in order]
        + [ema.shadow[k].astype("<f8").reshape(-1) for k in order]
    )
    blob.astype("<f8").tofile(os.path.join(path, "params.bin"))


def load_checkpoint(path):
    """Returns (model, ema, schedule, train_config_dict, step)."""
    import os

    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    cfg = DenoiserConfig(**manifest["denoiser"])
    sched = BridgeSchedule(**manifest["schedule"])
    blob = np.fromfile(os.path.join(path, "params.bin"), dtype="<f8")
    sizes = [int(np.prod(t["shape"])) for t in manifest["tensors"]]
    total = sum(sizes)
    if blob.shape[0] != 2 * total:
        raise ValueError(f"checkpoint binary has {blob.shape[0]} values, expected {2 * total}")
    params, shadow = {}, {}
    offset = 0
    for seg, store in (("raw", params), ("ema", shadow)):
        for t, size in zip(manifest["tensors"], sizes):
            store[t["name"]] = blob[offset:offset + size].reshape(t["shape"]).copy()
            offset += size
    model = Denoiser(cfg, params=params)
    ema = EmaState(shadow=shadow, decay=(manifest.get("train") or {}).get("ema_decay", 0.999))
    return model, ema, sched, manifest.get("train"), manifest.get("step", 0)
