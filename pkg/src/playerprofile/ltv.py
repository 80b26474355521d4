"""Two-branch LSTM regressor for lifetime value.

Player actions and purchases enter through separate LSTM layers.  Each
branch's last valid hidden state is concatenated and passed through four
dense layers (ReLU on the first three, linear output).  Everything is plain
numpy in float64: the forward pass, backpropagation through time and the Adam
optimizer.

Masked steps leave the LSTM state untouched, so a branch's final state is the
state after its last valid step.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class LtvNetConfig:
    action_channels: int = 3
    purchase_channels: int = 2
    hidden_a: int = 32
    hidden_b: int = 16
    dense_sizes: tuple[int, ...] = (64, 32, 16, 1)
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    log_target: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "dense_sizes", tuple(int(d) for d in self.dense_sizes))
        if len(self.dense_sizes) != 4 or self.dense_sizes[-1] != 1:
            raise ValueError("dense_sizes must list four widths ending in 1")
        if min(self.action_channels, self.purchase_channels, self.hidden_a, self.hidden_b,
               *self.dense_sizes) < 1:
            raise ValueError("all layer sizes must be positive")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid optimizer settings")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def param_shapes(cfg: LtvNetConfig) -> dict[str, tuple[int, ...]]:
    shapes = {
        "lstm_a.W": (4 * cfg.hidden_a, cfg.action_channels + cfg.hidden_a),
        "lstm_a.b": (4 * cfg.hidden_a,),
        "lstm_b.W": (4 * cfg.hidden_b, cfg.purchase_channels + cfg.hidden_b),
        "lstm_b.b": (4 * cfg.hidden_b,),
    }
    fan_in = cfg.hidden_a + cfg.hidden_b
    for k, width in enumerate(cfg.dense_sizes):
        shapes[f"dense{k}.W"] = (width, fan_in)
        shapes[f"dense{k}.b"] = (width,)
        fan_in = width
    return shapes


@dataclass
class LtvModel:
    config: LtvNetConfig
    params: dict[str, np.ndarray]
    # fixed affine maps fitted on training data; identity by default
    action_scale: np.ndarray | None = None
    purchase_scale: np.ndarray | None = None
    target_shift: float = 0.0
    target_scale: float = 1.0
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        cfg = self.config
        if self.action_scale is None:
            self.action_scale = np.ones(cfg.action_channels)
        if self.purchase_scale is None:
            self.purchase_scale = np.ones(cfg.purchase_channels)
        for name, shape in param_shapes(cfg).items():
            p = self.params.get(name)
            if p is None or p.shape != shape:
                raise ValueError(f"parameter {name} missing or not of shape {shape}")
            if not np.all(np.isfinite(p)):
                raise ValueError(f"parameter {name} is not finite")

    @classmethod
    def zeros(cls, cfg: LtvNetConfig) -> "LtvModel":
        return cls(cfg, {k: np.zeros(s) for k, s in param_shapes(cfg).items()})

    @classmethod
    def initialize(cls, cfg: LtvNetConfig, rng: np.random.Generator | None = None) -> "LtvModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, forget bias +1."""
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        params = {}
        for name, shape in param_shapes(cfg).items():
            layer = name.split(".")[0]
            fan_in = param_shapes(cfg)[f"{layer}.W"][1]
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        for branch, h in (("lstm_a", cfg.hidden_a), ("lstm_b", cfg.hidden_b)):
            params[f"{branch}.b"][h:2 * h] += 1.0
        return cls(cfg, params)

    def copy(self) -> "LtvModel":
        return LtvModel(self.config, {k: v.copy() for k, v in self.params.items()},
                        self.action_scale.copy(), self.purchase_scale.copy(),
                        self.target_shift, self.target_scale, list(self.loss_history))

    def to_json(self) -> dict:
        cfg = asdict(self.config)
        cfg["dense_sizes"] = list(cfg["dense_sizes"])
        return {
            "format": "playerprofile.ltv",
            "version": FORMAT_VERSION,
            "config": cfg,
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
            "params": {k: v.ravel().tolist() for k, v in self.params.items()},
            "action_scale": self.action_scale.tolist(),
            "purchase_scale": self.purchase_scale.tolist(),
            "target_shift": self.target_shift,
            "target_scale": self.target_scale,
            "loss_history": list(self.loss_history),
        }

    @classmethod
    def from_json(cls, data: dict) -> "LtvModel":
        if data.get("format") != "playerprofile.ltv" or data.get("version") != FORMAT_VERSION:
            raise ValueError("not a supported LTV model file")
        cfg = LtvNetConfig(**data["config"])
        params = {k: np.array(v, dtype=float).reshape(data["shapes"][k]) for k, v in data["params"].items()}
        return cls(cfg, params, np.array(data["action_scale"]), np.array(data["purchase_scale"]),
                   data["target_shift"], data["target_scale"], list(data["loss_history"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "LtvModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# -- forward / backward --------------------------------------------------------

def _check_inputs(model: LtvModel, actions, purchases, mask):
    actions = np.asarray(actions, dtype=float)
    purchases = np.asarray(purchases, dtype=float)
    if actions.ndim == 2:
        actions, purchases = actions[None], purchases[None]
        mask = None if mask is None else np.asarray(mask, dtype=float)[None]
    if actions.ndim != 3 or purchases.ndim != 3:
        raise ValueError("series must be (batch, steps, channels) arrays")
    B, T, _ = actions.shape
    if purchases.shape[:2] != (B, T):
        raise ValueError("action and purchase series must have equal lengths")
    cfg = model.config
    if actions.shape[2] != cfg.action_channels or purchases.shape[2] != cfg.purchase_channels:
        raise ValueError("channel counts do not match the model configuration")
    mask = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=float)
    if mask.shape != (B, T):
        raise ValueError("mask must be (batch, steps)")
    if not (np.all(np.isfinite(actions)) and np.all(np.isfinite(purchases)) and np.all(np.isfinite(mask))):
        raise ValueError("inputs must be finite")
    return actions, purchases, mask


def _lstm_forward(W, b, x, mask):
    B, T, _ = x.shape
    H = b.size // 4
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        xh = np.concatenate([x[:, t], h], axis=1)
        z = xh @ W.T + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        o = _sigmoid(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t:t + 1]
        cache.append((xh, c, i, f, o, g, tc, m))
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
    return h, cache


def _lstm_backward(W, dh, cache, n_in):
    H = dh.shape[1]
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[0])
    dc = np.zeros_like(dh)
    for xh, c_prev, i, f, o, g, tc, m in reversed(cache):
        dh_new = m * dh
        dc_new = m * dc + dh_new * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc_new * g * i * (1.0 - i),
            dc_new * c_prev * f * (1.0 - f),
            dh_new * tc * o * (1.0 - o),
            dc_new * i * (1.0 - g * g),
        ], axis=1)
        dW += dz.T @ xh
        db += dz.sum(axis=0)
        dxh = dz @ W
        dh = (1.0 - m) * dh + dxh[:, n_in:]
        dc = (1.0 - m) * dc + dc_new * f
    return dW, db


def _forward_raw(model: LtvModel, actions, purchases, mask):
    """Network output before the target affine map, plus the backward cache."""
    p = model.params
    ha, cache_a = _lstm_forward(p["lstm_a.W"], p["lstm_a.b"], actions * model.action_scale, mask)
    hb, cache_b = _lstm_forward(p["lstm_b.W"], p["lstm_b.b"], purchases * model.purchase_scale, mask)
    a = np.concatenate([ha, hb], axis=1)
    acts = [a]
    for k in range(4):
        z = a @ p[f"dense{k}.W"].T + p[f"dense{k}.b"]
        a = z if k == 3 else np.maximum(z, 0.0)
        acts.append(a)
    return a[:, 0], (cache_a, cache_b, acts)


def forward(model: LtvModel, actions, purchases, mask=None):
    """Model output in target units (currency, or log1p-currency if configured).

    Accepts a single player (``steps x channels`` arrays) or a batch.
    """
    single = np.asarray(actions).ndim == 2
    actions, purchases, mask = _check_inputs(model, actions, purchases, mask)
    out, _ = _forward_raw(model, actions, purchases, mask)
    out = model.target_shift + model.target_scale * out
    return float(out[0]) if single else out


def loss_and_gradients(model: LtvModel, actions, purchases, mask, targets):
    """Mean squared error over the batch and its exact gradient for every parameter."""
    actions, purchases, mask = _check_inputs(model, actions, purchases, mask)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if model.config.log_target:
        y = np.log1p(y)
    B = actions.shape[0]
    if y.size != B:
        raise ValueError("one target per sequence required")
    raw, (cache_a, cache_b, acts) = _forward_raw(model, actions, purchases, mask)
    pred = model.target_shift + model.target_scale * raw
    err = pred - y
    loss = float(np.mean(err * err))
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss")

    p = model.params
    grads = {}
    delta = (2.0 / B) * err[:, None] * model.target_scale
    for k in range(3, -1, -1):
        a_in = acts[k]
        grads[f"dense{k}.W"] = delta.T @ a_in
        grads[f"dense{k}.b"] = delta.sum(axis=0)
        delta = delta @ p[f"dense{k}.W"]
        if k > 0:
            delta = delta * (acts[k] > 0.0)
    Ha = model.config.hidden_a
    grads["lstm_a.W"], grads["lstm_a.b"] = _lstm_backward(
        p["lstm_a.W"], delta[:, :Ha], cache_a, model.config.action_channels)
    grads["lstm_b.W"], grads["lstm_b.b"] = _lstm_backward(
        p["lstm_b.W"], delta[:, Ha:], cache_b, model.config.purchase_channels)
    return loss, {k: grads[k] for k in p}


def backward(model: LtvModel, batch) -> dict[str, np.ndarray]:
    """Gradients of the batch MSE; ``batch = (actions, purchases, mask, targets)``."""
    return loss_and_gradients(model, *batch)[1]


# -- training ------------------------------------------------------------------

class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _channel_scale(x, mask):
    valid = x[mask > 0]
    if valid.size == 0:
        return np.ones(x.shape[-1])
    sd = valid.std(axis=0)
    return np.where(sd > 0, 1.0 / np.where(sd > 0, sd, 1.0), 1.0)


def fit_ltv(actions, purchases, mask, targets, config: LtvNetConfig = LtvNetConfig()) -> LtvModel:
    """Train on stacked sequences ``(n, steps, channels)`` against realized spend.

    Inputs are scaled per channel and targets standardized with statistics of
    the training set; both maps are stored on the model.
    """
    actions = np.asarray(actions, dtype=float)
    purchases = np.asarray(purchases, dtype=float)
    mask = np.asarray(mask, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if y.size < 1:
        raise ValueError("need at least one training sequence")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite and non-negative")

    rng = np.random.default_rng(config.seed)
    model = LtvModel.initialize(config, rng)
    model.action_scale = _channel_scale(actions, mask)
    model.purchase_scale = _channel_scale(purchases, mask)
    yt = np.log1p(y) if config.log_target else y
    model.target_shift = float(yt.mean())
    model.target_scale = float(yt.std()) if yt.std() > 0 else 1.0
    _check_inputs(model, actions, purchases, mask)

    opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.eps)
    n = y.size
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            b = order[start:start + config.batch_size]
            try:
                _, grads = loss_and_gradients(model, actions[b], purchases[b], mask[b], y[b])
            except FloatingPointError:
                raise FloatingPointError(f"training diverged in epoch {epoch + 1}") from None
            opt.step(model.params, grads)
        loss = _dataset_loss(model, actions, purchases, mask, y)
        if not math.isfinite(loss):
            raise FloatingPointError(f"training diverged in epoch {epoch + 1}")
        model.loss_history.append(loss)
        logger.debug("epoch %d loss %.6g", epoch + 1, loss)
    return model


def _dataset_loss(model, actions, purchases, mask, y, chunk=1024):
    total = 0.0
    for s in range(0, y.size, chunk):
        out = forward(model, actions[s:s + chunk], purchases[s:s + chunk], mask[s:s + chunk])
        yt = np.log1p(y[s:s + chunk]) if model.config.log_target else y[s:s + chunk]
        total += float(np.sum((out - yt) ** 2))
    return total / y.size


def predict_ltv(model: LtvModel, actions, purchases, mask=None):
    """Expected lifetime value, clamped below at zero."""
    out = forward(model, actions, purchases, mask)
    if model.config.log_target:
        out = np.expm1(out)
    if np.ndim(out) == 0:
        return max(float(out), 0.0)
    return np.maximum(out, 0.0)
