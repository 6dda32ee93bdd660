"""Per-pixel patch classifier, its hand-derived backward pass, and optimizers.

The model scores each pixel from the k x k patch around it (zero padding at
the borders) with a small ReLU MLP, then applies a per-pixel softmax. The
final linear layer plays the role of a decoder head and gets a boosted
learning rate via `head_lr_multiplier`.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    InvalidInputError,
    ScheduleError,
    ShapeError,
    TrainingError,
)
from .numerics import softmax
from .serialization import read_header, read_tensor, write_header, write_tensor

CHECKPOINT_MAGIC = "PRSFDA1"


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    patch_size: int = 3
    in_channels: int = 3
    hidden_sizes: tuple = (32, 32)
    head_lr_multiplier: float = 10.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ConfigError("patch_size must be odd and >= 1")
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if not self.hidden_sizes:
            raise ConfigError("hidden_sizes must be nonempty")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))

    def layer_dims(self):
        """Chained (fan_in, fan_out) pairs from patch vector to class logits."""
        sizes = [self.patch_size**2 * self.in_channels, *self.hidden_sizes, self.num_classes]
        return list(zip(sizes[:-1], sizes[1:]))

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "patch_size": self.patch_size,
            "in_channels": self.in_channels,
            "hidden_sizes": list(self.hidden_sizes),
            "head_lr_multiplier": self.head_lr_multiplier,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                num_classes=int(d["num_classes"]),
                patch_size=int(d["patch_size"]),
                in_channels=int(d["in_channels"]),
                hidden_sizes=tuple(d["hidden_sizes"]),
                head_lr_multiplier=float(d["head_lr_multiplier"]),
            )
        except KeyError as exc:
            raise ConfigError(f"model config missing field {exc}") from exc


class Model:
    """Patch-MLP pixel classifier with explicit forward/backward."""

    def __init__(self, config, layers, rng_seed=0):
        self.config = config
        self.layers = layers  # list of (W: (fan_in, fan_out), b: (fan_out,))
        self.rng_seed = rng_seed
        expected = config.layer_dims()
        if len(layers) != len(expected):
            raise ShapeError("layer count does not match config")
        for (w, b), (fi, fo) in zip(layers, expected):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise ShapeError(f"layer shape {w.shape}/{b.shape} != expected ({fi},{fo})")

    def parameters(self):
        """Flat list [W0, b0, W1, b1, ...]; arrays are mutated in place by optimizers."""
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out

    def lr_multipliers(self):
        """Per-parameter LR factors; the head (final) layer gets the boost."""
        mults = [1.0] * (2 * len(self.layers))
        mults[-2] = mults[-1] = self.config.head_lr_multiplier
        return mults

    def _patches(self, image):
        image = np.asarray(image, dtype=np.float64)
        k = self.config.patch_size
        if image.ndim != 3 or image.shape[2] != self.config.in_channels:
            raise ShapeError(
                f"expected image of shape (H, W, {self.config.in_channels}), got {image.shape}"
            )
        if image.shape[0] < k or image.shape[1] < k:
            raise ShapeError(f"image extents {image.shape[:2]} smaller than patch size {k}")
        if not np.all(np.isfinite(image)):
            raise InvalidInputError("image contains non-finite values")
        if image.min() < -1e-9 or image.max() > 1.0 + 1e-9:
            raise InvalidInputError("image values must lie in [0, 1]")
        pad = k // 2
        padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
        # (H, W, Cin, k, k) -> (H*W, k*k*Cin) with (dy, dx, channel) ordering
        h, w = image.shape[:2]
        return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(h * w, -1)

    def _mlp(self, x):
        """Forward through the MLP; returns pre-activations and activations."""
        pre, act = [], [x]
        for i, (w, b) in enumerate(self.layers):
            z = act[-1] @ w + b
            pre.append(z)
            act.append(np.maximum(z, 0.0) if i < len(self.layers) - 1 else z)
        return pre, act

    def forward(self, image):
        """Per-pixel class probabilities, shape (H, W, C)."""
        x = self._patches(image)
        _, act = self._mlp(x)
        h, w = np.asarray(image).shape[:2]
        return softmax(act[-1]).reshape(h, w, self.config.num_classes)

    def backward(self, image, grad_wrt_probs):
        """Gradients of sum(probs * grad_wrt_probs) for every parameter.

        Returns a list aligned with parameters().
        """
        x = self._patches(image)
        pre, act = self._mlp(x)
        probs = softmax(act[-1])
        h, w = np.asarray(image).shape[:2]
        return self._backprop(pre, act, probs, image, grad_wrt_probs, h, w)

    def _backprop(self, pre, act, probs, image, grad_wrt_probs, h, w):
        grad_wrt_probs = np.asarray(grad_wrt_probs, dtype=np.float64)
        c = self.config.num_classes
        if grad_wrt_probs.shape != (h, w, c):
            raise ShapeError(
                f"grad shape {grad_wrt_probs.shape} != forward output shape {(h, w, c)}"
            )
        g = grad_wrt_probs.reshape(-1, c)
        # softmax Jacobian: dS/dz_k = p_k * (g_k - sum_c g_c p_c)
        delta = probs * (g - np.sum(g * probs, axis=1, keepdims=True))
        grads = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            grads[2 * i] = act[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.layers[i][0].T) * (pre[i - 1] > 0.0)
        return grads

    def forward_backward(self, image, loss_on_probs):
        """One loss/grad evaluation sharing a single forward pass.

        loss_on_probs maps the (H, W, C) probability map to an object with
        .value and .grad_probs. Equivalent to forward + loss + backward but
        roughly 40% cheaper; training loops use it when available.
        """
        x = self._patches(image)
        pre, act = self._mlp(x)
        probs = softmax(act[-1])
        h, w = np.asarray(image).shape[:2]
        out = loss_on_probs(probs.reshape(h, w, self.config.num_classes))
        grads = self._backprop(pre, act, probs, image, out.grad_probs, h, w)
        return out.value, grads


def init_model(config, seed, zero_init=False):
    """He-style fan-in scaled uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in config.layer_dims():
        if zero_init:
            w = np.zeros((fan_in, fan_out))
        else:
            limit = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return Model(config, layers, rng_seed=seed)


def clone_model(model):
    """Independent copy whose parameter updates do not touch the original."""
    layers = [(w.copy(), b.copy()) for w, b in model.layers]
    return Model(model.config, layers, rng_seed=model.rng_seed)


def poly_lr(iteration, total, base_lr, power=0.9):
    """Polynomial decay: base_lr * (1 - iter/total)^power."""
    if total <= 0:
        raise ScheduleError("total iterations must be positive")
    if iteration < 0 or iteration > total:
        raise ScheduleError(f"iteration {iteration} outside [0, {total}]")
    return base_lr * (1.0 - iteration / total) ** power


def _check_grads_finite(grads):
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradients; training diverged")


class SgdMomentum:
    """SGD with momentum and coupled weight decay (decay added to the gradient)."""

    def __init__(self, momentum=0.9, weight_decay=5e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = None
        self.step_count = 0

    def step(self, params, grads, lr, lr_multipliers=None):
        if lr < 0:
            raise InvalidInputError("learning rate must be non-negative")
        _check_grads_finite(grads)
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        mults = lr_multipliers or [1.0] * len(params)
        for p, g, v, m in zip(params, grads, self.velocity, mults):
            v *= self.momentum
            v += g + self.weight_decay * p
            p -= lr * m * v
        self.step_count += 1


class AdamW:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, betas=(0.9, 0.99), weight_decay=5e-4, eps=1e-8):
        self.betas = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.m = None
        self.v = None
        self.step_count = 0

    def step(self, params, grads, lr, lr_multipliers=None):
        if lr < 0:
            raise InvalidInputError("learning rate must be non-negative")
        _check_grads_finite(grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        mults = lr_multipliers or [1.0] * len(params)
        for p, g, m, v, mult in zip(params, grads, self.m, self.v, mults):
            eff_lr = lr * mult
            p *= 1.0 - eff_lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= eff_lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(kind, momentum=0.9, weight_decay=5e-4, betas=(0.9, 0.99)):
    if kind == "sgd":
        return SgdMomentum(momentum=momentum, weight_decay=weight_decay)
    if kind == "adamw":
        return AdamW(betas=betas, weight_decay=weight_decay)
    raise ConfigError(f"unknown optimizer kind {kind!r}")


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        write_header(fh, CHECKPOINT_MAGIC, model.config.to_dict())
        for param in model.parameters():
            write_tensor(fh, param)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        config = ModelConfig.from_dict(read_header(fh, CHECKPOINT_MAGIC))
        layers = []
        for _ in config.layer_dims():
            w = read_tensor(fh)
            b = read_tensor(fh)
            layers.append((w, b))
    return Model(config, layers)


def checkpoint_hash(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def model_hash(model):
    """Digest of config plus parameter bytes; used to tag reports."""
    h = hashlib.sha256(json.dumps(model.config.to_dict(), sort_keys=True).encode())
    for p in model.parameters():
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()
