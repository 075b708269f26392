"""Small dense networks on numpy float64 with exact backprop.

Forward passes are stateless: layer activations travel in explicit
context objects, so a trained network can be shared across threads for
inference.  Losses are computed from the final pre-activation with the
usual stable formulations (softplus, log-sum-exp); the trailing Sigmoid
or Softmax layer is folded into the loss gradient analytically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


class CheckpointError(ValueError):
    """Checkpoint files are missing, malformed, or inconsistent."""


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense:
    kind = "dense"

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError("weights must be (fan_in, fan_out) with matching bias")

    @classmethod
    def initialized(cls, fan_in: int, fan_out: int, rng: np.random.Generator) -> "Dense":
        return cls(glorot_uniform(fan_in, fan_out, rng), np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x @ self.weights + self.bias, x

    def backward(self, ctx: np.ndarray, grad_out: np.ndarray):
        grad_w = ctx.T @ grad_out
        grad_b = grad_out.sum(axis=0)
        return grad_out @ self.weights.T, [grad_w, grad_b]


class ReLU:
    kind = "relu"
    params: list[np.ndarray] = []

    def forward(self, x: np.ndarray):
        return np.maximum(x, 0.0), x > 0

    def backward(self, ctx, grad_out: np.ndarray):
        return grad_out * ctx, []


class Sigmoid:
    kind = "sigmoid"
    params: list[np.ndarray] = []

    def forward(self, x: np.ndarray):
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        return y, y

    def backward(self, ctx, grad_out: np.ndarray):
        return grad_out * ctx * (1.0 - ctx), []


class Softmax:
    kind = "softmax"
    params: list[np.ndarray] = []

    def forward(self, x: np.ndarray):
        shifted = x - x.max(axis=-1, keepdims=True)
        ex = np.exp(shifted)
        y = ex / ex.sum(axis=-1, keepdims=True)
        return y, y

    def backward(self, ctx, grad_out: np.ndarray):
        inner = (grad_out * ctx).sum(axis=-1, keepdims=True)
        return ctx * (grad_out - inner), []


_LAYER_KINDS = {"dense": Dense, "relu": ReLU, "sigmoid": Sigmoid, "softmax": Softmax}


class Network:
    """Layer pipeline.  ``seed`` and ``loss`` record how it was built and
    trained so checkpoints can say the same."""

    def __init__(self, layers: Sequence, seed: int | None = None, loss: str | None = None):
        self.layers = list(layers)
        self.seed = seed
        self.loss = loss

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out, _ = layer.forward(out)
        return out

    def forward_logits(self, x: np.ndarray) -> np.ndarray:
        z, _ = self.forward_logits_cached(np.asarray(x, dtype=np.float64))
        return z

    def _head_layers(self) -> list:
        if self.layers and isinstance(self.layers[-1], (Sigmoid, Softmax)):
            return self.layers[:-1]
        return self.layers

    def forward_logits_cached(self, x: np.ndarray):
        ctxs = []
        out = x
        for layer in self._head_layers():
            out, ctx = layer.forward(out)
            ctxs.append(ctx)
        return out, ctxs

    def backward_from_logits(self, ctxs, grad_z: np.ndarray, want_params: bool = False):
        """Propagate a gradient at the pre-activation back to the input.

        Returns (input_grad, param_grads) where param_grads lists one
        gradient array per parameter in layer order, summed over the batch.
        """
        head = self._head_layers()
        param_grads: list[list[np.ndarray]] = [[] for _ in head]
        grad = grad_z
        for i in range(len(head) - 1, -1, -1):
            grad, g_params = head[i].backward(ctxs[i], grad)
            if want_params:
                param_grads[i] = g_params
        flat = [g for per_layer in param_grads for g in per_layer] if want_params else []
        return grad, flat

    @property
    def param_arrays(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]


def membership_net(in_dim: int, hidden: Sequence[int], seed: int) -> Network:
    """Binary set-membership scorer: dense stack ending in Sigmoid."""
    rng = np.random.default_rng(seed)
    layers: list = []
    prev = in_dim
    for width in hidden:
        layers += [Dense.initialized(prev, width, rng), ReLU()]
        prev = width
    layers += [Dense.initialized(prev, 1, rng), Sigmoid()]
    return Network(layers, seed=seed, loss="bce")


def classifier_net(in_dim: int, hidden: Sequence[int], num_classes: int, seed: int) -> Network:
    """Full classifier: dense stack ending in Softmax over the classes."""
    rng = np.random.default_rng(seed)
    layers: list = []
    prev = in_dim
    for width in hidden:
        layers += [Dense.initialized(prev, width, rng), ReLU()]
        prev = width
    layers += [Dense.initialized(prev, num_classes, rng), Softmax()]
    return Network(layers, seed=seed, loss="ce")


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _logsumexp(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=-1, keepdims=True)
    return (zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)))[..., 0]


def sigmoid(z: np.ndarray) -> np.ndarray:
    out, _ = Sigmoid().forward(np.asarray(z, dtype=np.float64))
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    out, _ = Softmax().forward(np.asarray(z, dtype=np.float64))
    return out


def bce_loss(z: np.ndarray, targets: np.ndarray):
    t = np.asarray(targets, dtype=np.float64).reshape(z.shape)
    loss = _softplus(z) - t * z
    return loss.reshape(len(z)), sigmoid(z) - t


def ce_loss(z: np.ndarray, targets: np.ndarray):
    labels = np.asarray(targets)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("cross-entropy expects integer class labels")
    rows = np.arange(len(z))
    loss = _logsumexp(z) - z[rows, labels]
    grad = softmax(z)
    grad[rows, labels] -= 1.0
    return loss, grad


def soft_ce_loss(z: np.ndarray, targets: np.ndarray):
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != z.shape:
        raise ValueError(f"soft targets shape {t.shape} must match logits {z.shape}")
    loss = _logsumexp(z) * t.sum(axis=-1) - (t * z).sum(axis=-1)
    return loss, softmax(z) * t.sum(axis=-1, keepdims=True) - t


LOSSES = {"bce": bce_loss, "ce": ce_loss, "soft-ce": soft_ce_loss}

_LOSS_FINAL_LAYER = {"bce": Sigmoid, "ce": Softmax, "soft-ce": Softmax}


def _check_loss_fits(net: Network, loss: str) -> None:
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}, expected one of {sorted(LOSSES)}")
    want = _LOSS_FINAL_LAYER[loss]
    if not net.layers or not isinstance(net.layers[-1], want):
        raise ValueError(f"loss {loss!r} needs a network ending in {want.kind}")


def loss_and_grads(net: Network, x: np.ndarray, targets, loss: str, want_params: bool = True):
    """Per-sample losses plus gradients of their sum.

    Returns (losses (N,), input_grad (N, D), param_grads).  Rows of the
    input gradient are per-sample because samples do not interact.
    """
    _check_loss_fits(net, loss)
    x = np.asarray(x, dtype=np.float64)
    z, ctxs = net.forward_logits_cached(x)
    losses, grad_z = LOSSES[loss](z, targets)
    input_grad, param_grads = net.backward_from_logits(ctxs, grad_z, want_params)
    return losses, input_grad, param_grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float = 0.1
    momentum: float = 0.0
    seed: int = 0
    loss: str = "ce"


def train(net: Network, inputs: np.ndarray, targets, cfg: TrainConfig) -> list[float]:
    """Minibatch SGD; returns mean loss per epoch.

    Update rule: v <- momentum * v + g; theta <- theta - lr * v.  The
    epoch shuffle stream is fixed by cfg.seed, so a rerun with the same
    config reproduces the parameters bit for bit at a fixed thread count.
    """
    _check_loss_fits(net, cfg.loss)
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets)
    if len(inputs) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(inputs) != len(targets):
        raise ValueError(f"{len(inputs)} inputs vs {len(targets)} targets")
    rng = np.random.default_rng(cfg.seed)
    velocity = [np.zeros_like(p) for p in net.param_arrays]
    history: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(inputs))
        epoch_loss = 0.0
        for start in range(0, len(inputs), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            losses, _, grads = loss_and_grads(net, inputs[idx], targets[idx], cfg.loss)
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(f"non-finite loss {batch_loss} (lr={cfg.learning_rate})")
            scale = 1.0 / len(idx)
            for p, v, g in zip(net.param_arrays, velocity, grads):
                v *= cfg.momentum
                v += g * scale
                p -= cfg.learning_rate * v
            epoch_loss += batch_loss * len(idx)
        history.append(epoch_loss / len(inputs))
    net.seed = cfg.seed
    net.loss = cfg.loss
    return history


def fingerprint(net: Network) -> str:
    """Stable identity of architecture plus parameters (sha256 hex)."""
    import hashlib

    h = hashlib.sha256()
    h.update(json.dumps([_layer_spec(layer) for layer in net.layers], sort_keys=True).encode())
    for p in net.param_arrays:
        h.update(p.astype("<f8").tobytes())
    return h.hexdigest()


def combine_fingerprints(parts: Sequence[str]) -> str:
    import hashlib

    return hashlib.sha256("\n".join(parts).encode()).hexdigest()


def _layer_spec(layer) -> dict:
    spec = {"kind": layer.kind}
    if isinstance(layer, Dense):
        spec["fan_in"] = layer.weights.shape[0]
        spec["fan_out"] = layer.weights.shape[1]
    return spec


def save_network(net: Network, manifest_path: str | Path) -> None:
    """Checkpoint: JSON manifest next to a flat little-endian float64
    parameter file, layer by layer, row-major weights then bias."""
    manifest_path = Path(manifest_path)
    params_name = manifest_path.stem + ".bin"
    flat = np.concatenate([p.ravel(order="C") for p in net.param_arrays] or [np.empty(0)])
    manifest = {
        "layers": [_layer_spec(layer) for layer in net.layers],
        "seed": net.seed,
        "loss": net.loss,
        "params_file": params_name,
        "dtype": "<f8",
    }
    (manifest_path.parent / params_name).write_bytes(flat.astype("<f8").tobytes())
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_network(manifest_path: str | Path) -> Network:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
        specs = manifest["layers"]
        params_file = manifest["params_file"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise CheckpointError(f"bad checkpoint manifest {manifest_path}: {exc}") from exc
    if manifest.get("dtype", "<f8") != "<f8":
        raise CheckpointError(f"unsupported parameter dtype {manifest.get('dtype')!r}")
    raw = np.frombuffer((manifest_path.parent / params_file).read_bytes(), dtype="<f8")
    layers: list = []
    offset = 0
    for spec in specs:
        kind = spec.get("kind")
        if kind == "dense":
            fan_in, fan_out = int(spec["fan_in"]), int(spec["fan_out"])
            need = fan_in * fan_out + fan_out
            if offset + need > len(raw):
                raise CheckpointError("parameter file shorter than the manifest implies")
            w = raw[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            b = raw[offset + fan_in * fan_out : offset + need]
            layers.append(Dense(w.copy(), b.copy()))
            offset += need
        elif kind in _LAYER_KINDS:
            layers.append(_LAYER_KINDS[kind]())
        else:
            raise CheckpointError(f"unknown layer kind {kind!r}")
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} unused parameters in {params_file}")
    return Network(layers, seed=manifest.get("seed"), loss=manifest.get("loss"))
