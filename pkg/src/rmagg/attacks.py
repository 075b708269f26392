"""Projected gradient descent inside a norm ball and the unit box.

Attack targets are anything with ``loss_and_input_grad(x, labels) ->
(per-sample losses, gradient)`` and a ``fingerprint()``; PGD ascends
that loss.  Emitted inputs satisfy both constraints exactly: the
perturbation is projected into the epsilon ball after every step and the
result is clamped back into [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import metrics, nnet

NORMS = ("linf", "l2")


class AttackConfigError(ValueError):
    """Attack configuration outside the supported range."""


@dataclass(frozen=True)
class AttackConfig:
    norm: str
    epsilon: float
    steps: int = 40
    step_size: float | None = None
    random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.norm not in NORMS:
            raise AttackConfigError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.epsilon < 0:
            raise AttackConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise AttackConfigError(f"steps must be >= 1, got {self.steps}")
        if self.step_size is not None and self.step_size <= 0:
            raise AttackConfigError(f"step size must be > 0, got {self.step_size}")

    @property
    def alpha(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps


def project(delta: np.ndarray, norm: str, epsilon: float) -> np.ndarray:
    """Project perturbations into the epsilon ball, row by row."""
    if norm == "linf":
        return np.clip(delta, -epsilon, epsilon)
    if norm == "l2":
        norms = np.linalg.norm(delta, axis=-1, keepdims=True)
        factor = np.ones_like(norms)
        np.divide(epsilon, norms, out=factor, where=norms > epsilon)
        return delta * factor
    raise AttackConfigError(f"unknown norm {norm!r}")


class SingleNetTarget:
    """Plain classifier under cross-entropy on the true label."""

    def __init__(self, net: nnet.Network, loss: str = "ce"):
        self.net = net
        self.loss = loss

    def loss_and_input_grad(self, x: np.ndarray, labels):
        losses, grad, _ = nnet.loss_and_grads(self.net, x, labels, self.loss, want_params=False)
        return losses, grad

    def fingerprint(self) -> str:
        return nnet.fingerprint(self.net)


def _random_start(x: np.ndarray, cfg: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.norm == "linf":
        return rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape)
    direction = rng.normal(size=x.shape)
    norms = np.linalg.norm(direction, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    radius = cfg.epsilon * rng.uniform(0.0, 1.0, size=(len(x), 1)) ** (1.0 / x.shape[1])
    return direction / norms * radius


def _enforce_emitted(x: np.ndarray, adv: np.ndarray, norm: str, epsilon: float) -> np.ndarray:
    """Make the emitted array pass the checks a consumer will run.

    The iterates keep delta inside the budget, but the final addition
    x + delta can round so that (adv - x), recomputed in floats, lands
    an ulp outside it.  Nudge offenders toward x until both the box and
    the recomputed budget hold under float arithmetic.
    """
    for _ in range(64):
        adv = np.clip(adv, 0.0, 1.0)
        d = adv - x
        if norm == "linf":
            bad = np.abs(d) > epsilon
            if not bad.any():
                return adv
            adv = np.where(bad, np.nextafter(adv, x), adv)
        else:
            norms = np.linalg.norm(d, axis=-1, keepdims=True)
            if not (norms > epsilon).any():
                return adv
            scale = np.ones_like(norms)
            np.divide(epsilon * (1.0 - 1e-15), norms, out=scale, where=norms > epsilon)
            adv = x + d * scale
    raise AttackConfigError("could not round perturbations into the budget")


def pgd(target, x: np.ndarray, labels, cfg: AttackConfig) -> np.ndarray:
    """Untargeted PGD: maximize the target's loss on the true labels.

    Step direction is sign(grad) for linf and grad normalized to unit
    length for l2; a zero gradient leaves the iterate where it is.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    rng = np.random.default_rng(cfg.seed)
    if cfg.random_start:
        delta = project(_random_start(x, cfg, rng), cfg.norm, cfg.epsilon)
        delta = np.clip(delta, -x, 1.0 - x)
    else:
        delta = np.zeros_like(x)
    for _ in range(cfg.steps):
        _, grad = target.loss_and_input_grad(x + delta, labels)
        if cfg.norm == "linf":
            direction = np.sign(grad)
        else:
            norms = np.linalg.norm(grad, axis=-1, keepdims=True)
            direction = np.divide(grad, norms, out=np.zeros_like(grad), where=norms > 0)
        delta = project(delta + cfg.alpha * direction, cfg.norm, cfg.epsilon)
        # the box in delta coordinates; each bound interval contains 0,
        # so clipping never grows a component or the l2 norm
        delta = np.clip(delta, -x, 1.0 - x)
    return _enforce_emitted(x, x + delta, cfg.norm, cfg.epsilon)


def _cache_index(dataset: data_mod.Dataset, cfg: AttackConfig, fingerprint: str) -> dict:
    return {
        "source": dataset.name,
        "norm": cfg.norm,
        "epsilon": cfg.epsilon,
        "steps": cfg.steps,
        "step_size": cfg.step_size,
        "random_start": cfg.random_start,
        "seed": cfg.seed,
        "fingerprint": fingerprint,
    }


def craft_adversarial(
    target,
    dataset: data_mod.Dataset,
    cfg: AttackConfig,
    cache_dir: str | Path | None = None,
) -> data_mod.Dataset:
    """Attack every item of a dataset; reuse a cache hit when the stored
    index matches dataset, config, and target fingerprint."""
    wanted = _cache_index(dataset, cfg, target.fingerprint())
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        index_path = cache_dir / data_mod.INDEX_FILE
        if index_path.exists():
            cached, index = data_mod.read_flat(cache_dir)
            if all(index.get(key) == value for key, value in wanted.items()):
                return cached
    adv_inputs = pgd(target, dataset.inputs, dataset.labels, cfg)
    adv = data_mod.Dataset(
        inputs=adv_inputs,
        labels=dataset.labels,
        num_classes=dataset.num_classes,
        name=dataset.name,
    )
    if cache_dir is not None:
        data_mod.write_flat(adv, cache_dir, extra_index=wanted)
    return adv


def transfer_attack(
    surrogate_target,
    model,
    dataset: data_mod.Dataset,
    cfg: AttackConfig,
    cache_dir: str | Path | None = None,
) -> metrics.EvalTriple:
    """Craft adversarial inputs against a surrogate, evaluate the model
    on them, and report the correct/rejected/incorrect split."""
    adv = craft_adversarial(surrogate_target, dataset, cfg, cache_dir=cache_dir)
    return metrics.evaluate(model, adv)
