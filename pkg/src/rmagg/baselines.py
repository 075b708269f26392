"""Reference models: sigma-threshold voting ensembles and a
confidence-calibrated classifier that rejects under-confident inputs.

Both produce the same Verdict vocabulary as the aggregate decoder, so
every evaluation path treats them interchangeably.
"""

from __future__ import annotations

import copy
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import attacks, nnet
from .data import Dataset
from .rm_codes import Verdict


class BaselineConfigError(ValueError):
    """Ensemble or calibration setting outside the supported range."""


@dataclass
class VotingEnsemble:
    """Full classifiers that must agree on a sigma fraction to accept.

    A strict plurality below sigma, or a tie for the top vote, rejects.
    The comparison is inclusive: agreement exactly at sigma accepts.
    """

    networks: list[nnet.Network]
    sigma: float = 1.0

    def __post_init__(self):
        if not self.networks:
            raise BaselineConfigError("ensemble needs at least one member")
        if not 0.0 < self.sigma <= 1.0:
            raise BaselineConfigError(f"sigma must sit in (0, 1], got {self.sigma}")

    @property
    def num_classes(self) -> int:
        for layer in reversed(self.networks[0].layers):
            if isinstance(layer, nnet.Dense):
                return layer.weights.shape[1]
        raise BaselineConfigError("member networks carry no dense layer")

    def member_labels(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        return np.stack([net.forward_logits(inputs).argmax(axis=1) for net in self.networks])

    def predict(self, inputs: np.ndarray) -> list[Verdict]:
        votes = self.member_labels(inputs)
        verdicts = []
        for column in votes.T:
            counts = np.bincount(column, minlength=self.num_classes)
            top = counts.max()
            if (counts == top).sum() > 1:
                verdicts.append(Verdict.reject())
            elif top / len(self.networks) >= self.sigma:
                verdicts.append(Verdict.exact(int(counts.argmax())))
            else:
                verdicts.append(Verdict.reject())
        return verdicts

    def mean_logits(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        return np.mean([net.forward_logits(inputs) for net in self.networks], axis=0)

    def with_sigma(self, sigma: float) -> "VotingEnsemble":
        clone = copy.copy(self)
        clone.sigma = sigma
        clone.__post_init__()
        return clone


class EnsembleLogitsTarget:
    """Differentiable view for attacks: cross-entropy on the equal-weight
    mean of member logits."""

    def __init__(self, ensemble: VotingEnsemble):
        self.ensemble = ensemble

    def loss_and_input_grad(self, x: np.ndarray, labels):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cached = [net.forward_logits_cached(x) for net in self.ensemble.networks]
        mean_z = np.mean([z for z, _ in cached], axis=0)
        losses, grad_z = nnet.ce_loss(mean_z, labels)
        share = grad_z / len(cached)
        grad_x = np.zeros_like(x)
        for net, (_, ctxs) in zip(self.ensemble.networks, cached):
            gx, _ = net.backward_from_logits(ctxs, share)
            grad_x += gx
        return losses, grad_x

    def fingerprint(self) -> str:
        return nnet.combine_fingerprints(
            [nnet.fingerprint(net) for net in self.ensemble.networks]
        )


def _fit_classifier(args) -> nnet.Network:
    inputs, labels, hidden, num_classes, cfg = args
    net = nnet.classifier_net(inputs.shape[1], hidden, num_classes, seed=cfg.seed)
    nnet.train(net, inputs, labels, cfg)
    return net


def train_ensemble(
    members: int,
    train_set: Dataset,
    hidden: Sequence[int],
    cfg: nnet.TrainConfig,
    sigma: float = 1.0,
    jobs: int = 1,
) -> VotingEnsemble:
    """Fit ``members`` classifiers that differ only in seed (cfg.seed + i)."""
    work = []
    for i in range(members):
        member_cfg = nnet.TrainConfig(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            momentum=cfg.momentum,
            seed=cfg.seed + i,
            loss="ce",
        )
        work.append((train_set.inputs, train_set.labels, tuple(hidden), train_set.num_classes, member_cfg))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            networks = list(pool.map(_fit_classifier, work))
    else:
        networks = [_fit_classifier(w) for w in work]
    return VotingEnsemble(networks=networks, sigma=sigma)


def ccat_soft_labels(
    labels: np.ndarray, deltas: np.ndarray, num_classes: int, epsilon: float, rho: float = 1.0
) -> np.ndarray:
    """Interpolate one-hot toward uniform as the perturbation grows.

    lambda = (1 - min(1, ||delta||_inf / epsilon)) ** rho; the target is
    lambda * one_hot + (1 - lambda) / num_classes, so a clean input keeps
    its one-hot label and a full-epsilon one gets the uniform vector.
    """
    if epsilon <= 0:
        raise BaselineConfigError(f"epsilon must be > 0, got {epsilon}")
    if rho <= 0:
        raise BaselineConfigError(f"rho must be > 0, got {rho}")
    labels = np.asarray(labels)
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    scaled = np.minimum(1.0, np.abs(deltas).max(axis=1) / epsilon)
    lam = (1.0 - scaled) ** rho
    onehot = np.eye(num_classes)[labels]
    return lam[:, None] * onehot + (1.0 - lam)[:, None] / num_classes


@dataclass
class CcatModel:
    """Classifier that accepts only confident softmax outputs."""

    network: nnet.Network
    tau_conf: float
    epsilon_train: float
    rho: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.tau_conf <= 1.0:
            raise BaselineConfigError(f"tau_conf must sit in [0, 1], got {self.tau_conf}")

    def confidence(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        return self.network.forward(inputs).max(axis=1)

    def predict(self, inputs: np.ndarray) -> list[Verdict]:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        probs = self.network.forward(inputs)
        verdicts = []
        for row in probs:
            if row.max() >= self.tau_conf:
                verdicts.append(Verdict.exact(int(row.argmax())))
            else:
                verdicts.append(Verdict.reject())
        return verdicts

    def with_tau_conf(self, tau_conf: float) -> "CcatModel":
        clone = copy.copy(self)
        clone.tau_conf = tau_conf
        clone.__post_init__()
        return clone


def train_ccat(
    train_set: Dataset,
    hidden: Sequence[int],
    cfg: nnet.TrainConfig,
    attack_cfg: attacks.AttackConfig,
    tau_conf: float = 0.5,
    rho: float = 1.0,
    adv_fraction: float = 0.5,
) -> tuple[CcatModel, list[float]]:
    """Adversarial training with confidence-decaying soft labels.

    Every batch keeps the leading (1 - adv_fraction) share clean with
    one-hot targets; the trailing share is attacked against the current
    network and labeled by ccat_soft_labels.  With adv_fraction 0 this
    reduces exactly to plain soft-target training on one-hot labels.
    """
    if not 0.0 <= adv_fraction <= 1.0:
        raise BaselineConfigError(f"adv fraction must sit in [0, 1], got {adv_fraction}")
    num_classes = train_set.num_classes
    net = nnet.classifier_net(train_set.dim, hidden, num_classes, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    velocity = [np.zeros_like(p) for p in net.param_arrays]
    onehot = np.eye(num_classes)
    history: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(train_set), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = train_set.inputs[idx]
            yb = train_set.labels[idx]
            n_adv = int(round(len(idx) * adv_fraction))
            if n_adv:
                target = attacks.SingleNetTarget(net, loss="ce")
                x_adv = attacks.pgd(target, xb[-n_adv:], yb[-n_adv:], attack_cfg)
                soft = ccat_soft_labels(
                    yb[-n_adv:], x_adv - xb[-n_adv:], num_classes, attack_cfg.epsilon, rho
                )
                xb = np.concatenate([xb[: len(idx) - n_adv], x_adv])
                targets = np.concatenate([onehot[yb[: len(idx) - n_adv]], soft])
            else:
                targets = onehot[yb]
            losses, _, grads = nnet.loss_and_grads(net, xb, targets, "soft-ce")
            batch_loss = float(losses.mean())
            if not np.isfinite(batch_loss):
                raise nnet.TrainingDiverged(f"non-finite loss {batch_loss}")
            scale = 1.0 / len(idx)
            for p, v, g in zip(net.param_arrays, velocity, grads):
                v *= cfg.momentum
                v += g * scale
                p -= cfg.learning_rate * v
            epoch_loss += batch_loss * len(idx)
        history.append(epoch_loss / len(train_set))
    net.loss = "soft-ce"
    model = CcatModel(
        network=net, tau_conf=tau_conf, epsilon_train=attack_cfg.epsilon, rho=rho
    )
    return model, history
