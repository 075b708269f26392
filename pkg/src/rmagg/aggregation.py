"""Aggregate classification over per-bit set-membership networks.

Each bit position of the class codebook defines a binary task: classes
whose codeword carries a 1 there are the positive set.  One network per
bit scores membership; thresholded scores form a word that is decoded
against the class codewords to classify, correct, or reject.
"""

from __future__ import annotations

import copy
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nnet
from .data import Dataset
from .rm_codes import ClassCodebook, CorrectionBudgetError, Verdict, decode


class TaskError(ValueError):
    """Membership task and dataset disagree."""


class HeadFitError(RuntimeError):
    """Differentiable head failed to match the symbolic decode rule."""


@dataclass(frozen=True)
class MembershipTask:
    """One bit position and the classes scored positive there."""

    bit_index: int
    positive_classes: frozenset[int]


def derive_tasks(classbook: ClassCodebook) -> list[MembershipTask]:
    """Read the codeword columns into one task per bit position.

    The no-constant-column rule on class codebooks guarantees every task
    has a non-empty positive and negative side.
    """
    n = classbook.params.n
    tasks = []
    for j in range(n):
        positive = frozenset(
            label
            for label, word in enumerate(classbook.codewords)
            if (word >> (n - 1 - j)) & 1
        )
        tasks.append(MembershipTask(bit_index=j, positive_classes=positive))
    return tasks


def relabel(dataset: Dataset, task: MembershipTask) -> Dataset:
    """Binary view of a labeled dataset: 1 inside the positive set.

    An empty dataset passes through as an empty binary dataset.
    """
    if task.positive_classes and max(task.positive_classes) >= dataset.num_classes:
        raise TaskError(
            f"task references class {max(task.positive_classes)} "
            f"but dataset has {dataset.num_classes}"
        )
    binary = np.isin(dataset.labels, sorted(task.positive_classes)).astype(np.int64)
    return Dataset(
        inputs=dataset.inputs,
        labels=binary,
        num_classes=2,
        name=f"{dataset.name}-bit{task.bit_index}",
    )


def binarize(scores: np.ndarray, tau: float) -> int:
    """Threshold a score vector into a word; score >= tau sets the bit.

    Bit order follows the codeword convention: the first score is the
    leftmost (most significant) bit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError(f"expected one score vector, got shape {scores.shape}")
    word = 0
    for v in scores:
        word = (word << 1) | int(v >= tau)
    return word


def binarize_batch(scores: np.ndarray, tau: float) -> list[int]:
    scores = np.asarray(scores, dtype=np.float64)
    return [binarize(row, tau) for row in scores]


@dataclass
class AggregateClassifier:
    """Per-bit membership networks plus threshold and correction budget."""

    classbook: ClassCodebook
    networks: list[nnet.Network]
    tau: float = 0.5
    ec: int = 0

    def __post_init__(self):
        n = self.classbook.params.n
        if len(self.networks) != n:
            raise TaskError(f"need {n} networks, got {len(self.networks)}")
        if not 0 <= self.ec <= self.classbook.params.t:
            raise CorrectionBudgetError(
                f"ec={self.ec} outside [0, t={self.classbook.params.t}]"
            )

    def scores(self, inputs: np.ndarray) -> np.ndarray:
        """Membership score matrix, one column per bit position."""
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        return np.concatenate([net.forward(inputs) for net in self.networks], axis=1)

    def words(self, inputs: np.ndarray) -> list[int]:
        return binarize_batch(self.scores(inputs), self.tau)

    def predict(self, inputs: np.ndarray) -> list[Verdict]:
        return [decode(word, self.classbook, self.ec) for word in self.words(inputs)]

    def classify(self, x: np.ndarray) -> Verdict:
        return self.predict(np.atleast_2d(x))[0]

    def with_ec(self, ec: int) -> "AggregateClassifier":
        clone = copy.copy(self)
        clone.ec = ec
        clone.__post_init__()
        return clone

    def with_tau(self, tau: float) -> "AggregateClassifier":
        clone = copy.copy(self)
        clone.tau = tau
        return clone


def _fit_member(args) -> nnet.Network:
    inputs, targets, hidden, cfg = args
    net = nnet.membership_net(inputs.shape[1], hidden, seed=cfg.seed)
    nnet.train(net, inputs, targets, cfg)
    return net


def train_aggregate(
    classbook: ClassCodebook,
    train_set: Dataset,
    hidden: Sequence[int],
    cfg: nnet.TrainConfig,
    tau: float = 0.5,
    ec: int = 0,
    jobs: int = 1,
) -> AggregateClassifier:
    """Fit one membership network per bit task.

    Member i trains with seed cfg.seed + i, so results do not depend on
    whether a worker pool is used.
    """
    tasks = derive_tasks(classbook)
    work = []
    for task in tasks:
        binary = relabel(train_set, task)
        member_cfg = nnet.TrainConfig(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            momentum=cfg.momentum,
            seed=cfg.seed + task.bit_index,
            loss="bce",
        )
        work.append((binary.inputs, binary.labels.astype(np.float64), tuple(hidden), member_cfg))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            networks = list(pool.map(_fit_member, work))
    else:
        networks = [_fit_member(w) for w in work]
    return AggregateClassifier(classbook=classbook, networks=networks, tau=tau, ec=ec)


def verdict_heads(classbook: ClassCodebook, verdicts: Sequence[Verdict]) -> np.ndarray:
    """Map verdicts to head labels: class index, or |C| for a rejection."""
    reject_label = classbook.num_classes
    return np.array(
        [v.label if v.accepted else reject_label for v in verdicts], dtype=np.int64
    )


def build_hybrid_head(
    agg: AggregateClassifier,
    inputs: np.ndarray,
    seed: int = 0,
    cfg: nnet.TrainConfig | None = None,
    holdout_fraction: float = 0.25,
    min_agreement: float = 0.95,
) -> nnet.Network:
    """Train a differentiable stand-in for binarize-then-decode.

    The head maps score vectors to |C| + 1 logits (classes plus reject)
    with one hidden layer of 4n units.  It must agree with the symbolic
    rule on at least ``min_agreement`` of held-out scores.
    """
    params = agg.classbook.params
    scores = agg.scores(inputs)
    labels = verdict_heads(
        agg.classbook, [decode(w, agg.classbook, agg.ec) for w in binarize_batch(scores, agg.tau)]
    )
    if len(scores) < 8:
        raise HeadFitError("need at least 8 score vectors to fit and check the head")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(scores))
    cut = max(1, int(round(len(scores) * holdout_fraction)))
    hold, fit = order[:cut], order[cut:]
    head = nnet.classifier_net(params.n, [4 * params.n], agg.classbook.num_classes + 1, seed=seed)
    cfg = cfg or nnet.TrainConfig(epochs=200, batch_size=64, learning_rate=0.5, seed=seed)
    nnet.train(head, scores[fit], labels[fit], cfg)
    predicted = head.forward_logits(scores[hold]).argmax(axis=1)
    agreement = float((predicted == labels[hold]).mean())
    if agreement < min_agreement:
        raise HeadFitError(
            f"head agrees with symbolic decode on {agreement:.1%} of held-out scores, "
            f"needs {min_agreement:.1%}"
        )
    return head


class HybridModel:
    """End-to-end differentiable pipeline: membership nets, then head.

    Exposes the attack-target interface; the loss is cross-entropy of the
    head's |C| + 1 logits against the true class.
    """

    def __init__(self, agg: AggregateClassifier, head: nnet.Network):
        self.agg = agg
        self.head = head

    def forward_logits(self, x: np.ndarray) -> np.ndarray:
        return self.head.forward_logits(self.agg.scores(x))

    def loss_and_input_grad(self, x: np.ndarray, labels: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        pre = []
        scores = []
        for net in self.agg.networks:
            z, ctxs = net.forward_logits_cached(x)
            v = nnet.sigmoid(z)
            pre.append((z, ctxs, v))
            scores.append(v)
        score_mat = np.concatenate(scores, axis=1)
        z_head, head_ctxs = self.head.forward_logits_cached(score_mat)
        losses, grad_z = nnet.ce_loss(z_head, labels)
        grad_scores, _ = self.head.backward_from_logits(head_ctxs, grad_z)
        grad_x = np.zeros_like(x)
        for j, net in enumerate(self.agg.networks):
            z, ctxs, v = pre[j]
            grad_zj = grad_scores[:, j : j + 1] * v * (1.0 - v)
            gx, _ = net.backward_from_logits(ctxs, grad_zj)
            grad_x += gx
        return losses, grad_x

    def fingerprint(self) -> str:
        parts = [nnet.fingerprint(net) for net in self.agg.networks]
        parts.append(nnet.fingerprint(self.head))
        return nnet.combine_fingerprints(parts)
