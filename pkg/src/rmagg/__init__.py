"""Reed-Muller codebook aggregation: classify, correct, or reject."""

from .aggregation import (
    AggregateClassifier,
    HybridModel,
    MembershipTask,
    binarize,
    build_hybrid_head,
    derive_tasks,
    relabel,
    train_aggregate,
)
from .attacks import AttackConfig, SingleNetTarget, craft_adversarial, pgd, project, transfer_attack
from .baselines import (
    CcatModel,
    EnsembleLogitsTarget,
    VotingEnsemble,
    ccat_soft_labels,
    train_ccat,
    train_ensemble,
)
from .data import Dataset, digits, load_cifar10_batches, load_idx, synth_blobs, uniform_noise
from .metrics import EvalTriple, SweepTable, evaluate, sweep, to_csv, to_markdown
from .nnet import Network, TrainConfig, classifier_net, load_network, membership_net, save_network, train
from .rm_codes import (
    ClassCodebook,
    Codebook,
    RMParams,
    Verdict,
    assign_class_codewords,
    decode,
    derive_params,
    generate_basis,
    load_classbook,
    min_distance,
    noise_acceptance_prob,
    save_classbook,
    span_codebook,
)

__version__ = "0.1.0"
