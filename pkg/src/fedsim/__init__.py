"""Federated anti-spoofing simulator.

Data centers train a small MLP locally on synthetic real/spoof features,
a server averages their parameters round by round, and the resulting
model is evaluated on a held-out user domain with HTER, EER and AUC.
"""

from .config import FederationConfig
from .data import DomainDataset, DomainSpec, generate_domain, leave_one_out_split, load_dataset, save_dataset
from .errors import FedSimError
from .federation import aggregate, fused_predict, run_federation, run_round, train_all, train_single
from .metrics import EvalReport, ScoreSet, auc, cross_domain_threshold, eer, hter
from .model import ArchSpec, MlpModel, deserialize_checkpoint, forward, serialize_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ArchSpec",
    "DomainDataset",
    "DomainSpec",
    "EvalReport",
    "FedSimError",
    "FederationConfig",
    "MlpModel",
    "ScoreSet",
    "aggregate",
    "auc",
    "cross_domain_threshold",
    "deserialize_checkpoint",
    "eer",
    "forward",
    "fused_predict",
    "generate_domain",
    "hter",
    "leave_one_out_split",
    "load_dataset",
    "run_federation",
    "run_round",
    "save_dataset",
    "serialize_checkpoint",
    "train_all",
    "train_single",
]
