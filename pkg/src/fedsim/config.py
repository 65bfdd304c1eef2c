"""Federation hyperparameters and per-center random stream derivation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import SpecError

OPTIMIZERS = ("plain-gd", "adam")
WEIGHTINGS = ("uniform", "by-sample-count")

# spawn-key tags keeping the initialization stream apart from center streams
_INIT_TAG = 0
_CENTER_TAG = 1


@dataclass(frozen=True)
class FederationConfig:
    """Settings for one federated (or compute-matched centralized) run.

    Defaults follow the reported training setup: learning rate 1e-2,
    64 samples per batch per data center, three local epochs, Adam.
    ``num_centers`` may be left as ``None`` and is then taken from the
    number of datasets handed to the federation.
    """

    num_centers: int | None = None
    rounds: int = 50
    local_epochs: int = 3
    learning_rate: float = 1e-2
    batch_size: int = 64
    optimizer: str = "adam"
    master_seed: int = 0
    aggregation_weighting: str = "uniform"
    hidden_widths: tuple[int, ...] = (16, 8)
    activation: str = "relu"
    early_stop: bool = False
    early_stop_window: int = 5
    early_stop_tol: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.num_centers is not None and self.num_centers < 1:
            raise SpecError(f"num_centers must be >= 1, got {self.num_centers}")
        if self.rounds < 1:
            raise SpecError(f"rounds must be >= 1, got {self.rounds}")
        if self.local_epochs < 1:
            raise SpecError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if not self.learning_rate >= 0:
            # eta == 0 is accepted so identity properties can be exercised
            raise SpecError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise SpecError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise SpecError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.aggregation_weighting not in WEIGHTINGS:
            raise SpecError(
                f"aggregation_weighting must be one of {WEIGHTINGS}, got {self.aggregation_weighting!r}"
            )
        if not 0 <= self.master_seed < 2**64:
            raise SpecError("master_seed must fit in 64 unsigned bits")
        if any(w < 1 for w in self.hidden_widths):
            raise SpecError(f"hidden widths must be positive, got {self.hidden_widths}")

    def layer_widths(self, input_dim: int) -> tuple[int, ...]:
        return (int(input_dim), *self.hidden_widths, 1)

    def replace(self, **changes) -> FederationConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> FederationConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def init_rng(master_seed: int) -> np.random.Generator:
    """Stream used only to draw the initial global parameters."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(_INIT_TAG,)))


def center_rng(master_seed: int, center_index: int, round_index: int) -> np.random.Generator:
    """Private stream for one data center in one round.

    Derived by hashing ``(master_seed, center_index, round_index)`` so the
    draws never depend on the order in which centers are scheduled.
    """
    seq = np.random.SeedSequence(master_seed, spawn_key=(_CENTER_TAG, center_index, round_index))
    return np.random.default_rng(seq)
