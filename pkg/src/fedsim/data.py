"""Synthetic multi-domain real/spoof data, dataset files and splitting.

Every domain draws from the same set of base clusters: one for real faces
and one per attack instrument. Attack clusters sit at fixed offsets that
are shared by all domains, so "print" means the same thing everywhere.
A domain then applies its own affine shift (rotation, per-axis scale,
translation) to all of its samples and adds isotropic noise, which plays
the role of capture devices, illumination and background.

Labels follow the usual anti-spoofing convention: 1 = real, 0 = spoof.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DatasetFormatError,
    EmptyBatchError,
    ProtocolError,
    ShapeError,
    SpecError,
    UnknownDomainError,
)

ATTACK_TYPES = ("none", "print", "video", "mask-A", "mask-B")
SPOOF_ATTACKS = ATTACK_TYPES[1:]
SPLITS = ("train", "test")

DEFAULT_DIM = 8

# unit direction (coordinate index) of each attack cluster relative to the real cluster
_ATTACK_AXIS = {"print": 0, "video": 1, "mask-A": 2, "mask-B": 3}


@dataclass(eq=False)
class DomainDataset:
    """Labeled feature vectors from one domain (or a union of domains).

    ``attacks`` and ``splits`` are per-sample string tags. A sample is
    tagged ``"none"`` exactly when it is real.
    """

    domain_id: str
    features: np.ndarray
    labels: np.ndarray
    attacks: np.ndarray
    splits: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.attacks = np.asarray(self.attacks, dtype=str)
        self.splits = np.asarray(self.splits, dtype=str)
        n = self.labels.shape[0]
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ShapeError(f"features must be an N x d matrix with N={n}, got {self.features.shape}")
        if self.labels.ndim != 1 or self.attacks.shape != (n,) or self.splits.shape != (n,):
            raise ShapeError("labels, attacks and splits must be 1-D with one entry per sample")
        if not np.isin(self.labels, (0, 1)).all():
            raise ShapeError("labels must be 0 (spoof) or 1 (real)")
        if not np.isin(self.attacks, ATTACK_TYPES).all():
            bad = sorted(set(self.attacks.tolist()) - set(ATTACK_TYPES))
            raise ShapeError(f"unknown attack tags {bad}")
        if not np.isin(self.splits, SPLITS).all():
            raise ShapeError(f"split tags must be in {SPLITS}")
        if ((self.attacks == "none") != (self.labels == 1)).any():
            raise ShapeError("attack tag must be 'none' exactly for real samples")
        if not np.isfinite(self.features).all():
            raise ShapeError("features must be finite")

    def __len__(self):
        return int(self.labels.shape[0])

    def __eq__(self, other):
        if not isinstance(other, DomainDataset):
            return NotImplemented
        return (
            self.domain_id == other.domain_id
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.attacks, other.attacks)
            and np.array_equal(self.splits, other.splits)
        )

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_real(self) -> int:
        return int(self.labels.sum())

    @property
    def num_spoof(self) -> int:
        return len(self) - self.num_real

    def has_both_classes(self) -> bool:
        return self.num_real > 0 and self.num_spoof > 0

    def subset(self, mask_or_index) -> DomainDataset:
        return DomainDataset(
            self.domain_id,
            self.features[mask_or_index],
            self.labels[mask_or_index],
            self.attacks[mask_or_index],
            self.splits[mask_or_index],
        )

    def select_split(self, split: str) -> DomainDataset:
        if split not in SPLITS:
            raise SpecError(f"unknown split {split!r}")
        return self.subset(self.splits == split)

    def attack_set(self) -> set[str]:
        return set(self.attacks[self.labels == 0].tolist())

    @classmethod
    def concat(cls, datasets: Sequence[DomainDataset], domain_id: str | None = None) -> DomainDataset:
        """Union with multiplicity, in the given order."""
        if not datasets:
            raise EmptyBatchError("cannot concatenate zero datasets")
        dims = {d.dim for d in datasets}
        if len(dims) != 1:
            raise ShapeError(f"datasets disagree on feature dimension: {sorted(dims)}")
        if domain_id is None:
            domain_id = "&".join(d.domain_id for d in datasets)
        return cls(
            domain_id,
            np.concatenate([d.features for d in datasets]),
            np.concatenate([d.labels for d in datasets]),
            np.concatenate([d.attacks for d in datasets]),
            np.concatenate([d.splits for d in datasets]),
        )


@dataclass
class DomainSpec:
    """Recipe for one synthetic domain.

    ``num_real`` / ``num_spoof`` map split name to sample count. Spoof
    samples are spread round-robin over ``attack_types``. ``rotation`` is
    an angle in radians applied in every coordinate plane ``(i, i + d/2)``;
    ``translation`` and ``scale`` broadcast from scalars to ``d`` entries.
    """

    domain_id: str
    attack_types: tuple[str, ...] = ("print", "video")
    num_real: dict = field(default_factory=lambda: {"train": 100, "test": 100})
    num_spoof: dict = field(default_factory=lambda: {"train": 100, "test": 100})
    rotation: float = 0.0
    translation: object = 0.0
    scale: object = 1.0
    noise_sigma: float = 0.0
    seed: int = 0
    dim: int = DEFAULT_DIM
    attack_separation: float = 3.0
    cluster_std: float = 1.0

    def validate(self) -> None:
        if self.dim < 4:
            raise SpecError(f"dim must be at least 4 to hold every attack axis, got {self.dim}")
        for name in ("num_real", "num_spoof"):
            counts = getattr(self, name)
            if set(counts) - set(SPLITS):
                raise SpecError(f"{name} has unknown splits {sorted(set(counts) - set(SPLITS))}")
            if any(int(v) < 0 for v in counts.values()):
                raise SpecError(f"{name} counts must be non-negative")
        if sum(self.num_spoof.values()) > 0 and not self.attack_types:
            raise SpecError(f"domain {self.domain_id!r} has spoof samples but no attack types")
        bad = set(self.attack_types) - set(SPOOF_ATTACKS)
        if bad:
            raise SpecError(f"unknown attack types {sorted(bad)}")
        if np.any(self.scale_vector() <= 0):
            raise SpecError("scales must be positive")
        self.translation_vector()
        if self.noise_sigma < 0 or self.cluster_std < 0:
            raise SpecError("noise_sigma and cluster_std must be non-negative")

    def scale_vector(self) -> np.ndarray:
        return _broadcast(self.scale, self.dim, "scale")

    def translation_vector(self) -> np.ndarray:
        return _broadcast(self.translation, self.dim, "translation")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["attack_types"] = list(self.attack_types)
        for key in ("translation", "scale"):
            v = d[key]
            d[key] = v.tolist() if isinstance(v, np.ndarray) else (list(v) if isinstance(v, (list, tuple)) else v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DomainSpec:
        d = dict(d)
        if "attack_types" in d:
            d["attack_types"] = tuple(d["attack_types"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise SpecError(str(exc)) from None


def _broadcast(value, dim, name):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(dim, float(arr))
    if arr.shape != (dim,):
        raise SpecError(f"{name} must be a scalar or have length {dim}, got shape {arr.shape}")
    return arr.copy()


def attack_offset(attack: str, dim: int = DEFAULT_DIM, separation: float = 3.0) -> np.ndarray:
    """Center of an attack's base cluster; the real cluster sits at the origin."""
    offset = np.zeros(dim)
    if attack != "none":
        offset[_ATTACK_AXIS[attack]] = separation
    return offset


def rotation_matrix(angle: float, dim: int) -> np.ndarray:
    """Block rotation by ``angle`` in each plane ``(i, i + dim // 2)``."""
    r = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    half = dim // 2
    for i in range(half):
        j = i + half
        r[i, i] = c
        r[j, j] = c
        r[i, j] = -s
        r[j, i] = s
    return r


def generate_domain(spec: DomainSpec) -> DomainDataset:
    """Draw a domain's train and test samples; deterministic in ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d = spec.dim
    labels, attacks, splits = [], [], []
    for split in SPLITS:
        n_real = int(spec.num_real.get(split, 0))
        n_spoof = int(spec.num_spoof.get(split, 0))
        labels += [1] * n_real + [0] * n_spoof
        attacks += ["none"] * n_real
        attacks += [spec.attack_types[i % len(spec.attack_types)] for i in range(n_spoof)]
        splits += [split] * (n_real + n_spoof)
    attacks = np.array(attacks, dtype=str)
    n = len(labels)
    centers = np.stack([attack_offset(a, d, spec.attack_separation) for a in attacks]) if n else np.zeros((0, d))
    base = centers + spec.cluster_std * rng.standard_normal((n, d))
    rot = rotation_matrix(spec.rotation, d)
    shifted = (base * spec.scale_vector()) @ rot.T + spec.translation_vector()
    features = shifted + spec.noise_sigma * rng.standard_normal((n, d))
    return DomainDataset(spec.domain_id, features, np.array(labels, dtype=np.int64), attacks, np.array(splits))


def leave_one_out_split(
    domains: Sequence[DomainDataset], user_domain: str
) -> tuple[list[DomainDataset], DomainDataset]:
    """Hold ``user_domain`` out as the user; every other domain becomes a data center.

    Centers get their train split, the user gets its test split, so no
    sample can land on both sides.
    """
    if len(domains) < 2:
        raise ProtocolError(f"need at least 2 domains, got {len(domains)}")
    ids = [d.domain_id for d in domains]
    if user_domain not in ids:
        raise UnknownDomainError(f"unknown domain {user_domain!r}; have {ids}")
    if len(set(ids)) != len(ids):
        raise ProtocolError(f"duplicate domain ids: {ids}")
    centers = [d.select_split("train") for d in domains if d.domain_id != user_domain]
    user = domains[ids.index(user_domain)].select_split("test")
    return centers, user


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of shuffled mini-batch index arrays; the last may be short.

    Batch membership follows a fresh permutation, but indices inside each
    batch are sorted so the reduction order of a batch is canonical (a
    full batch is the dataset in stored order).
    """
    if batch_size < 1:
        raise SpecError(f"batch_size must be >= 1, got {batch_size}")
    if n < 1:
        raise EmptyBatchError("cannot iterate over an empty dataset")
    perm = rng.permutation(n)
    return [np.sort(perm[i:i + batch_size]) for i in range(0, n, batch_size)]


def batch_iter(
    dataset: DomainDataset, batch_size: int, rng: np.random.Generator
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(features, labels)`` mini-batches covering one epoch."""
    n = len(dataset)
    for idx in batch_indices(n, batch_size, rng):
        if idx.shape[0] == n:
            yield dataset.features, dataset.labels
        else:
            yield dataset.features[idx], dataset.labels[idx]


def save_dataset(dataset: DomainDataset, path) -> None:
    """Write a dataset as CSV with 17 significant digits per real."""
    header = ["domain", "split", "label", "attack"] + [f"f{j}" for j in range(dataset.dim)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            w.writerow(
                [dataset.domain_id, dataset.splits[i], int(dataset.labels[i]), dataset.attacks[i]]
                + [format(v, ".17g") for v in dataset.features[i]]
            )


def load_dataset(path) -> DomainDataset:
    """Read a file written by :func:`save_dataset`, validating each row."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError("empty file", line=1)
    header = rows[0]
    if header[:4] != ["domain", "split", "label", "attack"]:
        raise DatasetFormatError(f"bad header {header[:4]}", line=1)
    dim = len(header) - 4
    if dim < 1 or header[4:] != [f"f{j}" for j in range(dim)]:
        raise DatasetFormatError("feature columns must be f0..f{d-1}", line=1)
    domain_id = None
    feats, labels, attacks, splits = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != dim + 4:
            raise DatasetFormatError(f"expected {dim + 4} fields, got {len(row)}", line=lineno)
        dom, split, label, attack = row[:4]
        if domain_id is None:
            domain_id = dom
        elif dom != domain_id:
            raise DatasetFormatError(f"mixed domains {domain_id!r} and {dom!r}", line=lineno)
        if split not in SPLITS:
            raise DatasetFormatError(f"unknown split {split!r}", line=lineno)
        if label not in ("0", "1"):
            raise DatasetFormatError(f"label must be 0 or 1, got {label!r}", line=lineno)
        if attack not in ATTACK_TYPES:
            raise DatasetFormatError(f"unknown attack tag {attack!r}", line=lineno)
        if (attack == "none") != (label == "1"):
            raise DatasetFormatError(
                f"label {label} inconsistent with attack tag {attack!r}", line=lineno
            )
        try:
            values = [float(v) for v in row[4:]]
        except ValueError as exc:
            raise DatasetFormatError(str(exc), line=lineno) from None
        if not np.isfinite(values).all():
            raise DatasetFormatError("non-finite feature value", line=lineno)
        feats.append(values)
        labels.append(int(label))
        attacks.append(attack)
        splits.append(split)
    if domain_id is None:
        raise DatasetFormatError("no data rows", line=2)
    return DomainDataset(
        domain_id, np.array(feats, dtype=np.float64).reshape(-1, dim), np.array(labels), np.array(attacks), np.array(splits)
    )
