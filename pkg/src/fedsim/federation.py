"""Server-side round loop, parameter averaging and the non-federated baselines.

The server half of the protocol only ever touches flat parameter vectors:
``aggregate`` rejects anything else, and ``run_round`` hands each data
center's dataset to that center's local update and receives back nothing
but a vector and its loss trace.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import FederationConfig, center_rng, init_rng
from .data import DomainDataset
from .errors import DegenerateDatasetError, ProtocolError, ShapeError
from .model import (
    ArchSpec,
    LocalResult,
    MlpModel,
    OptimizerState,
    forward,
    init_params,
    local_train,
    save_checkpoint,
)


def checksum(params: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(params, dtype="<f8").tobytes()).hexdigest()[:16]


@dataclass
class RoundLog:
    round_index: int
    center_losses: list  # [first-epoch loss, last-epoch loss] per center, by center index
    checksum: str
    broadcast_checksum: str
    duration: float

    @property
    def global_loss(self) -> float:
        return float(np.mean([last for _, last in self.center_losses]))

    def to_json(self) -> str:
        record = asdict(self)
        record["t"] = record.pop("round_index")
        return json.dumps(record, sort_keys=True)


def aggregate(
    updates: Sequence[np.ndarray] | Mapping[int, np.ndarray],
    weights: Sequence[float] | None = None,
) -> np.ndarray:
    """Average parameter vectors from the data centers.

    Without ``weights`` this is the plain ``1/K`` mean. A mapping from
    center index to vector is reduced in ascending index order, so the
    result does not depend on arrival order. Summation is always left to
    right.
    """
    if isinstance(updates, Mapping):
        keys = sorted(updates)
        updates = [updates[k] for k in keys]
        if isinstance(weights, Mapping):
            weights = [weights[k] for k in keys]
    updates = list(updates)
    if not updates:
        raise ProtocolError("aggregate needs at least one update")
    for u in updates:
        if not isinstance(u, np.ndarray) or u.dtype.kind != "f":
            raise TypeError(f"aggregate accepts float parameter vectors only, got {type(u).__name__}")
    size = updates[0].shape
    if len(size) != 1 or any(u.shape != size for u in updates):
        raise ShapeError(f"updates must be equal-length vectors, got {[u.shape for u in updates]}")

    if weights is None:
        acc = updates[0].astype(np.float64)
        for u in updates[1:]:
            acc = acc + u
        return acc / len(updates)

    w = [float(x) for x in weights]
    if len(w) != len(updates):
        raise ShapeError(f"{len(w)} weights for {len(updates)} updates")
    if any(x < 0 for x in w) or sum(w) <= 0:
        raise ProtocolError("weights must be non-negative with a positive sum")
    acc = w[0] * updates[0]
    for x, u in zip(w[1:], updates[1:]):
        acc = acc + x * u
    return acc / sum(w)


def _arch_for(centers: Sequence[DomainDataset], config: FederationConfig) -> ArchSpec:
    dims = {c.dim for c in centers}
    if len(dims) != 1:
        raise ShapeError(f"centers disagree on feature width: {sorted(dims)}")
    return ArchSpec(config.layer_widths(dims.pop()), config.activation)


def _default_executor() -> Executor | None:
    n = int(os.environ.get("FEDSIM_THREADS", "1") or 1)
    return ThreadPoolExecutor(max_workers=n) if n > 1 else None


def run_round(
    global_params: np.ndarray,
    centers: Sequence[DomainDataset],
    config: FederationConfig,
    round_index: int = 0,
    rng_streams: Sequence[np.random.Generator] | None = None,
    arch: ArchSpec | None = None,
    executor: Executor | None = None,
) -> tuple[np.ndarray, RoundLog]:
    """Broadcast, train every center locally, then average.

    Every center starts from an identical read-only copy of
    ``global_params``. Results are collected by center index before
    aggregation, so sequential and concurrent dispatch agree bit for bit.
    """
    if not centers:
        raise ProtocolError("a round needs at least one data center")
    if config.num_centers is not None and config.num_centers != len(centers):
        raise ProtocolError(f"config expects {config.num_centers} centers, got {len(centers)}")
    if arch is None:
        arch = _arch_for(centers, config)
    if rng_streams is None:
        rng_streams = [center_rng(config.master_seed, k, round_index) for k in range(len(centers))]
    if len(rng_streams) != len(centers):
        raise ProtocolError("one rng stream per center is required")

    start = time.perf_counter()
    broadcast = np.array(global_params, dtype=np.float64)
    broadcast.flags.writeable = False

    def update(k: int) -> LocalResult:
        try:
            return local_train(broadcast, arch, centers[k], config, rng_streams[k], config.local_epochs)
        except DegenerateDatasetError as exc:
            raise DegenerateDatasetError(str(exc), center_index=k) from None

    own_executor = executor is None
    if own_executor:
        executor = _default_executor()
    try:
        if executor is None:
            results = [update(k) for k in range(len(centers))]
        else:
            futures = {k: executor.submit(update, k) for k in range(len(centers))}
            results = [futures[k].result() for k in range(len(centers))]
    finally:
        if own_executor and executor is not None:
            executor.shutdown()

    weights = None
    if config.aggregation_weighting == "by-sample-count":
        weights = [len(c) for c in centers]
    new = aggregate([r.params for r in results], weights)
    log = RoundLog(
        round_index=round_index,
        center_losses=[[r.epoch_losses[0], r.epoch_losses[-1]] for r in results],
        checksum=checksum(new),
        broadcast_checksum=checksum(broadcast),
        duration=time.perf_counter() - start,
    )
    return new, log


def initial_model(arch: ArchSpec, config: FederationConfig) -> MlpModel:
    return MlpModel(arch, init_params(arch, init_rng(config.master_seed)))


def _plateaued(losses: list[float], window: int, tol: float) -> bool:
    if len(losses) <= window:
        return False
    old, new = losses[-window - 1], losses[-1]
    return abs(new - old) <= tol * max(abs(old), 1e-300)


def run_federation(
    centers: Sequence[DomainDataset],
    config: FederationConfig,
    log_path=None,
    checkpoint_dir=None,
    checkpoint_every: int = 0,
    executor: Executor | None = None,
) -> tuple[MlpModel, list[RoundLog]]:
    """Full federated training; returns the model users download and the round logs.

    ``log_path`` receives one JSON object per round. With
    ``checkpoint_dir`` and ``checkpoint_every > 0`` the global model is
    written as ``round_XXXX.fedw`` every that many rounds.
    """
    if not centers:
        raise ProtocolError("federation needs at least one data center")
    arch = _arch_for(centers, config)
    params = initial_model(arch, config).params
    logs: list[RoundLog] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    try:
        for t in range(config.rounds):
            params, log = run_round(params, centers, config, round_index=t, arch=arch, executor=executor)
            logs.append(log)
            if log_fh is not None:
                log_fh.write(log.to_json() + "\n")
            if checkpoint_dir is not None and checkpoint_every > 0 and (t + 1) % checkpoint_every == 0:
                save_checkpoint(MlpModel(arch, params), Path(checkpoint_dir) / f"round_{t + 1:04d}.fedw")
            if config.early_stop and _plateaued(
                [g.global_loss for g in logs], config.early_stop_window, config.early_stop_tol
            ):
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    return MlpModel(arch, params), logs


def train_centralized(
    dataset: DomainDataset, config: FederationConfig, center_index: int = 0
) -> tuple[MlpModel, list[float]]:
    """Epoch-matched centralized training: ``rounds * local_epochs`` epochs.

    Epochs are grouped per round so each group draws from the same stream
    center ``center_index`` would use in that round; optimizer state is
    carried across the whole run. Under plain gradient descent this makes
    a one-center federation and this trainer bit-identical.
    """
    arch = _arch_for([dataset], config)
    params = initial_model(arch, config).params
    state = OptimizerState.from_config(config, arch.num_params)
    losses: list[float] = []
    for t in range(config.rounds):
        rng = center_rng(config.master_seed, center_index, t)
        res = local_train(params, arch, dataset, config, rng, config.local_epochs, state)
        params, state = res.params, res.state
        losses += res.epoch_losses
    return MlpModel(arch, params), losses


def train_single(center: DomainDataset, config: FederationConfig) -> MlpModel:
    """Model trained on one data center's data alone."""
    return train_centralized(center, config)[0]


def train_all(centers: Sequence[DomainDataset], config: FederationConfig) -> MlpModel:
    """Upper-bound baseline: pool every center's data and train centrally."""
    if not centers:
        raise ProtocolError("train_all needs at least one data center")
    return train_centralized(DomainDataset.concat(list(centers)), config)[0]


def fused_predict(models: Sequence[MlpModel], x) -> float | np.ndarray:
    """Average of the per-model scores, summed left to right."""
    if not models:
        raise ProtocolError("fused_predict needs at least one model")
    dims = {m.arch.input_dim for m in models}
    if len(dims) != 1:
        raise ShapeError(f"models disagree on input width: {sorted(dims)}")
    total = forward(models[0], x)
    for m in models[1:]:
        total = total + forward(m, x)
    return total / len(models)
