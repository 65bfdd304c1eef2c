"""Binary MLP classifier with hand-written backprop, optimizers and checkpoints.

All parameters live in one flat float64 vector (the unit exchanged
between data centers and the server). The canonical layout is, per layer,
the weight matrix row-major as ``[out x in]`` followed by the biases.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .config import FederationConfig
from .data import DomainDataset, batch_indices
from .errors import (
    CheckpointFormatError,
    DegenerateDatasetError,
    EmptyBatchError,
    ShapeError,
    SpecError,
)

ACTIVATIONS = ("relu", "tanh")
EPS_CLIP = 1e-12

CHECKPOINT_MAGIC = b"FEDW"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise SpecError("need at least an input and an output width")
        if any(w < 1 for w in widths):
            raise SpecError(f"layer widths must be positive, got {widths}")
        if widths[-1] != 1:
            raise SpecError(f"output width must be 1, got {widths[-1]}")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def num_params(self) -> int:
        return _layer_slices(self.layer_widths)[-1][1].stop

    def layer_slices(self) -> list[tuple[slice, slice, tuple[int, int]]]:
        """(weight slice, bias slice, weight shape) per layer in canonical order."""
        return _layer_slices(self.layer_widths)


@functools.lru_cache(maxsize=None)
def _layer_slices(w):
    out, pos = [], 0
    for i in range(len(w) - 1):
        n_in, n_out = w[i], w[i + 1]
        ws = slice(pos, pos + n_out * n_in)
        pos += n_out * n_in
        bs = slice(pos, pos + n_out)
        pos += n_out
        out.append((ws, bs, (n_out, n_in)))
    return out


@dataclass
class MlpModel:
    arch: ArchSpec
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.arch.num_params,):
            raise ShapeError(
                f"arch {self.arch.layer_widths} needs {self.arch.num_params} params, got shape {self.params.shape}"
            )

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` into the flat parameter vector."""
        return [
            (self.params[ws].reshape(shape), self.params[bs])
            for ws, bs, shape in self.arch.layer_slices()
        ]

    def with_params(self, params: np.ndarray) -> MlpModel:
        return MlpModel(self.arch, params)


def init_params(arch: ArchSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    params = np.zeros(arch.num_params)
    for ws, _, (n_out, n_in) in arch.layer_slices():
        limit = np.sqrt(6.0 / (n_in + n_out))
        params[ws] = rng.uniform(-limit, limit, size=n_out * n_in)
    return params


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _views(flat, arch):
    """``(W, b)`` views into a flat vector laid out for ``arch``."""
    return [(flat[ws].reshape(shape), flat[bs]) for ws, bs, shape in arch.layer_slices()]


def _mean_nll(s, y):
    c = np.minimum(np.maximum(s, EPS_CLIP), 1.0 - EPS_CLIP)
    return float(-(y @ np.log(c) + (1.0 - y) @ np.log1p(-c)) / s.size)


def _check_features(arch, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != arch.input_dim:
        raise ShapeError(f"expected features of width {arch.input_dim}, got shape {x.shape}")
    return x


def forward(model: MlpModel, x) -> float | np.ndarray:
    """Score(s) in (0, 1); higher means more likely real.

    A 1-D ``x`` gives a float, an ``N x d`` matrix gives an array of N.
    """
    x = _check_features(model.arch, x)
    a = np.atleast_2d(x)
    layers = model.layers()
    for W, b in layers[:-1]:
        a = _act(a @ W.T + b, model.arch.activation)
    W, b = layers[-1]
    s = expit(a @ W.T + b)[:, 0]
    return float(s[0]) if x.ndim == 1 else s


def bce_loss(scores, labels) -> float:
    """Mean negative log-likelihood of binary labels under ``scores``."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ShapeError(f"scores {s.shape} and labels {y.shape} must be equal-length 1-D")
    if s.size == 0:
        raise EmptyBatchError("bce_loss of an empty batch")
    return _mean_nll(s, y)


def loss_and_gradient(model: MlpModel, features, labels) -> tuple[float, np.ndarray]:
    """Batch loss and its exact gradient w.r.t. the flat parameter vector.

    The output gradient uses ``score - label``; this ignores the score
    clamp, which only bites within 1e-12 of a saturated score.
    """
    x = _check_features(model.arch, features)
    if x.ndim != 2:
        raise ShapeError("features must be an N x d matrix")
    y = np.asarray(labels, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise EmptyBatchError("loss_gradient of an empty batch")
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")

    return _loss_and_gradient(model.arch, model.params, x, y)


def _loss_and_gradient(arch, params, x, y, layers=None):
    # unchecked core shared with the training loop; ``layers`` may be
    # views the caller keeps into ``params``
    if layers is None:
        layers = _views(params, arch)
    relu = arch.activation == "relu"
    acts = [x]
    a = x
    for W, b in layers[:-1]:
        z = a @ W.T
        z += b
        a = np.maximum(z, 0.0) if relu else np.tanh(z)
        acts.append(a)
    W, b = layers[-1]
    z = a @ W.T
    z += b
    s = expit(z[:, 0])
    loss = _mean_nll(s, y)

    grad = np.empty(arch.num_params)
    grad_layers = _views(grad, arch)
    delta = ((s - y) / s.size)[:, None]
    for i in range(len(layers) - 1, -1, -1):
        gW, gb = grad_layers[i]
        np.matmul(delta.T, acts[i], out=gW)
        np.add.reduce(delta, axis=0, out=gb)
        if i > 0:
            delta = delta @ layers[i][0]
            if relu:
                # relu(z) > 0 exactly where z > 0
                delta *= acts[i] > 0
            else:
                delta *= 1.0 - acts[i] * acts[i]
    return loss, grad


def loss_gradient(model: MlpModel, batch: tuple) -> np.ndarray:
    features, labels = batch
    return loss_and_gradient(model, features, labels)[1]


@dataclass
class OptimizerState:
    kind: str = "plain-gd"
    step_count: int = 0
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, kind: str, size: int, beta1=0.9, beta2=0.999, epsilon=1e-8) -> OptimizerState:
        if kind == "adam":
            return cls(kind, 0, np.zeros(size), np.zeros(size), beta1, beta2, epsilon)
        if kind == "plain-gd":
            return cls(kind, 0, beta1=beta1, beta2=beta2, epsilon=epsilon)
        raise SpecError(f"unknown optimizer {kind!r}")

    @classmethod
    def from_config(cls, config: FederationConfig, size: int) -> OptimizerState:
        return cls.fresh(config.optimizer, size, config.beta1, config.beta2, config.epsilon)


def optimizer_step(
    params: np.ndarray, grad: np.ndarray, state: OptimizerState, eta: float
) -> tuple[np.ndarray, OptimizerState]:
    """One update; returns new params and new state, inputs untouched."""
    if params.shape != grad.shape or params.ndim != 1:
        raise ShapeError(f"params {params.shape} and grad {grad.shape} must be equal-length vectors")
    if eta < 0:
        raise SpecError(f"learning rate must be non-negative, got {eta}")
    if state.kind == "plain-gd":
        return params - eta * grad, OptimizerState(
            "plain-gd", state.step_count + 1, beta1=state.beta1, beta2=state.beta2, epsilon=state.epsilon
        )
    if state.kind != "adam":
        raise SpecError(f"unknown optimizer {state.kind!r}")
    if state.first_moment.shape != params.shape or state.second_moment.shape != params.shape:
        raise ShapeError("optimizer moments do not match parameter length")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - eta * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new, OptimizerState("adam", t, m, v, state.beta1, state.beta2, state.epsilon)


@dataclass
class LocalResult:
    params: np.ndarray
    state: OptimizerState
    epoch_losses: list = field(default_factory=list)


def local_train(
    params: np.ndarray,
    arch: ArchSpec,
    dataset: DomainDataset,
    config: FederationConfig,
    rng: np.random.Generator,
    epochs: int,
    state: OptimizerState | None = None,
) -> LocalResult:
    """Run ``epochs`` passes of shuffled mini-batch training.

    ``state`` lets a centralized trainer carry optimizer moments across
    calls; ``None`` starts from fresh moments.
    """
    if not dataset.has_both_classes():
        raise DegenerateDatasetError(
            f"dataset {dataset.domain_id!r} has {dataset.num_real} real and {dataset.num_spoof} spoof samples"
        )
    if dataset.dim != arch.input_dim:
        raise ShapeError(f"dataset width {dataset.dim} does not match model input {arch.input_dim}")
    if state is None:
        state = OptimizerState.from_config(config, arch.num_params)
    if config.learning_rate < 0:
        raise SpecError(f"learning rate must be non-negative, got {config.learning_rate}")
    if state.kind not in ("adam", "plain-gd"):
        raise SpecError(f"unknown optimizer {state.kind!r}")
    # in-place twin of optimizer_step: same operations in the same order,
    # so results match the functional form bit for bit
    eta = config.learning_rate
    p = params.copy()
    layers = _views(p, arch)
    y_all = dataset.labels.astype(np.float64)
    adam = state.kind == "adam"
    t = state.step_count
    if adam:
        m, v = state.first_moment.copy(), state.second_moment.copy()
        b1, b2, eps = state.beta1, state.beta2, state.epsilon
    losses = []
    for _ in range(epochs):
        batch_losses = []
        for idx in batch_indices(len(dataset), config.batch_size, rng):
            if idx.shape[0] == len(dataset):
                xb, yb = dataset.features, y_all
            else:
                xb, yb = dataset.features[idx], y_all[idx]
            loss, grad = _loss_and_gradient(arch, p, xb, yb, layers)
            t += 1
            if adam:
                m *= b1
                m += (1.0 - b1) * grad
                v *= b2
                v += (1.0 - b2) * (grad * grad)
                p -= eta * (m / (1.0 - b1**t)) / (np.sqrt(v / (1.0 - b2**t)) + eps)
            else:
                p -= eta * grad
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
    if adam:
        state = OptimizerState("adam", t, m, v, b1, b2, eps)
    else:
        state = OptimizerState("plain-gd", t, beta1=state.beta1, beta2=state.beta2, epsilon=state.epsilon)
    return LocalResult(p, state, losses)


def data_center_update(
    global_params: np.ndarray,
    dataset: DomainDataset,
    config: FederationConfig,
    rng: np.random.Generator,
    arch: ArchSpec | None = None,
) -> np.ndarray:
    """Local training from the broadcast global parameters.

    Runs ``config.local_epochs`` epochs with fresh optimizer state and
    returns only the new parameter vector; the data stays here.
    """
    if arch is None:
        arch = ArchSpec(config.layer_widths(dataset.dim), config.activation)
    return local_train(global_params, arch, dataset, config, rng, config.local_epochs).params


def serialize_checkpoint(model: MlpModel) -> bytes:
    if model.arch.activation != "relu":
        raise CheckpointFormatError("checkpoint format stores relu models only")
    if not np.isfinite(model.params).all():
        raise CheckpointFormatError("refusing to write non-finite parameters")
    widths = model.arch.layer_widths
    header = CHECKPOINT_MAGIC + struct.pack("<BI", CHECKPOINT_VERSION, len(widths))
    header += struct.pack(f"<{len(widths)}I", *widths)
    return header + model.params.astype("<f8").tobytes()


def deserialize_checkpoint(blob: bytes) -> MlpModel:
    blob = bytes(blob)
    if len(blob) < 9 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("missing FEDW magic")
    version, count = struct.unpack_from("<BI", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    pos = 9
    if len(blob) < pos + 4 * count:
        raise CheckpointFormatError("truncated layer widths")
    widths = struct.unpack_from(f"<{count}I", blob, pos)
    pos += 4 * count
    try:
        arch = ArchSpec(widths)
    except SpecError as exc:
        raise CheckpointFormatError(f"bad layer widths: {exc}") from None
    expected = pos + 8 * arch.num_params
    if len(blob) != expected:
        raise CheckpointFormatError(f"expected {expected} bytes, got {len(blob)}")
    params = np.frombuffer(blob, dtype="<f8", offset=pos).astype(np.float64)
    if not np.isfinite(params).all():
        raise CheckpointFormatError("non-finite parameter values")
    return MlpModel(arch, params)


def save_checkpoint(model: MlpModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_checkpoint(model))


def load_checkpoint(path) -> MlpModel:
    with open(path, "rb") as fh:
        return deserialize_checkpoint(fh.read())


def model_from_layers(weights_and_biases: Sequence[tuple[np.ndarray, np.ndarray]], activation="relu") -> MlpModel:
    """Assemble a model from explicit ``(W, b)`` pairs, ``W`` shaped ``[out x in]``."""
    widths = [np.asarray(weights_and_biases[0][0]).shape[1]]
    chunks = []
    for W, b in weights_and_biases:
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64).ravel()
        if W.shape[1] != widths[-1] or b.shape != (W.shape[0],):
            raise ShapeError("inconsistent layer shapes")
        widths.append(W.shape[0])
        chunks += [W.ravel(), b]
    return MlpModel(ArchSpec(tuple(widths), activation), np.concatenate(chunks))
