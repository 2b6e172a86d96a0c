"""Dataset splitting, the minibatch training loop, and model selection."""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np

from .lstm import (
    LSTMConfig,
    LSTMParams,
    backward_params,
    final_scores,
    init_params,
    params_to_vector,
    vector_to_params,
    weight_indicator,
)
from .numerics import AdamHyper, AdamState, adam_step

Array = np.ndarray


class TrainingDivergence(RuntimeError):
    """Raised when the training or validation loss becomes non-finite."""


class SplitError(RuntimeError):
    """Raised when no patient split satisfies the class-balance constraint."""


@dataclass
class LabeledSequence:
    """One input series with its class label and optional patient identity."""

    values: Array  # (T, d) float64
    label: int
    patient_id: str | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]


@dataclass
class SplitSpec:
    fractions: tuple[float, ...] = (0.7, 0.1, 0.2)
    min_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ValueError(f"fractions must lie in [0, 1], got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {self.fractions}")


@dataclass
class TrainConfig:
    lr: float = 0.001
    minibatch: int = 200
    epochs: int = 100
    dropout: float = 0.1
    weight_decay: float = 0.0
    seed: int = 0


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


def largest_remainder_counts(total: int, fractions) -> list[int]:
    """Apportion ``total`` items to parts by quota floors, then by remainder."""
    quotas = [total * f for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(fractions)), key=lambda i: (counts[i] - quotas[i], i))
    for i in range(total - sum(counts)):
        counts[order[i]] += 1
    return counts


def split_plain(data: list, spec: SplitSpec) -> tuple[list, ...]:
    """Shuffled index split by the spec fractions, without patient grouping."""
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(data))
    counts = largest_remainder_counts(len(data), spec.fractions)
    parts = []
    pos = 0
    for n in counts:
        parts.append([data[i] for i in order[pos : pos + n]])
        pos += n
    return tuple(parts)


def split_by_patient(
    data: list[LabeledSequence], spec: SplitSpec
) -> tuple[list[LabeledSequence], ...]:
    """Partition patients (not sequences) into splits under a class-balance rule.

    Every class k must contribute at least ``min_fraction * fraction_s *
    smallest-class-size`` sequences to each split s. Random patient
    assignments are redrawn (with a derived seed) until the rule holds,
    up to 1000 attempts.
    """
    if any(seq.patient_id is None for seq in data):
        raise ValueError("every sequence needs a patient_id for a patient-level split")
    patients = sorted({seq.patient_id for seq in data})
    if len(patients) < 3:
        raise ValueError(f"need at least 3 patients, got {len(patients)}")
    by_patient: dict[str, list[LabeledSequence]] = {p: [] for p in patients}
    for seq in data:
        by_patient[seq.patient_id].append(seq)
    labels = sorted({seq.label for seq in data})
    class_sizes = {k: sum(1 for seq in data if seq.label == k) for k in labels}
    smallest = min(class_sizes.values())
    counts = largest_remainder_counts(len(patients), spec.fractions)

    last_failure = None
    for attempt in range(1000):
        rng = np.random.default_rng([spec.seed, attempt])
        order = rng.permutation(len(patients))
        splits: list[list[LabeledSequence]] = []
        pos = 0
        for n in counts:
            part: list[LabeledSequence] = []
            for i in order[pos : pos + n]:
                part.extend(by_patient[patients[i]])
            splits.append(part)
            pos += n
        ok = True
        for s, (part, fraction) in enumerate(zip(splits, spec.fractions)):
            needed = spec.min_fraction * fraction * smallest
            for k in labels:
                have = sum(1 for seq in part if seq.label == k)
                if have < needed:
                    last_failure = (k, s, have, needed)
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return tuple(splits)
    k, s, have, needed = last_failure
    raise SplitError(
        f"no acceptable split in 1000 attempts: class {k} has {have} sequences "
        f"in split {s}, needs at least {needed:.1f}"
    )


def _batched_by_length(data: list[LabeledSequence]):
    """Group sequence indices by shape so each group can be run as one batch."""
    groups: dict[tuple[int, int], list[int]] = {}
    for idx, seq in enumerate(data):
        groups.setdefault(seq.values.shape, []).append(idx)
    return groups


def _eval_scores(data: list[LabeledSequence], params, config) -> Array:
    """Final pre-softmax scores for every sequence, eval mode."""
    out = np.empty((len(data), config.num_classes))
    for shape, idxs in _batched_by_length(data).items():
        X = np.stack([data[i].values for i in idxs])
        out[idxs] = final_scores(X, params, config)
    return out


def mean_loss(data: list[LabeledSequence], params, config) -> float:
    """Mean final-step cross-entropy in eval mode."""
    if not data:
        raise ValueError("cannot evaluate on an empty set")
    scores = _eval_scores(data, params, config)
    labels = np.array([seq.label for seq in data])
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_z - shifted[np.arange(len(data)), labels]))


def evaluate_accuracy(data: list[LabeledSequence], params, config) -> float:
    """Fraction of sequences whose final-step argmax equals the label.

    Ties resolve to the lowest class index (argmax convention).
    """
    if not data:
        raise ValueError("cannot evaluate on an empty set")
    scores = _eval_scores(data, params, config)
    predicted = scores.argmax(axis=1)
    labels = np.array([seq.label for seq in data])
    return float(np.mean(predicted == labels))


def _batch_gradient(batch, params, config, seed):
    """Loss and gradient for one minibatch, handling mixed lengths by grouping."""
    groups = _batched_by_length(batch)
    if len(groups) == 1:
        X = np.stack([seq.values for seq in batch])
        y = [seq.label for seq in batch]
        loss, grads = backward_params(X, y, params, config, seed=seed)
        return loss, params_to_vector(grads)
    total = len(batch)
    loss = 0.0
    gvec = None
    for shape, idxs in groups.items():
        X = np.stack([batch[i].values for i in idxs])
        y = [batch[i].label for i in idxs]
        part_loss, part = backward_params(X, y, params, config, seed=seed)
        weight = len(idxs) / total
        loss += weight * part_loss
        part_vec = params_to_vector(part) * weight
        gvec = part_vec if gvec is None else gvec + part_vec
    return loss, gvec


def train(
    train_set: list[LabeledSequence],
    val_set: list[LabeledSequence],
    lstm_config: LSTMConfig,
    train_config: TrainConfig,
) -> tuple[LSTMParams, list[EpochStats]]:
    """Minibatch Adam training with best-epoch selection by validation loss.

    Runs the full epoch budget (no early stopping) and returns the
    parameters of the epoch with minimum validation loss, plus the
    per-epoch history. Weight decay, when nonzero, is added to the
    weight-matrix gradients only (biases excluded).
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    config = replace(lstm_config, dropout=train_config.dropout)
    rng = np.random.default_rng(train_config.seed)
    params = init_params(config, seed=train_config.seed)
    vec = params_to_vector(params)
    state = AdamState.zeros(vec.size)
    hyper = AdamHyper(lr=train_config.lr)
    decay_mask = weight_indicator(config) if train_config.weight_decay > 0 else None

    history: list[EpochStats] = []
    best_vec = vec.copy()
    best_val = np.inf
    n = len(train_set)
    for epoch in range(train_config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, train_config.minibatch):
            batch = [train_set[i] for i in order[lo : lo + train_config.minibatch]]
            seed = int(rng.integers(2**63))
            loss, gvec = _batch_gradient(batch, params, config, seed)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"non-finite training loss at epoch {epoch}")
            if decay_mask is not None:
                gvec = gvec + train_config.weight_decay * decay_mask * vec
            vec, state = adam_step(vec, gvec, state, hyper)
            params = vector_to_params(vec, config)
            epoch_loss += loss * len(batch)
        train_loss = epoch_loss / n
        val_loss = mean_loss(val_set, params, config)
        if not np.isfinite(val_loss):
            raise TrainingDivergence(f"non-finite validation loss at epoch {epoch}")
        val_acc = evaluate_accuracy(val_set, params, config)
        history.append(EpochStats(epoch, train_loss, val_loss, val_acc))
        if val_loss < best_val:
            best_val = val_loss
            best_vec = vec.copy()
    return vector_to_params(best_vec, config), history


def history_to_csv(history: list[EpochStats]) -> str:
    """Render per-epoch stats as CSV; float formatting is repr-exact."""
    buf = io.StringIO()
    buf.write("epoch,train_loss,val_loss,val_accuracy\n")
    for row in history:
        buf.write(f"{row.epoch},{row.train_loss!r},{row.val_loss!r},{row.val_accuracy!r}\n")
    return buf.getvalue()
