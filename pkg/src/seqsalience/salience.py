"""The four explanation techniques for sequence classifiers.

Three of them produce a ``SalienceMap`` (per-element importance in [0, 1]):

* input-derivative: magnitude of the class-score gradient at the input,
* occlusion: score sums over sliding constant-value deletions,
* learned mask: a deletion mask optimized to pull the class score down
  while staying sparse and smooth.

The fourth, temporal output scores, tracks the classifier's per-prefix
output distribution over time.

Models are passed as scorer objects; anything exposing ``class_score``,
``class_scores`` and ``scores_and_input_gradients`` works (see
``lstm.ModelScorer``), which keeps the techniques testable against
analytic toy models.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .lstm import LSTMConfig, LSTMParams, forward
from .numerics import AdamHyper, AdamState, adam_step, softmax
from .validation import as_batch, as_sequence

Array = np.ndarray


@dataclass
class SalienceMap:
    values: Array  # (T, d) in [0, 1]
    technique: str  # gradient | occlusion | mask
    meta: dict = field(default_factory=dict)


@dataclass
class TemporalScores:
    probs: Array  # (T, C), each row a distribution
    predicted: Array  # (T,) argmax class per prefix
    true_class_prob: Array  # (T,)


@dataclass
class OcclusionConfig:
    """Sliding occlusion settings.

    ``contiguous`` slides one window of ``width`` steps; ``block`` occludes
    ``block_pixels`` steps every ``block_stride`` steps, ``block_repeats``
    times per iteration (for scanline-image sequences, this carves out a
    square patch in image space).
    """

    deletion_value: float = 0.0
    width: int = 5
    pattern: str = "contiguous"
    block_pixels: int = 5
    block_stride: int = 28
    block_repeats: int = 5

    def __post_init__(self) -> None:
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.pattern not in ("contiguous", "block"):
            raise ValueError(f"unknown occlusion pattern {self.pattern!r}")


@dataclass
class MaskConfig:
    deletion_value: float = 0.0
    l1_weight: float = 0.01
    tv_weight: float = 0.001
    lr: float = 0.001
    iterations: int = 500
    init: float = 1.0

    def __post_init__(self) -> None:
        if self.l1_weight < 0 or self.tv_weight < 0:
            raise ValueError("regularizer weights must be >= 0")
        if not 0.0 <= self.init <= 1.0:
            raise ValueError(f"init must lie in [0, 1], got {self.init}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class MaskResult:
    mask: Array  # (T, d) in [0, 1]
    objective_history: Array  # (iterations, 3): class-score, L1, TV terms
    final_perturbed_score: float


def minmax_scale(values: Array) -> Array:
    """Scale to [0, 1]; a constant array maps to all zeros."""
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def perturb(x: Array, mask, deletion_value: float) -> Array:
    """Blend ``x`` toward the deletion constant: mask*x + k*(1-mask)."""
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    return mask * x + deletion_value * (1.0 - mask)


def temporal_output_scores(
    x, params: LSTMParams, config: LSTMConfig, label: int
) -> TemporalScores:
    """Per-prefix output distributions from a single eval-mode forward pass."""
    if not 0 <= label < config.num_classes:
        raise ValueError(f"class index {label} out of range for {config.num_classes} classes")
    trace = forward(x, params, config, mode="eval")
    probs = softmax(trace.scores, axis=1)
    return TemporalScores(
        probs=probs,
        predicted=probs.argmax(axis=1),
        true_class_prob=probs[:, label],
    )


def input_derivative_salience(x, model, label: int) -> SalienceMap:
    """Salience from the magnitude of the input gradient of the class score."""
    grad = model.input_gradient(x, label)
    return SalienceMap(
        values=minmax_scale(np.abs(grad)),
        technique="gradient",
        meta={"label": int(label)},
    )


def occlusion_windows(steps: int, occ: OcclusionConfig) -> list[np.ndarray]:
    """Occluded index sets per iteration, clipped to the sequence.

    Start positions extend past both ends just far enough that every
    element is occluded the same number of times: ``width`` times for the
    contiguous pattern, ``block_pixels * block_repeats`` for the block one.
    """
    if occ.pattern == "contiguous":
        w = occ.width
        if w > steps:
            raise ValueError(f"occlusion width {w} exceeds sequence length {steps}")
        starts = range(1 - w, steps)
        return [np.arange(max(0, s), min(steps, s + w)) for s in starts]
    px, stride, reps = occ.block_pixels, occ.block_stride, occ.block_repeats
    if px > steps:
        raise ValueError(f"block pixel run {px} exceeds sequence length {steps}")
    starts = range(1 - px - (reps - 1) * stride, steps)
    windows = []
    for s in starts:
        idx = [
            np.arange(max(0, s + j * stride), min(steps, s + j * stride + px))
            for j in range(reps)
        ]
        windows.append(np.concatenate(idx))
    return windows


def occlusion_salience(x, model, label: int, occ: OcclusionConfig) -> SalienceMap:
    """Score-sum salience over sliding constant-value occlusions.

    Every iteration replaces one window with the deletion constant and
    scores the result; each element accumulates the scores of the
    iterations that left it intact, so elements whose deletion hurts the
    score the most end up with the largest sums.
    """
    x = as_sequence(x)
    steps, d = x.shape
    windows = occlusion_windows(steps, occ)
    perturbed = np.repeat(x[None], len(windows), axis=0)
    for j, idx in enumerate(windows):
        perturbed[j, idx, :] = occ.deletion_value
    scores = model.class_scores(perturbed, np.full(len(windows), label))
    total = scores.sum()
    occluded_sum = np.zeros(steps)
    for j, idx in enumerate(windows):
        occluded_sum[idx] += scores[j]
    per_step = minmax_scale(total - occluded_sum)
    return SalienceMap(
        values=np.repeat(per_step[:, None], d, axis=1),
        technique="occlusion",
        meta={
            "label": int(label),
            "deletion_value": occ.deletion_value,
            "pattern": occ.pattern,
            "width": occ.width,
            "iterations": len(windows),
        },
    )


def learn_masks(X, model, labels, mc: MaskConfig) -> list[MaskResult]:
    """Learn one deletion mask per sequence, batched.

    Each mask minimizes   class_score(perturb(x; m))
                        + l1_weight * ||1 - m||_1
                        + tv_weight * sum_t |m_{t+1} - m_t|
    by projected Adam steps: the score term's gradient is the input
    gradient at the perturbed point times (x - k); the regularizers use
    subgradients (-l1_weight where m < 1; sign differences for the total
    variation, with sign(0) = 0). After every step the mask is clamped
    back into [0, 1]. Masks for different sequences never interact, so
    the batch run equals per-sequence runs.
    """
    X = as_batch(X)
    labels = np.asarray(labels, dtype=np.int64)
    B, steps, d = X.shape
    k = mc.deletion_value
    m = np.full((B, steps, d), float(mc.init))
    state = AdamState.zeros(m.shape)
    hyper = AdamHyper(lr=mc.lr)
    history = np.empty((B, mc.iterations, 3))
    x_minus_k = X - k
    for it in range(mc.iterations):
        phi = m * X + k * (1.0 - m)
        scores, score_grads = model.scores_and_input_gradients(phi, labels)
        l1 = mc.l1_weight * np.abs(1.0 - m).sum(axis=(1, 2))
        diffs = np.diff(m, axis=1)
        tv = mc.tv_weight * np.abs(diffs).sum(axis=(1, 2))
        history[:, it, 0] = scores
        history[:, it, 1] = l1
        history[:, it, 2] = tv
        if not (np.all(np.isfinite(scores)) and np.all(np.isfinite(score_grads))):
            raise FloatingPointError(f"non-finite mask objective at iteration {it}")
        grad = score_grads * x_minus_k
        grad -= mc.l1_weight * (m < 1.0)
        sgn = np.sign(diffs)
        grad[:, :-1] -= mc.tv_weight * sgn
        grad[:, 1:] += mc.tv_weight * sgn
        m, state = adam_step(m, grad, state, hyper)
        np.clip(m, 0.0, 1.0, out=m)
    final_scores = model.class_scores(m * X + k * (1.0 - m), labels)
    return [
        MaskResult(
            mask=m[b],
            objective_history=history[b],
            final_perturbed_score=float(final_scores[b]),
        )
        for b in range(B)
    ]


def learn_mask(x, model, label: int, mc: MaskConfig) -> MaskResult:
    """Learn a deletion mask for one sequence."""
    x = as_sequence(x)
    return learn_masks(x[None], model, [label], mc)[0]


def mask_to_salience(result: MaskResult) -> SalienceMap:
    """Salience = 1 - minmax(mask); an all-equal mask maps to all zeros."""
    if result.mask.max() == result.mask.min():
        values = np.zeros_like(result.mask)
    else:
        values = 1.0 - minmax_scale(result.mask)
    return SalienceMap(
        values=values,
        technique="mask",
        meta={"final_perturbed_score": result.final_perturbed_score},
    )


def salience_to_csv(x, smap: SalienceMap) -> str:
    """One row per timestep: t, input values, salience values."""
    x = as_sequence(x)
    d = x.shape[1]
    buf = io.StringIO()
    x_cols = ",".join(f"x{j}" for j in range(d))
    s_cols = ",".join(f"salience{j}" for j in range(d))
    buf.write(f"t,{x_cols},{s_cols}\n")
    for t in range(x.shape[0]):
        xs = ",".join(repr(float(v)) for v in x[t])
        ss = ",".join(repr(float(v)) for v in smap.values[t])
        buf.write(f"{t},{xs},{ss}\n")
    return buf.getvalue()


def temporal_to_csv(scores: TemporalScores) -> str:
    """One row per timestep: t, class probabilities, prediction, true-class prob."""
    steps, classes = scores.probs.shape
    buf = io.StringIO()
    cols = ",".join(f"prob_class_{c}" for c in range(classes))
    buf.write(f"t,{cols},predicted,true_class_prob\n")
    for t in range(steps):
        ps = ",".join(repr(float(v)) for v in scores.probs[t])
        buf.write(f"{t},{ps},{int(scores.predicted[t])},{scores.true_class_prob[t]!r}\n")
    return buf.getvalue()
