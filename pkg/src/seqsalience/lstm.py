"""Stacked LSTM classifier with exact backpropagation through time.

The recurrence is the standard no-peephole formulation. Per layer, the
four gate blocks live in one fused weight matrix ``w`` of shape
(d_prev + d, 4d): rows split into [input; recurrent], columns into the
gate blocks [input | forget | output | candidate]. With
z_t = [x_t, h_{t-1}]:

    i_t = sigmoid(z_t @ w[:, 0d:1d] + b[0d:1d])
    f_t = sigmoid(z_t @ w[:, 1d:2d] + b[1d:2d])
    o_t = sigmoid(z_t @ w[:, 2d:3d] + b[2d:3d])
    g_t = tanh   (z_t @ w[:, 3d:4d] + b[3d:4d])
    c_t = f_t * c_{t-1} + i_t * g_t
    h_t = o_t * tanh(c_t)

Per-step class scores are s_t = h_t(top layer) @ out_w.T + out_b, so the
score sequence of a prefix equals the prefix of the score sequence.

Gradients (to parameters and to inputs) are hand-derived; ``dropout`` is
applied to layer inputs only (never to recurrent connections), with
inverted scaling at train time so evaluation is deterministic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import softmax
from .validation import as_batch, as_sequence

Array = np.ndarray

MODEL_MAGIC = b"LSTMV1"


@dataclass
class LSTMConfig:
    input_dim: int
    hidden_units: int
    num_layers: int
    num_classes: int
    dropout: float = 0.0

    def __post_init__(self) -> None:
        for name in ("input_dim", "hidden_units", "num_layers", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    def layer_input_dim(self, layer: int) -> int:
        return self.input_dim if layer == 0 else self.hidden_units


@dataclass
class LayerWeights:
    w: Array  # (d_prev + d, 4d)
    b: Array  # (4d,)


@dataclass
class LSTMParams:
    layers: list[LayerWeights]
    out_w: Array  # (C, d)
    out_b: Array  # (C,)

    def copy(self) -> "LSTMParams":
        return LSTMParams(
            layers=[LayerWeights(l.w.copy(), l.b.copy()) for l in self.layers],
            out_w=self.out_w.copy(),
            out_b=self.out_b.copy(),
        )


@dataclass
class ForwardTrace:
    """Per-timestep caches of a single-sequence forward pass.

    ``hidden``/``cells``/``gates`` hold one (T, ...) array per layer; gate
    activations are stored post-nonlinearity in the fused [i|f|o|g] layout.
    """

    hidden: list[Array]
    cells: list[Array]
    gates: list[Array]
    scores: Array  # (T, C) pre-softmax
    inputs: list[Array] = field(default_factory=list)

    @property
    def final_scores(self) -> Array:
        return self.scores[-1]


def _sigmoid(x: Array) -> Array:
    # exp overflow for very negative inputs saturates to inf and the ratio
    # to exactly 0.0, which is the right limit; suppress the warning only.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def init_params(config: LSTMConfig, seed: int) -> LSTMParams:
    """Uniform weights in [-1/sqrt(d), 1/sqrt(d)]; forget biases 1, others 0.

    Draw order is fixed (layer 0 weights, layer 1 weights, ..., output
    weights) so a given seed always yields bit-identical parameters.
    """
    rng = np.random.default_rng(seed)
    d = config.hidden_units
    bound = 1.0 / np.sqrt(d)
    layers = []
    for l in range(config.num_layers):
        d_prev = config.layer_input_dim(l)
        w = rng.uniform(-bound, bound, size=(d_prev + d, 4 * d))
        b = np.zeros(4 * d)
        b[d : 2 * d] = 1.0
        layers.append(LayerWeights(w=w, b=b))
    out_w = rng.uniform(-bound, bound, size=(config.num_classes, d))
    out_b = np.zeros(config.num_classes)
    return LSTMParams(layers=layers, out_w=out_w, out_b=out_b)


def sample_dropout_masks(config: LSTMConfig, steps: int, batch: int, seed: int) -> list[Array]:
    """Inverted-dropout masks for every layer input, one per (step, example, feature)."""
    rng = np.random.default_rng(seed)
    p = config.dropout
    masks = []
    for l in range(config.num_layers):
        shape = (steps, batch, config.layer_input_dim(l))
        if p == 0.0:
            masks.append(np.ones(shape))
        else:
            masks.append((rng.random(shape) >= p) / (1.0 - p))
    return masks


@dataclass
class _BatchTrace:
    """Time-major caches: every array has shape (T, B, features)."""

    inputs: list[Array]  # per layer, (T, B, d_prev) post-dropout layer input
    gates: list[Array]  # per layer, (T, B, 4d) post-activation [i|f|o|g]
    cells: list[Array]  # per layer, (T, B, d)
    hidden: list[Array]  # per layer, (T, B, d)
    scores: Array  # (T, B, C)


def _sigmoid_inplace(x: Array) -> None:
    with np.errstate(over="ignore"):
        np.negative(x, out=x)
        np.exp(x, out=x)
        x += 1.0
        np.reciprocal(x, out=x)


def _forward_batch(
    X: Array,
    params: LSTMParams,
    config: LSTMConfig,
    drop_masks: list[Array] | None = None,
) -> _BatchTrace:
    B, T, _ = X.shape
    d = config.hidden_units
    inputs, gates_all, cells_all, hidden_all = [], [], [], []
    # Time-major layout keeps every per-step slice contiguous.
    layer_in = np.ascontiguousarray(X.transpose(1, 0, 2))
    for l, lw in enumerate(params.layers):
        if drop_masks is not None:
            layer_in = layer_in * drop_masks[l]
        d_prev = layer_in.shape[2]
        wx, wh = lw.w[:d_prev], lw.w[d_prev:]
        # Input contribution for all steps in one matmul; only the recurrent
        # part has to stay inside the time loop, which works in place on the
        # cached gate slab to keep per-step allocations off the hot path.
        gates = layer_in.reshape(T * B, d_prev) @ wx
        gates += lw.b
        gates = gates.reshape(T, B, 4 * d)
        cells = np.empty((T, B, d))
        hidden = np.empty((T, B, d))
        h = np.zeros((B, d))
        c = cells[0]
        c[:] = 0.0
        rec = np.empty((B, 4 * d))
        prod = np.empty((B, d))
        for t in range(T):
            gate_t = gates[t]
            gate_t += np.matmul(h, wh, out=rec)
            _sigmoid_inplace(gate_t[:, : 3 * d])
            g = gate_t[:, 3 * d :]
            np.tanh(g, out=g)
            c_out = cells[t]
            np.multiply(gate_t[:, d : 2 * d], c, out=c_out)
            c_out += np.multiply(gate_t[:, :d], g, out=prod)
            c = c_out
            h = hidden[t]
            np.tanh(c, out=h)
            h *= gate_t[:, 2 * d : 3 * d]
        inputs.append(layer_in)
        gates_all.append(gates)
        cells_all.append(cells)
        hidden_all.append(hidden)
        layer_in = hidden
    scores = hidden_all[-1].reshape(T * B, d) @ params.out_w.T
    scores = scores.reshape(T, B, config.num_classes) + params.out_b
    return _BatchTrace(inputs, gates_all, cells_all, hidden_all, scores)


def forward(
    x,
    params: LSTMParams,
    config: LSTMConfig,
    mode: str = "eval",
    seed: int = 0,
) -> ForwardTrace:
    """Run one sequence through the network and keep per-step caches.

    ``mode="train"`` applies dropout with masks derived from ``seed``;
    ``mode="eval"`` is deterministic.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = as_sequence(x, config.input_dim)
    masks = None
    if mode == "train" and config.dropout > 0.0:
        masks = sample_dropout_masks(config, x.shape[0], 1, seed)
    trace = _forward_batch(x[None], params, config, masks)
    return ForwardTrace(
        hidden=[h[:, 0] for h in trace.hidden],
        cells=[c[:, 0] for c in trace.cells],
        gates=[g[:, 0] for g in trace.gates],
        scores=trace.scores[:, 0],
        inputs=[i[:, 0] for i in trace.inputs],
    )


def final_scores(X, params: LSTMParams, config: LSTMConfig, chunk: int = 2048) -> Array:
    """Final-step pre-softmax scores for a batch, without keeping caches."""
    X = as_batch(X, config.input_dim)
    B, T, _ = X.shape
    d = config.hidden_units
    out = np.empty((B, config.num_classes))
    for lo in range(0, B, chunk):
        part = X[lo : lo + chunk]
        nb = part.shape[0]
        layer_in = np.ascontiguousarray(part.transpose(1, 0, 2))
        for l, lw in enumerate(params.layers):
            d_prev = layer_in.shape[2]
            wx, wh = lw.w[:d_prev], lw.w[d_prev:]
            pre_x = layer_in.reshape(T * nb, d_prev) @ wx
            pre_x = pre_x.reshape(T, nb, 4 * d) + lw.b
            hidden = np.empty((T, nb, d))
            h = np.zeros((nb, d))
            c = np.zeros((nb, d))
            for t in range(T):
                z = pre_x[t] + h @ wh
                sig = _sigmoid(z[:, : 3 * d])
                g = np.tanh(z[:, 3 * d :])
                c = sig[:, d : 2 * d] * c + sig[:, :d] * g
                h = sig[:, 2 * d : 3 * d] * np.tanh(c)
                hidden[t] = h
            layer_in = hidden
        out[lo : lo + chunk] = h @ params.out_w.T + params.out_b
    return out


def class_score(x, params: LSTMParams, config: LSTMConfig, label: int) -> float:
    """Pre-softmax score of class ``label`` at the final step (eval mode)."""
    if not 0 <= label < config.num_classes:
        raise ValueError(f"class index {label} out of range for {config.num_classes} classes")
    trace = forward(x, params, config, mode="eval")
    return float(trace.final_scores[label])


def _layer_backward(
    layer_in: Array,
    gates: Array,
    cells: Array,
    hidden: Array,
    lw: LayerWeights,
    inject: Array,
    need_param_grads: bool,
    need_input_grad: bool,
):
    """BPTT through one layer given gradient ``inject`` flowing into each h_t.

    All step-indexed arrays are time-major (T, B, features).
    """
    T, B, d_prev = layer_in.shape
    d = cells.shape[2]
    wh = lw.w[d_prev:]
    d_gates = np.empty((T, B, 4 * d))
    dh = np.zeros((B, d))
    dc = np.zeros((B, d))
    tanh_c = np.empty((B, d))
    for t in range(T - 1, -1, -1):
        dh = dh + inject[t]
        gate_t = gates[t]
        i = gate_t[:, :d]
        f = gate_t[:, d : 2 * d]
        o = gate_t[:, 2 * d : 3 * d]
        g = gate_t[:, 3 * d :]
        np.tanh(cells[t], out=tanh_c)
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
        c_prev = cells[t - 1] if t > 0 else 0.0
        dg_t = d_gates[t]
        dg_t[:, :d] = (dc * g) * i * (1.0 - i)
        dg_t[:, d : 2 * d] = (dc * c_prev) * f * (1.0 - f)
        dg_t[:, 2 * d : 3 * d] = do * o * (1.0 - o)
        dg_t[:, 3 * d :] = (dc * i) * (1.0 - g * g)
        dh = dg_t @ wh.T
        dc = dc * f
    dw = db = None
    if need_param_grads:
        flat = d_gates.reshape(T * B, 4 * d)
        dw = np.empty_like(lw.w)
        dw[:d_prev] = layer_in.reshape(T * B, d_prev).T @ flat
        # h_{-1} is zero, so the recurrent weight gradient only sees t >= 1.
        dw[d_prev:] = hidden[: T - 1].reshape((T - 1) * B, d).T @ d_gates[1:].reshape(
            (T - 1) * B, 4 * d
        ) if T > 1 else 0.0
        db = d_gates.sum(axis=(0, 1))
    d_input = None
    if need_input_grad:
        d_input = (d_gates.reshape(T * B, 4 * d) @ lw.w[:d_prev].T).reshape(T, B, d_prev)
    return dw, db, d_input


def _backward_batch(
    trace: _BatchTrace,
    params: LSTMParams,
    config: LSTMConfig,
    ds_final: Array,
    need_param_grads: bool,
    need_input_grad: bool,
    drop_masks: list[Array] | None = None,
):
    """Backpropagate a gradient on the final-step scores through all layers."""
    T, B, _ = trace.scores.shape
    d = config.hidden_units
    grads = None
    if need_param_grads:
        d_out_w = ds_final.T @ trace.hidden[-1][T - 1]
        d_out_b = ds_final.sum(axis=0)
        grads = LSTMParams(layers=[], out_w=d_out_w, out_b=d_out_b)
    inject = np.zeros((T, B, d))
    inject[T - 1] = ds_final @ params.out_w
    layer_grads: list[LayerWeights] = []
    for l in range(config.num_layers - 1, -1, -1):
        want_dx = need_input_grad or l > 0
        dw, db, d_input = _layer_backward(
            trace.inputs[l],
            trace.gates[l],
            trace.cells[l],
            trace.hidden[l],
            params.layers[l],
            inject,
            need_param_grads,
            want_dx,
        )
        if need_param_grads:
            layer_grads.append(LayerWeights(w=dw, b=db))
        if want_dx and drop_masks is not None:
            d_input = d_input * drop_masks[l]
        inject = d_input
    if need_param_grads:
        grads.layers = list(reversed(layer_grads))
    return grads, inject  # inject is now the gradient w.r.t. the original input


def backward_input(x, params: LSTMParams, config: LSTMConfig, label: int) -> Array:
    """Exact gradient of the final-step class score w.r.t. the input sequence."""
    if not 0 <= label < config.num_classes:
        raise ValueError(f"class index {label} out of range for {config.num_classes} classes")
    x = as_sequence(x, config.input_dim)
    trace = _forward_batch(x[None], params, config, None)
    ds = np.zeros((1, config.num_classes))
    ds[0, label] = 1.0
    _, d_input = _backward_batch(trace, params, config, ds, False, True)
    if not np.all(np.isfinite(d_input)):
        raise FloatingPointError("non-finite value in input gradient")
    return d_input[:, 0]


def scores_and_input_gradients(
    X, labels, params: LSTMParams, config: LSTMConfig
) -> tuple[Array, Array]:
    """Batched final class scores s_c and gradients of each w.r.t. its input."""
    X = as_batch(X, config.input_dim)
    labels = np.asarray(labels, dtype=np.int64)
    trace = _forward_batch(X, params, config, None)
    B = X.shape[0]
    ds = np.zeros((B, config.num_classes))
    ds[np.arange(B), labels] = 1.0
    _, d_input = _backward_batch(trace, params, config, ds, False, True)
    scores = trace.scores[-1][np.arange(B), labels]
    return scores, d_input.transpose(1, 0, 2)


def backward_params(
    values,
    labels,
    params: LSTMParams,
    config: LSTMConfig,
    seed: int = 0,
) -> tuple[float, LSTMParams]:
    """Mean final-step cross-entropy over a minibatch and its exact gradient.

    In train mode (``config.dropout > 0``) the dropout masks derived from
    ``seed`` are shared between the forward and backward passes.
    """
    X = as_batch(values, config.input_dim)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != X.shape[0]:
        raise ValueError("values and labels must have matching batch sizes")
    B, T, _ = X.shape
    masks = None
    if config.dropout > 0.0:
        masks = sample_dropout_masks(config, T, B, seed)
    trace = _forward_batch(X, params, config, masks)
    s = trace.scores[-1]
    # Stable log-softmax for the loss; softmax for the gradient.
    shifted = s - s.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(B), labels]))
    probs = softmax(s, axis=1)
    ds = probs
    ds[np.arange(B), labels] -= 1.0
    ds /= B
    grads, _ = _backward_batch(trace, params, config, ds, True, False, masks)
    return loss, grads


# --- flat parameter vector helpers (used by the Adam training loop) ---


def params_to_vector(params: LSTMParams) -> Array:
    parts = []
    for lw in params.layers:
        parts.append(lw.w.ravel())
        parts.append(lw.b)
    parts.append(params.out_w.ravel())
    parts.append(params.out_b)
    return np.concatenate(parts)


def vector_to_params(vec: Array, config: LSTMConfig) -> LSTMParams:
    d, c = config.hidden_units, config.num_classes
    pos = 0
    layers = []
    for l in range(config.num_layers):
        d_prev = config.layer_input_dim(l)
        n = (d_prev + d) * 4 * d
        w = vec[pos : pos + n].reshape(d_prev + d, 4 * d).copy()
        pos += n
        b = vec[pos : pos + 4 * d].copy()
        pos += 4 * d
        layers.append(LayerWeights(w=w, b=b))
    out_w = vec[pos : pos + c * d].reshape(c, d).copy()
    pos += c * d
    out_b = vec[pos : pos + c].copy()
    pos += c
    if pos != vec.size:
        raise ValueError(f"vector length {vec.size} does not match config (need {pos})")
    return LSTMParams(layers=layers, out_w=out_w, out_b=out_b)


def weight_indicator(config: LSTMConfig) -> Array:
    """1 for weight-matrix entries, 0 for biases, in flat-vector order."""
    d, c = config.hidden_units, config.num_classes
    parts = []
    for l in range(config.num_layers):
        d_prev = config.layer_input_dim(l)
        parts.append(np.ones((d_prev + d) * 4 * d))
        parts.append(np.zeros(4 * d))
    parts.append(np.ones(c * d))
    parts.append(np.zeros(c))
    return np.concatenate(parts)


# --- model container (magic "LSTMV1") ---
#
# Layout, all little-endian:
#   bytes 0..5   magic "LSTMV1"
#   4 x uint32   input_dim, hidden_units, num_layers, num_classes
#   1 x float64  dropout probability
#   then float64 blocks in order: per layer (w row-major, b), out_w, out_b


def save_model(path, params: LSTMParams, config: LSTMConfig) -> None:
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(
            struct.pack(
                "<4I",
                config.input_dim,
                config.hidden_units,
                config.num_layers,
                config.num_classes,
            )
        )
        fh.write(struct.pack("<d", config.dropout))
        for lw in params.layers:
            fh.write(np.ascontiguousarray(lw.w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(lw.b, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.out_w, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.out_b, dtype="<f8").tobytes())


def load_model(path) -> tuple[LSTMParams, LSTMConfig]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ValueError(f"not a model file: bad magic {blob[:6]!r}")
    pos = len(MODEL_MAGIC)
    d_in, d, layers, classes = struct.unpack_from("<4I", blob, pos)
    pos += 16
    (dropout,) = struct.unpack_from("<d", blob, pos)
    pos += 8
    config = LSTMConfig(d_in, d, layers, classes, dropout)

    def take(count):
        nonlocal pos
        end = pos + count * 8
        if end > len(blob):
            raise ValueError("truncated model file")
        out = np.frombuffer(blob[pos:end], dtype="<f8").astype(np.float64)
        pos = end
        return out

    layer_ws = []
    for l in range(layers):
        d_prev = config.layer_input_dim(l)
        w = take((d_prev + d) * 4 * d).reshape(d_prev + d, 4 * d)
        b = take(4 * d)
        layer_ws.append(LayerWeights(w=w, b=b))
    out_w = take(classes * d).reshape(classes, d)
    out_b = take(classes)
    if pos != len(blob):
        raise ValueError(f"trailing bytes in model file ({len(blob) - pos})")
    return LSTMParams(layers=layer_ws, out_w=out_w, out_b=out_b), config


class ModelScorer:
    """Read-only scoring facade used by the salience and evaluation code.

    Anything with ``class_score``/``class_scores``/``scores_and_input_gradients``
    can stand in for this (the tests use analytic toy models that way).
    """

    def __init__(self, params: LSTMParams, config: LSTMConfig):
        self.params = params
        self.config = config

    def class_score(self, x, label: int) -> float:
        return class_score(x, self.params, self.config, label)

    def class_scores(self, X, labels) -> Array:
        X = as_batch(X, self.config.input_dim)
        labels = np.asarray(labels, dtype=np.int64)
        scores = final_scores(X, self.params, self.config)
        return scores[np.arange(X.shape[0]), labels]

    def input_gradient(self, x, label: int) -> Array:
        return backward_input(x, self.params, self.config, label)

    def scores_and_input_gradients(self, X, labels) -> tuple[Array, Array]:
        return scores_and_input_gradients(X, labels, self.params, self.config)
