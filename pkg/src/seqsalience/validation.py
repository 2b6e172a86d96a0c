"""Input validation helpers for sequence data."""

from __future__ import annotations

import numpy as np

Array = np.ndarray


def as_sequence(x, input_dim: int | None = None) -> Array:
    """Coerce ``x`` to a (T, d) float64 array. 1-D input becomes a column."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected a (T, d) sequence, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("sequence must have at least one time step")
    if not np.all(np.isfinite(arr)):
        raise ValueError("sequence contains non-finite values")
    if input_dim is not None and arr.shape[1] != input_dim:
        raise ValueError(f"expected {input_dim} features per step, got {arr.shape[1]}")
    return arr


def as_batch(X, input_dim: int | None = None) -> Array:
    """Coerce ``X`` to a (B, T, d) float64 array of equal-length sequences."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        arr = np.asarray(X, dtype=np.float64)
    else:
        seqs = [as_sequence(x, input_dim) for x in X]
        lengths = {s.shape for s in seqs}
        if len(lengths) != 1:
            raise ValueError(f"sequences in a batch must share one shape, got {sorted(lengths)}")
        arr = np.stack(seqs)
    if arr.shape[0] < 1:
        raise ValueError("batch must contain at least one sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError("batch contains non-finite values")
    if input_dim is not None and arr.shape[2] != input_dim:
        raise ValueError(f"expected {input_dim} features per step, got {arr.shape[2]}")
    return arr


def as_labels(y, num_classes: int | None = None) -> Array:
    """Coerce labels to a 1-D int array, optionally range-checking them."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"expected 1-D labels, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(arr)
        if not np.array_equal(rounded, arr):
            raise ValueError("labels must be integers")
        arr = rounded
    arr = arr.astype(np.int64)
    if num_classes is not None and arr.size:
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"labels must lie in [0, {num_classes}), got range "
                             f"[{arr.min()}, {arr.max()}]")
    return arr
