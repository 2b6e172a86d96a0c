"""Synthetic sequence datasets with known ground-truth salient regions."""

from __future__ import annotations

import numpy as np

from .trainer import LabeledSequence


def make_spike_dataset(
    n: int,
    steps: int = 64,
    spike_window: tuple[int, int] = (40, 48),
    seed: int = 0,
    noise: float = 0.2,
    amplitude: float = 3.0,
    spike_width: float = 1.2,
) -> list[LabeledSequence]:
    """Two-class noise sequences; class 1 carries a Gaussian bump in the window.

    Only the window region carries class information, so a faithful
    salience technique must concentrate there.
    """
    lo, hi = spike_window
    if not 0 <= lo < hi <= steps:
        raise ValueError(f"spike window {spike_window} must fit inside [0, {steps}]")
    rng = np.random.default_rng(seed)
    grid = np.arange(steps, dtype=np.float64)
    data = []
    for i in range(n):
        values = rng.normal(0.0, noise, size=steps)
        label = i % 2
        if label == 1:
            # keep the bump's support inside the window
            margin = max(1, int(round(spike_width)))
            center = rng.integers(lo + margin, hi - margin) if hi - lo > 2 * margin else (lo + hi) // 2
            values += amplitude * np.exp(-((grid - center) ** 2) / (2.0 * spike_width**2))
        data.append(LabeledSequence(values[:, None], label))
    order = rng.permutation(n)
    return [data[i] for i in order]
