"""Block importance scores for precision assignment.

The increase in per-element error from storing a block in the low format
instead of the high one is ``delta_i = (low_i - v_i) - (high_i - v_i)``.
Three ranking policies turn that into one nonnegative score per block:

* fisher: sum_i g2_i * delta_i^2, with g2 the averaged squared gradient
  (per element for weights, per input channel for activations),
* qe: sum_i delta_i^2 (unweighted quantization error),
* oe: sum_i q2_i * delta_i^2, with q2 the opposing tensor's per-channel
  averaged squared magnitude (layer output error proxy).

Scores accumulate in float64 in ascending index order so thresholds are
reproducible; fisher with unit weights is bitwise equal to qe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FisherMap",
    "ChannelMagnitudeMap",
    "ImpactScore",
    "error_delta",
    "impact_fisher",
    "impact_qe",
    "impact_oe",
    "score_block",
    "weighted_sq_sums",
    "calibrate_channel_stats",
]


@dataclass
class FisherMap:
    """Averaged squared gradients: per-element (weights) or per-channel (acts)."""

    kind: str  # "per_element" | "per_channel"
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in ("per_element", "per_channel"):
            raise ValueError(f"unknown fisher kind {self.kind!r}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        want = 2 if self.kind == "per_element" else 1
        if self.values.ndim != want:
            raise ValueError(f"{self.kind} fisher must be {want}-D")
        if not np.isfinite(self.values).all() or (self.values < 0).any():
            raise ValueError("fisher values must be finite and nonnegative")


@dataclass
class ChannelMagnitudeMap:
    """Per-input-channel mean squared magnitude of the opposing tensor."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("channel magnitudes must be 1-D")
        if not np.isfinite(self.values).all() or (self.values < 0).any():
            raise ValueError("channel magnitudes must be finite and nonnegative")


@dataclass(frozen=True)
class ImpactScore:
    value: float
    policy: str  # "fisher" | "qe" | "oe"
    origin: tuple = ()  # (tensor name, block index)

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("impact scores are nonnegative")


def error_delta(values, low_recon, high_recon) -> np.ndarray:
    """Per-element increase in error from low- vs high-precision storage."""
    v = np.asarray(values, dtype=np.float64)
    lo = np.asarray(low_recon, dtype=np.float64)
    hi = np.asarray(high_recon, dtype=np.float64)
    if not (v.shape == lo.shape == hi.shape):
        raise ValueError("values and reconstructions must be aligned")
    return (lo - v) - (hi - v)


def _seq_weighted_sq(weights: np.ndarray, deltas: np.ndarray) -> float:
    acc = 0.0
    for i in range(len(deltas)):
        acc += float(weights[i]) * float(deltas[i]) ** 2
    return acc


def weighted_sq_sums(weights: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Row-wise sum_i w_i * d_i^2 in float64, strict ascending-index order.

    Accumulates column by column (16 vectorized adds) so every row sees the
    exact same operation sequence as the scalar definition.
    """
    w = np.asarray(weights, dtype=np.float64)
    d = np.asarray(deltas, dtype=np.float64)
    acc = np.zeros(d.shape[0], dtype=np.float64)
    for i in range(d.shape[1]):
        acc += w[:, i] * d[:, i] * d[:, i]
    return acc


def impact_fisher(g2, delta) -> float:
    """Sensitivity-weighted squared error increase for one block."""
    g2 = np.asarray(g2, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if g2.shape != delta.shape:
        raise ValueError("g2 and delta must be aligned")
    if (g2 < 0).any():
        raise ValueError("g2 entries must be nonnegative")
    return _seq_weighted_sq(g2, delta)


def impact_qe(delta) -> float:
    """Unweighted squared error increase for one block."""
    delta = np.asarray(delta, dtype=np.float64)
    return _seq_weighted_sq(np.ones_like(delta), delta)


def impact_oe(delta, q2) -> float:
    """Output-error proxy: squared error increase weighted by avg(Q^2)."""
    q2 = np.asarray(q2, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if q2.shape != delta.shape:
        raise ValueError("q2 and delta must be aligned")
    if (q2 < 0).any():
        raise ValueError("q2 entries must be nonnegative")
    return _seq_weighted_sq(q2, delta)


def score_block(values, low_recon, high_recon, policy: str, weights=None, origin=()) -> ImpactScore:
    """Convenience: Eq-style delta plus one policy score for a single block."""
    delta = error_delta(values, low_recon, high_recon)
    if policy == "fisher":
        value = impact_fisher(weights, delta)
    elif policy == "qe":
        value = impact_qe(delta)
    elif policy == "oe":
        value = impact_oe(delta, weights)
    else:
        raise ValueError(f"unknown policy {policy!r}")
    return ImpactScore(value=value, policy=policy, origin=origin)


def calibrate_channel_stats(samples) -> ChannelMagnitudeMap:
    """Per-channel mean of squared values across all samples and rows."""
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one calibration sample")
    cols = np.asarray(samples[0]).shape[-1]
    total = np.zeros(cols, dtype=np.float64)
    count = 0
    for s in samples:
        arr = np.asarray(s, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.shape[1] != cols:
            raise ValueError("calibration samples disagree on channel count")
        total += (arr * arr).sum(axis=0)
        count += arr.shape[0]
    return ChannelMagnitudeMap(total / count)
