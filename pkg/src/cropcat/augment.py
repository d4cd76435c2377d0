"""CropCat crop-and-concatenate mixing and the baseline augmentations.

Every random choice is drawn from an explicit ``numpy.random.Generator``.
Within :func:`augment_batch` the per-base draw order is fixed: material
index, then center, then ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .signal_core import SPATIAL, TEMPORAL, AugmentedPair, Provenance, SoftLabel, Trial

METHODS = ("none", "cropcat_spatial", "cropcat_temporal", "time_mask", "gaussian_noise", "cutout")
CROPCAT_METHODS = ("cropcat_spatial", "cropcat_temporal")
MAX_LAMBDA = 0.5


class NoMaterial(LookupError):
    """No trial in the batch shares the base's subject while differing in label."""


@dataclass(frozen=True)
class AugConfig:
    method: str = "none"
    lam: float = 0.125
    mask_ratio: float = 0.1
    noise_scale: float = 0.05
    cutout_channel_frac: float = 0.25
    cutout_time_frac: float = 0.5
    cutout_regions: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown augmentation method {self.method!r}; choose from {METHODS}")
        if not 0 <= self.lam <= MAX_LAMBDA:
            raise ValueError(f"lambda must lie in [0, {MAX_LAMBDA}], got {self.lam}")
        if not 0 < self.mask_ratio < 1:
            raise ValueError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if self.noise_scale < 0:
            raise ValueError(f"noise_scale must be >= 0, got {self.noise_scale}")
        for name in ("cutout_channel_frac", "cutout_time_frac"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.cutout_regions < 1:
            raise ValueError(f"cutout_regions must be >= 1, got {self.cutout_regions}")


def round_half_away(x: float) -> int:
    a = abs(x)
    n = math.floor(a)
    return int(math.copysign(n + (a - n >= 0.5), x))


def _window_edges(center: int, half: float) -> tuple[int, int]:
    """Exact ``round_half_away(center -/+ half)`` without forming the float sums."""
    n = math.floor(half)
    frac = half - n  # exact
    hi = center + n + (frac >= 0.5)
    if half <= center:
        lo = center - n - (frac > 0.5)
    else:
        lo = center - n - (frac >= 0.5)
    return lo, hi


def sample_center(axis_len: int, rng: np.random.Generator) -> int:
    """Uniform integer in ``[0, axis_len)``; one draw."""
    if axis_len < 1:
        raise ValueError(f"axis_len must be >= 1, got {axis_len}")
    return int(rng.integers(0, axis_len))


def sample_ratio(lam: float, rng: np.random.Generator) -> float:
    """Mixing ratio uniform on ``[0, lam)`` with ``lam`` capped at 0.5."""
    if not 0 <= lam <= MAX_LAMBDA:
        raise ValueError(f"lambda must lie in [0, {MAX_LAMBDA}], got {lam}")
    return float(rng.uniform(0.0, lam))


def select_material(
    batch: Sequence[Trial],
    base_index: int,
    rng: np.random.Generator,
    *,
    labels: Optional[np.ndarray] = None,
    subjects: Optional[np.ndarray] = None,
) -> int:
    """Pick a same-subject, different-label partner for ``batch[base_index]``.

    ``labels``/``subjects`` may be passed precomputed to avoid rebuilding
    them for every base in a batch. Raises :class:`NoMaterial` without
    consuming a draw when no candidate exists.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    if not 0 <= base_index < len(batch):
        raise IndexError(f"base_index {base_index} outside batch of {len(batch)}")
    if labels is None:
        labels = np.array([t.label for t in batch])
    if subjects is None:
        subjects = np.array([t.subject_id for t in batch])
    base = batch[base_index]
    candidates = np.flatnonzero((subjects == base.subject_id) & (labels != base.label))
    if candidates.size == 0:
        raise NoMaterial(f"no eligible material for base {base_index}")
    return int(candidates[rng.integers(0, candidates.size)])


def clamp_window(center: int, r: float, axis_len: int) -> tuple[int, int, float]:
    """Resolve the replaced slice ``[start, end]`` for a center and ratio.

    Endpoints are ``center -/+ r*axis_len/2`` rounded half away from zero and
    clipped to the axis. When rounding would make the window longer than
    ``floor(r*axis_len) + 1`` the right edge is pulled in by one, which keeps
    the realized ratio at most ``r + 1/axis_len``. ``r*axis_len < 1`` gives an
    empty window, returned as ``(center, center - 1, 0.0)``.
    """
    if axis_len < 1:
        raise ValueError(f"axis_len must be >= 1, got {axis_len}")
    if not 0 <= center < axis_len:
        raise ValueError(f"center {center} outside [0, {axis_len})")
    if not 0 <= r <= MAX_LAMBDA:
        raise ValueError(f"r must lie in [0, {MAX_LAMBDA}], got {r}")
    span = r * axis_len
    if span < 1:
        return center, center - 1, 0.0
    lo, hi = _window_edges(center, span / 2)
    if hi - lo > math.floor(span):
        hi -= 1
    start = max(0, lo)
    end = min(axis_len - 1, hi)
    return start, end, (end - start + 1) / axis_len


def mix_labels(y_b: int, y_m: int, r: float, K: int) -> SoftLabel:
    """Fused label with mass ``1 - r`` on the base class and ``r`` on the material class.

    ``r`` should be the realized ratio of the window, which can exceed 0.5 by
    one rounding step on short axes.
    """
    if y_b == y_m:
        raise ValueError(f"base and material labels must differ, both are {y_b}")
    if not (0 <= y_b < K and 0 <= y_m < K):
        raise ValueError(f"labels {y_b}, {y_m} must lie in [0, {K})")
    if not 0 <= r <= 1:
        raise ValueError(f"r must lie in [0, 1], got {r}")
    probs = np.zeros(K)
    probs[y_b] = 1.0 - r
    probs[y_m] = r
    return SoftLabel(probs)


def _cropcat(base, material, center, r, K, axis, base_index, material_index) -> AugmentedPair:
    if base.shape != material.shape:
        raise ValueError(f"shape mismatch: base {base.shape} vs material {material.shape}")
    if base.label == material.label:
        raise ValueError(f"base and material share label {base.label}")
    dim = 0 if axis == SPATIAL else 1
    axis_len = base.shape[dim]
    start, end, realized = clamp_window(center, r, axis_len)
    out = np.array(base.data)
    if end >= start:
        if dim == 0:
            out[start : end + 1, :] = material.data[start : end + 1, :]
        else:
            out[:, start : end + 1] = material.data[:, start : end + 1]
    label = mix_labels(base.label, material.label, realized, K)
    prov = Provenance(base_index, material_index, axis, start, end, realized, axis_len)
    return AugmentedPair(out, label, prov)


def cropcat_spatial(
    base: Trial, material: Trial, center: int, r: float, K: int, *, base_index: int = 0, material_index: int = 1
) -> AugmentedPair:
    """Replace a contiguous block of channel rows of ``base`` with ``material``'s."""
    return _cropcat(base, material, center, r, K, SPATIAL, base_index, material_index)


def cropcat_temporal(
    base: Trial, material: Trial, center: int, r: float, K: int, *, base_index: int = 0, material_index: int = 1
) -> AugmentedPair:
    """Replace a contiguous block of time columns of ``base`` with ``material``'s."""
    return _cropcat(base, material, center, r, K, TEMPORAL, base_index, material_index)


def _unchanged(trial: Trial, K: int) -> AugmentedPair:
    return AugmentedPair(trial.data, SoftLabel.one_hot(trial.label, K))


def time_mask(trial: Trial, ratio: float, rng: np.random.Generator, K: int) -> AugmentedPair:
    """Zero one uniformly placed run of ``round(ratio*T)`` time columns."""
    T = trial.shape[1]
    n = min(T, round_half_away(ratio * T))
    if n <= 0:
        return _unchanged(trial, K)
    start = int(rng.integers(0, T - n + 1))
    out = np.array(trial.data)
    out[:, start : start + n] = 0.0
    return AugmentedPair(out, SoftLabel.one_hot(trial.label, K))


def gaussian_noise(trial: Trial, scale: float, rng: np.random.Generator, K: int) -> AugmentedPair:
    if scale < 0:
        raise ValueError(f"scale must be >= 0, got {scale}")
    out = trial.data + scale * rng.standard_normal(trial.shape)
    return AugmentedPair(out, SoftLabel.one_hot(trial.label, K))


def cutout(
    trial: Trial,
    ch_frac: float,
    t_frac: float,
    n_regions: int,
    rng: np.random.Generator,
    K: int,
) -> AugmentedPair:
    """Zero ``n_regions`` rectangles of ``round(ch_frac*C) x round(t_frac*T)``.

    Each rectangle's corner is uniform over the positions that keep it
    inside the trial; rectangles may overlap.
    """
    if not (0 < ch_frac <= 1 and 0 < t_frac <= 1):
        raise ValueError(f"fractions must lie in (0, 1], got {ch_frac}, {t_frac}")
    if n_regions < 1:
        raise ValueError(f"n_regions must be >= 1, got {n_regions}")
    C, T = trial.shape
    h = min(C, round_half_away(ch_frac * C))
    w = min(T, round_half_away(t_frac * T))
    out = np.array(trial.data)
    for _ in range(n_regions):
        c0 = int(rng.integers(0, C - h + 1))
        t0 = int(rng.integers(0, T - w + 1))
        out[c0 : c0 + h, t0 : t0 + w] = 0.0
    return AugmentedPair(out, SoftLabel.one_hot(trial.label, K))


def augment_batch(
    batch: Sequence[Trial], config: AugConfig, K: int, rng: np.random.Generator
) -> list[AugmentedPair]:
    """Augment every trial of ``batch`` once, using it as the base.

    CropCat bases without an eligible partner come back unchanged with a
    one-hot label and ``provenance=None``.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    method = config.method
    out: list[AugmentedPair] = []

    if method == "none":
        return [_unchanged(t, K) for t in batch]

    if method in CROPCAT_METHODS:
        op = cropcat_spatial if method == "cropcat_spatial" else cropcat_temporal
        dim = 0 if method == "cropcat_spatial" else 1
        labels = np.array([t.label for t in batch])
        subjects = np.array([t.subject_id for t in batch])
        for i, base in enumerate(batch):
            try:
                j = select_material(batch, i, rng, labels=labels, subjects=subjects)
            except NoMaterial:
                out.append(_unchanged(base, K))
                continue
            center = sample_center(base.shape[dim], rng)
            r = sample_ratio(config.lam, rng)
            out.append(op(base, batch[j], center, r, K, base_index=i, material_index=j))
        return out

    for t in batch:
        if method == "time_mask":
            out.append(time_mask(t, config.mask_ratio, rng, K))
        elif method == "gaussian_noise":
            out.append(gaussian_noise(t, config.noise_scale, rng, K))
        else:
            out.append(
                cutout(t, config.cutout_channel_frac, config.cutout_time_frac, config.cutout_regions, rng, K)
            )
    return out
