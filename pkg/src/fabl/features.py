"""Skeletal features, per-joint histograms and the block layout of x.

Four modalities, in this fixed order:

0. spatial displacement  -- joint minus torso, 3 channels
1. temporal displacement -- joint at t minus joint at t-1, 3 channels
2. long-term displacement -- joint at t minus joint at frame 0, 3 channels
3. spatial distance      -- Euclidean norm of the spatial displacement, 1 channel

Every (modality, joint) pair becomes one block of ``bins * channels`` entries.
Blocks are laid out modality-major, joint-minor; channels are concatenated in
x, y, z order inside a block.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import kernels
from .errors import EmptyRange, LayoutMismatch, ModelMismatch, NonFiniteCoordinate, TooShort, ValidationError
from .skeleton import BodyModel, SkeletonFrame, SkeletonSequence

MODALITIES = ("spatial_displacement", "temporal_displacement", "longterm_displacement", "spatial_distance")
CHANNELS = (3, 3, 3, 1)


@dataclass(frozen=True)
class PartitionLayout:
    """Block structure of a feature vector.

    ``dims[q][r]`` is the size of joint ``r``'s block inside modality ``q``.
    """

    dims: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        dims = tuple(tuple(int(v) for v in row) for row in self.dims)
        if not dims or not dims[0]:
            raise ValidationError("layout needs at least one modality and one joint")
        if len({len(row) for row in dims}) != 1:
            raise ValidationError("every modality must have the same number of joints")
        if any(v < 1 for row in dims for v in row):
            raise ValidationError("block dimensions must be positive")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def uniform(cls, m: int, s: int, block: int) -> "PartitionLayout":
        return cls(tuple((block,) * s for _ in range(m)))

    @property
    def m(self) -> int:
        return len(self.dims)

    @property
    def s(self) -> int:
        return len(self.dims[0])

    @cached_property
    def dims_array(self) -> np.ndarray:
        return np.array(self.dims, dtype=np.intp)

    @property
    def modality_dims(self) -> np.ndarray:
        """d_q for every modality."""
        return self.dims_array.sum(axis=1)

    @property
    def joint_dims(self) -> np.ndarray:
        """d_k for every joint (summed over modalities)."""
        return self.dims_array.sum(axis=0)

    @property
    def d(self) -> int:
        return int(self.dims_array.sum())

    @cached_property
    def offsets(self) -> np.ndarray:
        """Start index of every (q, r) block, shape (m, s)."""
        flat = np.concatenate([[0], np.cumsum(self.dims_array.ravel())[:-1]])
        return flat.reshape(self.m, self.s)

    def block(self, q: int, r: int) -> slice:
        start = int(self.offsets[q, r])
        return slice(start, start + self.dims[q][r])

    def modality_slice(self, q: int) -> slice:
        start = int(self.offsets[q, 0])
        return slice(start, start + int(self.modality_dims[q]))

    def joint_indices(self, k: int) -> np.ndarray:
        """Flat indices of joint k's entries gathered across all modalities."""
        return np.concatenate([np.arange(self.block(q, k).start, self.block(q, k).stop) for q in range(self.m)])

    @cached_property
    def modality_ids(self) -> np.ndarray:
        ids = np.repeat(np.arange(self.m), self.modality_dims)
        ids.setflags(write=False)
        return ids

    @cached_property
    def joint_ids(self) -> np.ndarray:
        ids = np.repeat(np.tile(np.arange(self.s), self.m), self.dims_array.ravel())
        ids.setflags(write=False)
        return ids

    def to_dict(self):
        return {"m": self.m, "s": self.s, "dims": [list(row) for row in self.dims]}

    @classmethod
    def from_dict(cls, doc) -> "PartitionLayout":
        layout = cls(tuple(tuple(row) for row in doc["dims"]))
        if layout.m != doc.get("m", layout.m) or layout.s != doc.get("s", layout.s):
            raise ValidationError("layout descriptor m/s disagree with dims table")
        return layout


@dataclass(frozen=True)
class HistogramConfig:
    """``fixed_range=None`` selects the train-minmax policy."""

    bins: int = 16
    fixed_range: tuple[float, float] | None = None
    normalize: bool = True

    def __post_init__(self):
        if int(self.bins) < 1:
            raise ValidationError(f"bins must be >= 1, got {self.bins}")
        object.__setattr__(self, "bins", int(self.bins))
        if self.fixed_range is not None:
            lo, hi = (float(v) for v in self.fixed_range)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise EmptyRange(f"fixed histogram range requires lo < hi, got ({lo}, {hi})")
            object.__setattr__(self, "fixed_range", (lo, hi))

    @property
    def range_policy(self) -> str:
        return "train_minmax" if self.fixed_range is None else "fixed"

    def to_dict(self):
        return {
            "bins": self.bins,
            "range_policy": self.range_policy,
            "fixed_range": None if self.fixed_range is None else list(self.fixed_range),
            "normalize": self.normalize,
        }

    @classmethod
    def from_dict(cls, doc) -> "HistogramConfig":
        fixed = doc.get("fixed_range")
        return cls(int(doc["bins"]), None if fixed is None else tuple(fixed), bool(doc["normalize"]))


@dataclass(frozen=True, eq=False)
class FeatureRanges:
    """Histogram range per (modality, channel); frozen at training time."""

    lo: tuple[np.ndarray, ...]
    hi: tuple[np.ndarray, ...]

    def __post_init__(self):
        lo = tuple(np.array(a, dtype=np.float64) for a in self.lo)
        hi = tuple(np.array(a, dtype=np.float64) for a in self.hi)
        if [a.shape for a in lo] != [a.shape for a in hi]:
            raise ValidationError("lo/hi range shapes differ")
        for a, b in zip(lo, hi):
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(a < b)):
                raise EmptyRange("every histogram range needs finite lo < hi")
            a.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def __eq__(self, other):
        if not isinstance(other, FeatureRanges):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.lo + self.hi, other.lo + other.hi))

    def to_dict(self):
        return {"lo": [a.tolist() for a in self.lo], "hi": [a.tolist() for a in self.hi]}

    @classmethod
    def from_dict(cls, doc) -> "FeatureRanges":
        return cls(tuple(doc["lo"]), tuple(doc["hi"]))


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    layout: PartitionLayout

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.layout.d,):
            raise LayoutMismatch(f"feature vector has shape {v.shape}, layout expects ({self.layout.d},)")
        if not np.all(np.isfinite(v)):
            raise ValidationError("feature vector contains non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


# -- per-frame features -------------------------------------------------------

def spatial_displacement(frame: SkeletonFrame) -> np.ndarray:
    """Each joint's offset from the torso joint, shape (s, 3)."""
    return frame.joints - frame.joints[frame.torso_index]


def _check_pair(curr: SkeletonFrame, other: SkeletonFrame):
    if curr.n_joints != other.n_joints or curr.torso_index != other.torso_index:
        raise ModelMismatch("frames come from different body models")


def temporal_displacement(curr: SkeletonFrame, prev: SkeletonFrame) -> np.ndarray:
    _check_pair(curr, prev)
    return curr.joints - prev.joints


def longterm_displacement(curr: SkeletonFrame, initial: SkeletonFrame) -> np.ndarray:
    _check_pair(curr, initial)
    return curr.joints - initial.joints


def _norm3(v: np.ndarray) -> np.ndarray:
    return np.sqrt(v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1] + v[..., 2] * v[..., 2])


def spatial_distance(frame: SkeletonFrame) -> np.ndarray:
    """Euclidean distance of each joint to the torso joint, shape (s,)."""
    return _norm3(spatial_displacement(frame))


def feature_streams(seq: SkeletonSequence) -> list[np.ndarray]:
    """Per-frame streams for all four modalities, each shaped (L, s, channels).

    Temporal modalities start at frame 1.
    """
    c = seq.coords
    spatial = c - c[:, seq.torso_index : seq.torso_index + 1, :]
    temporal = c[1:] - c[:-1]
    longterm = c[1:] - c[0]
    distance = _norm3(spatial)[..., None]
    return [spatial, temporal, longterm, distance]


# -- histograms and layout ----------------------------------------------------

def layout_for(model: BodyModel | int, cfg: HistogramConfig) -> PartitionLayout:
    s = model if isinstance(model, int) else model.n_joints
    return PartitionLayout(tuple((cfg.bins * ch,) * s for ch in CHANNELS))


def _pad_degenerate(lo: np.ndarray, hi: np.ndarray):
    lo, hi = lo.copy(), hi.copy()
    flat = ~(hi > lo)
    pad = 64 * np.finfo(np.float64).eps * np.maximum(1.0, np.abs(lo[flat]))
    lo[flat] -= pad
    hi[flat] += pad
    return lo, hi


def fit_ranges(sequences: Sequence[SkeletonSequence], cfg: HistogramConfig) -> FeatureRanges:
    """Resolve histogram ranges for ``cfg`` over a training collection."""
    if cfg.fixed_range is not None:
        lo, hi = cfg.fixed_range
        return FeatureRanges(tuple(np.full(ch, lo) for ch in CHANNELS), tuple(np.full(ch, hi) for ch in CHANNELS))
    if not sequences:
        raise ValidationError("cannot fit histogram ranges on an empty collection")
    los = [np.full(ch, np.inf) for ch in CHANNELS]
    his = [np.full(ch, -np.inf) for ch in CHANNELS]
    for seq in sequences:
        for q, stream in enumerate(feature_streams(seq)):
            los[q] = np.minimum(los[q], stream.min(axis=(0, 1)))
            his[q] = np.maximum(his[q], stream.max(axis=(0, 1)))
    padded = [_pad_degenerate(lo, hi) for lo, hi in zip(los, his)]
    return FeatureRanges(tuple(p[0] for p in padded), tuple(p[1] for p in padded))


def extract_features(
    seq: SkeletonSequence,
    cfg: HistogramConfig = HistogramConfig(),
    ranges: FeatureRanges | None = None,
    layout: PartitionLayout | None = None,
) -> FeatureVector:
    """Histogram every feature stream per joint and channel into one vector.

    Without ``ranges``, train-minmax ranges are fitted on ``seq`` alone.
    Values outside the range land in the edge bins.
    """
    if seq.n_frames < 2:
        raise TooShort(seq.n_frames)
    bad = ~np.isfinite(seq.coords).all(axis=2)
    if bad.any():
        t, j = np.argwhere(bad)[0]
        raise NonFiniteCoordinate(int(t), int(j))
    if ranges is None:
        ranges = fit_ranges([seq], cfg)
    if layout is None:
        layout = layout_for(seq.n_joints, cfg)
    elif layout != layout_for(seq.n_joints, cfg):
        raise LayoutMismatch("layout does not match the sequence's joint count and histogram config")
    parts = []
    for q, stream in enumerate(feature_streams(seq)):
        counts = kernels.channel_histograms(
            np.ascontiguousarray(stream), ranges.lo[q], ranges.hi[q], cfg.bins
        )
        if cfg.normalize:
            counts /= stream.shape[0]
        parts.append(counts.ravel())
    return FeatureVector(np.concatenate(parts), layout)


def extract_matrix(
    sequences: Sequence[SkeletonSequence],
    cfg: HistogramConfig = HistogramConfig(),
    ranges: FeatureRanges | None = None,
) -> tuple[np.ndarray, PartitionLayout, FeatureRanges]:
    """Featurize a collection into a d x n matrix (one column per sequence)."""
    if not sequences:
        raise ValidationError("no sequences to featurize")
    if ranges is None:
        ranges = fit_ranges(sequences, cfg)
    layout = layout_for(sequences[0].n_joints, cfg)
    cols = [extract_features(seq, cfg, ranges, layout).values for seq in sequences]
    return np.stack(cols, axis=1), layout, ranges
