"""Non-overlapping clip sampling and the two feature-extraction paradigms.

A video is consumed as ceil(T/L) clips of L = k*p raw frames each, with k
frames sampled per clip at stride p. Labels keep their raw-frame alignment;
predictions made at the k sampled positions are upsampled back to the clip's
covered window by repetition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat

__all__ = [
    "FeatureStream",
    "ClipSpec",
    "Clip",
    "make_clips",
    "clustering_features",
    "sequential_features",
    "upsample_predictions",
    "concat_episode",
]


@dataclass
class FeatureStream:
    """A video as frame features plus frame-aligned integer labels."""

    id: str
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"stream {self.id}: features must be (T, D), got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(f"stream {self.id}: {self.labels.shape[0]} labels for "
                             f"{self.features.shape[0]} frames")
        if self.num_frames < 1 or self.width < 1:
            raise ValueError(f"stream {self.id}: empty feature array")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.num_classes:
            raise ValueError(f"stream {self.id}: labels outside [0, {self.num_classes})")

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ClipSpec:
    """Frame stacking k and frame skipping p; each clip covers L = k*p frames."""

    k: int
    p: int

    def __post_init__(self):
        if self.k < 1 or self.p < 1:
            raise ValueError(f"clip spec requires k >= 1 and p >= 1, got k={self.k} p={self.p}")

    @property
    def L(self) -> int:
        return self.k * self.p

    def num_clips(self, num_frames: int) -> int:
        return math.ceil(num_frames / self.L)


@dataclass(frozen=True)
class Clip:
    """One clip: which rows are sampled and which raw frames it covers."""

    index: int
    sampled_rows: tuple[int, ...]
    start: int
    stop: int
    padded: bool = field(default=False)

    @property
    def window_len(self) -> int:
        return self.stop - self.start


def make_clips(num_frames: int, spec: ClipSpec) -> list[Clip]:
    """Partition [0, num_frames) into ceil(T/L) clips with clamped sampling."""
    if num_frames < 1:
        raise ValueError(f"need at least one frame, got {num_frames}")
    clips = []
    for j in range(spec.num_clips(num_frames)):
        base = j * spec.L
        rows = tuple(min(base + b * spec.p, num_frames - 1) for b in range(spec.k))
        stop = min(base + spec.L, num_frames)
        clips.append(Clip(index=j, sampled_rows=rows, start=base, stop=stop,
                          padded=stop - base < spec.L))
    return clips


def clustering_features(clip: Clip, stream: FeatureStream, encoder) -> Tensor:
    """Encode the whole clip block in one pass and pool the group axis.

    Treats the clip's k sampled frames as one cluster: a joint forward of the
    k x D_in block, then a mean over the encoder's non-temporal (group) axis,
    giving one embedded row per sampled position.
    """
    block = Tensor(stream.features[list(clip.sampled_rows)])
    return encoder.encode_groups(block).mean(axis=1)


def sequential_features(clip: Clip, stream: FeatureStream, encoder,
                        half_width: int) -> Tensor:
    """Per-position windowed encoding: the sliding-window alternative.

    For each sampled position, encode a centered window of raw frames
    (clamped at the stream edges) and pool it to a single row. Smooths
    across segment boundaries, which is exactly the behavior the clustering
    paradigm avoids. A half-width of ceil(L/2) covers one clip span.
    """
    rows = []
    for center in clip.sampled_rows:
        lo = max(center - half_width, 0)
        hi = min(center + half_width, stream.num_frames - 1)
        window = Tensor(stream.features[lo:hi + 1])
        encoded = encoder.encode_groups(window)
        rows.append(encoded.mean(axis=(0, 1)).reshape(1, -1))
    return concat(rows, axis=0)


def upsample_predictions(values: np.ndarray, spec: ClipSpec, window_len: int) -> np.ndarray:
    """Repeat each sampled-position column p times, truncated to the window.

    values: (C, k) per-position columns; returns (C, window_len).
    """
    if values.shape[1] != spec.k:
        raise ValueError(f"expected {spec.k} columns, got {values.shape[1]}")
    if window_len > spec.L:
        raise ValueError(f"window {window_len} exceeds clip span {spec.L}")
    return np.repeat(values, spec.p, axis=1)[:, :window_len]


def concat_episode(predictions: list[np.ndarray], num_frames: int) -> np.ndarray:
    """Join per-clip label blocks in order and trim to the stream length."""
    joined = np.concatenate(predictions)
    if joined.shape[0] < num_frames:
        raise ValueError(f"clips cover {joined.shape[0]} frames, stream has {num_frames}")
    return joined[:num_frames]
