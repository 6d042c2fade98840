"""Seeded synthetic data: Markov action sequences over Gaussian class clusters.

Each class owns a fixed center in feature space; frames scatter around their
class center with isotropic noise. Near segment boundaries the underlying
center linearly cross-fades to the next class over a configurable number of
frames while labels stay crisp, so boundary frames are genuinely ambiguous.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clips import FeatureStream
from .dataio import write_classmap, write_manifest, write_stream

__all__ = ["SynthConfig", "class_centers", "gen_video", "gen_dataset",
           "load_dataset", "nearest_center_accuracy"]

_TEST_SEED_OFFSET = 1_000_000
_CENTER_SEED_OFFSET = 2_000_000


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 4
    width: int = 16
    train_videos: int = 20
    test_videos: int = 5
    t_min: int = 256
    t_max: int = 512
    dur_min: int = 20
    dur_max: int = 80
    center_scale: float = 1.0
    sigma: float = 1.5  # ~90% nearest-center ceiling at the default geometry
    blur: int = 6
    transition: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least two classes, got {self.num_classes}")
        if self.sigma < 0 or self.blur < 0:
            raise ValueError("sigma and blur must be non-negative")
        if not 1 <= self.t_min <= self.t_max:
            raise ValueError(f"bad frame-count range [{self.t_min}, {self.t_max}]")
        if not 1 <= self.dur_min <= self.dur_max:
            raise ValueError(f"bad duration range [{self.dur_min}, {self.dur_max}]")
        if self.transition is not None:
            t = np.asarray(self.transition, dtype=np.float64)
            if t.shape != (self.num_classes, self.num_classes):
                raise ValueError(f"transition matrix must be "
                                 f"({self.num_classes}, {self.num_classes}), got {t.shape}")
            if not np.allclose(t.sum(axis=1), 1.0):
                raise ValueError("transition rows must sum to 1")
            object.__setattr__(self, "transition", t)


def class_centers(cfg: SynthConfig) -> np.ndarray:
    """The (C, D) cluster centers, a function of cfg.seed only."""
    rng = np.random.default_rng([cfg.seed, _CENTER_SEED_OFFSET])
    return cfg.center_scale * rng.normal(size=(cfg.num_classes, cfg.width))


def _next_class(rng: np.random.Generator, current: int, cfg: SynthConfig) -> int:
    if cfg.transition is not None:
        return int(rng.choice(cfg.num_classes, p=cfg.transition[current]))
    step = int(rng.integers(1, cfg.num_classes))
    return (current + step) % cfg.num_classes


def gen_video(cfg: SynthConfig, video_seed: int, video_id: str = "") -> FeatureStream:
    rng = np.random.default_rng([cfg.seed, video_seed])
    centers = class_centers(cfg)
    total = int(rng.integers(cfg.t_min, cfg.t_max + 1))
    labels: list[int] = []
    current = int(rng.integers(cfg.num_classes))
    while len(labels) < total:
        duration = int(rng.integers(cfg.dur_min, cfg.dur_max + 1))
        labels.extend([current] * duration)
        current = _next_class(rng, current, cfg)
    label_arr = np.array(labels[:total], dtype=np.int64)
    base = centers[label_arr].copy()
    if cfg.blur > 0:
        starts = np.flatnonzero(label_arr[1:] != label_arr[:-1]) + 1
        for t0 in starts:
            prev_center = centers[label_arr[t0 - 1]]
            next_center = centers[label_arr[t0]]
            lo = max(0, t0 - cfg.blur)
            hi = min(total, t0 + cfg.blur)
            idx = np.arange(lo, hi)
            alpha = np.clip((idx - t0 + cfg.blur / 2 + 0.5) / cfg.blur, 0.0, 1.0)
            base[lo:hi] = np.outer(1.0 - alpha, prev_center) + np.outer(alpha, next_center)
    features = base + cfg.sigma * rng.normal(size=(total, cfg.width))
    return FeatureStream(id=video_id or f"video_{video_seed}", features=features,
                         labels=label_arr, num_classes=cfg.num_classes)


def gen_dataset(cfg: SynthConfig, out_dir: str | Path) -> list[tuple[str, str]]:
    """Write train/test streams, class map, and manifest; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: list[tuple[str, str]] = []
    for split, count, offset in (("train", cfg.train_videos, 0),
                                 ("test", cfg.test_videos, _TEST_SEED_OFFSET)):
        for i in range(count):
            vid = f"{split}_{i:03d}"
            stream = gen_video(cfg, offset + i, video_id=vid)
            write_stream(out_dir, stream)
            entries.append((split, vid))
    write_classmap(out_dir / "classes.txt",
                   [f"action{c}" for c in range(cfg.num_classes)])
    write_manifest(out_dir / "manifest.txt", entries)
    return entries


def load_dataset(root: str | Path) -> tuple[list[FeatureStream], list[FeatureStream]]:
    """Read a generated dataset back as (train, test) stream lists."""
    from .dataio import read_classmap, read_manifest, read_stream

    root = Path(root)
    names = read_classmap(root / "classes.txt")
    splits: dict[str, list[FeatureStream]] = {"train": [], "test": []}
    for split, vid in read_manifest(root / "manifest.txt"):
        if split not in splits:
            raise ValueError(f"unknown split {split!r} in manifest")
        splits[split].append(read_stream(root, vid, len(names)))
    return splits["train"], splits["test"]


def nearest_center_accuracy(streams: list[FeatureStream], centers: np.ndarray) -> float:
    """Frame accuracy of classify-by-nearest-center, the dataset's ceiling."""
    correct = 0
    total = 0
    for stream in streams:
        d2 = ((stream.features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        correct += int((np.argmin(d2, axis=1) == stream.labels).sum())
        total += stream.num_frames
    return 100.0 * correct / total
