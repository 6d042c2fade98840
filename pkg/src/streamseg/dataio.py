"""On-disk formats: feature/label/class-map files, manifests, checkpoints, logs.

All binary formats are little-endian with a four-byte magic. Feature files
hold one float32 row per frame; checkpoints hold named float32 tensors
sorted lexicographically so that identical parameter dicts serialize to
identical bytes.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .clips import FeatureStream

__all__ = [
    "FormatError",
    "write_features",
    "read_features",
    "write_labels",
    "read_labels",
    "write_classmap",
    "read_classmap",
    "write_manifest",
    "read_manifest",
    "stream_paths",
    "write_stream",
    "read_stream",
    "save_checkpoint",
    "load_checkpoint",
    "restore_parameters",
    "METRIC_CSV_HEADER",
    "metric_csv_row",
]

FEATURE_MAGIC = b"SVTS"
CHECKPOINT_MAGIC = b"SVCK"
FORMAT_VERSION = 1

METRIC_CSV_HEADER = "epoch,split,acc,edit,f1_10,f1_25,f1_50"


class FormatError(ValueError):
    """A file does not conform to its declared format."""


def write_features(path: str | Path, features: np.ndarray) -> None:
    features = np.asarray(features)
    if features.ndim != 2:
        raise FormatError(f"features must be (T, D), got shape {features.shape}")
    t, d = features.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, t, d))
        fh.write(features.astype("<f4").tobytes(order="C"))


def read_features(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, t, d = struct.unpack("<III", fh.read(12))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        payload = fh.read(4 * t * d)
        if len(payload) != 4 * t * d:
            raise FormatError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(t, d).astype(np.float64)


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def read_labels(path: str | Path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        return np.array([int(ln) for ln in lines], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer label line ({exc})")


def write_classmap(path: str | Path, names: list[str]) -> None:
    Path(path).write_text("".join(f"{n}\n" for n in names))


def read_classmap(path: str | Path) -> list[str]:
    return [ln for ln in Path(path).read_text().splitlines() if ln.strip()]


def write_manifest(path: str | Path, entries: list[tuple[str, str]]) -> None:
    """entries: (split, video-id) pairs, one tab-separated line each."""
    Path(path).write_text("".join(f"{split}\t{vid}\n" for split, vid in entries))


def read_manifest(path: str | Path) -> list[tuple[str, str]]:
    entries = []
    for ln in Path(path).read_text().splitlines():
        if not ln.strip():
            continue
        parts = ln.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path}: malformed manifest line {ln!r}")
        entries.append((parts[0], parts[1]))
    return entries


def stream_paths(root: str | Path, video_id: str) -> tuple[Path, Path]:
    root = Path(root)
    return root / f"{video_id}.feat", root / f"{video_id}.labels"


def write_stream(root: str | Path, stream: FeatureStream) -> None:
    feat_path, label_path = stream_paths(root, stream.id)
    write_features(feat_path, stream.features)
    write_labels(label_path, stream.labels)


def read_stream(root: str | Path, video_id: str, num_classes: int) -> FeatureStream:
    feat_path, label_path = stream_paths(root, video_id)
    return FeatureStream(id=video_id, features=read_features(feat_path),
                         labels=read_labels(label_path), num_classes=num_classes)


def save_checkpoint(path: str | Path, params: dict[str, Tensor | np.ndarray],
                    version: int = FORMAT_VERSION) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", version, len(params)))
        for name in sorted(params):
            value = params[name]
            data = value.data if isinstance(value, Tensor) else np.asarray(value)
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise FormatError(f"tensor name too long: {name[:40]}...")
            if data.ndim > 0xFF:
                raise FormatError(f"tensor rank too high: {name}")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.astype("<f4").tobytes(order="C"))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            payload = fh.read(4 * n)
            if len(payload) != 4 * n:
                raise FormatError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    return out


def restore_parameters(params: dict[str, Tensor], saved: dict[str, np.ndarray]) -> None:
    """Copy checkpoint values into an existing parameter dict, strict on names."""
    missing = sorted(set(params) - set(saved))
    extra = sorted(set(saved) - set(params))
    if missing or extra:
        raise FormatError(f"checkpoint mismatch: missing={missing[:3]} extra={extra[:3]}")
    for name, p in params.items():
        if saved[name].shape != p.data.shape:
            raise FormatError(f"checkpoint tensor {name!r} has shape {saved[name].shape}, "
                              f"model expects {p.data.shape}")
        p.data = saved[name].astype(p.data.dtype)


def metric_csv_row(epoch: int, split: str, acc: float, edit: float,
                   f1_scores: dict[float, float]) -> str:
    return (f"{epoch},{split},{acc:.4f},{edit:.4f},"
            f"{f1_scores[0.1]:.4f},{f1_scores[0.25]:.4f},{f1_scores[0.5]:.4f}")
