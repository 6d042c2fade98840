"""Scikit-learn style facade over the streaming segmentation stack.

`StreamingSegmenter` is a classifier over frame sequences: fit on one or
more (frames, features) arrays with per-frame labels, predict per-frame
labels for new sequences. Videos may have different lengths, so X is either
a single 2-D array or a list of them.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .clips import ClipSpec, FeatureStream
from .encoder import EncoderConfig
from .head import HeadConfig
from .metrics import evaluate_dataset
from .model import ModelConfig, SegmentationModel
from .optim import AdamW
from .reward import RewardConfig
from .temporal import TemporalConfig
from .training import (TrainerConfig, mc_train_episode, supervised_episode,
                       td_train_episode)

__all__ = ["StreamingSegmenter"]


def _as_sequence_list(X) -> list[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [X]
    if isinstance(X, (list, tuple)):
        out = []
        for i, item in enumerate(X):
            arr = np.asarray(item, dtype=np.float64)
            if arr.ndim != 2:
                raise ValueError(f"sequence {i} must be 2-D (frames, features), "
                                 f"got shape {arr.shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"sequence {i} contains non-finite values")
            out.append(arr)
        if not out:
            raise ValueError("X is empty")
        return out
    raise ValueError("X must be a 2-D array or a list of 2-D arrays")


def _as_label_list(y, lengths: list[int]) -> list[np.ndarray]:
    if isinstance(y, np.ndarray) and y.ndim == 1:
        y = [y]
    if not isinstance(y, (list, tuple)) or len(y) != len(lengths):
        raise ValueError(f"y must provide one label sequence per video "
                         f"({len(lengths)} expected)")
    out = []
    for i, (item, n) in enumerate(zip(y, lengths)):
        arr = np.asarray(item)
        if arr.shape != (n,):
            raise ValueError(f"label sequence {i} has shape {arr.shape}, "
                             f"video has {n} frames")
        out.append(arr)
    return out


class StreamingSegmenter(BaseEstimator):
    """Frame classifier that consumes videos as non-overlapping clips.

    Parameters mirror the underlying model: clip geometry (k frames sampled
    at stride p), model width, recurrent memory size, layer counts, and the
    training mode ("supervised", "mc" for episodic policy gradient, "td"
    for per-clip policy gradient).
    """

    def __init__(self, k: int = 16, p: int = 2, width: int = 32,
                 memory_slots: int = 32, num_layers: int = 2, num_blocks: int = 2,
                 heads: int = 1, window: int = 16, mode: str = "supervised",
                 epochs: int = 10, lr: float = 5e-4, weight_decay: float = 1e-4,
                 grad_clip: float = 10.0, beta1: float = 4.0, beta2: float = -1.0,
                 seed: int = 0):
        self.k = k
        self.p = p
        self.width = width
        self.memory_slots = memory_slots
        self.num_layers = num_layers
        self.num_blocks = num_blocks
        self.heads = heads
        self.window = window
        self.mode = mode
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.beta1 = beta1
        self.beta2 = beta2
        self.seed = seed

    def _streams(self, X, y=None) -> list[FeatureStream]:
        seqs = _as_sequence_list(X)
        widths = {s.shape[1] for s in seqs}
        if len(widths) > 1:
            raise ValueError(f"videos disagree on feature width: {sorted(widths)}")
        if hasattr(self, "n_features_in_") and seqs[0].shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, "
                             f"got {seqs[0].shape[1]}")
        if y is None:
            return [FeatureStream(id=f"x{i}", features=s,
                                  labels=np.zeros(s.shape[0], dtype=np.int64),
                                  num_classes=max(len(getattr(self, "classes_", [1])), 2))
                    for i, s in enumerate(seqs)]
        labels = _as_label_list(y, [s.shape[0] for s in seqs])
        encoded = [np.searchsorted(self.classes_, lab) for lab in labels]
        for i, (lab, enc) in enumerate(zip(labels, encoded)):
            if not np.array_equal(self.classes_[enc], lab):
                raise ValueError(f"label sequence {i} contains classes unseen in fit")
        return [FeatureStream(id=f"x{i}", features=s, labels=enc,
                              num_classes=len(self.classes_))
                for i, (s, enc) in enumerate(zip(seqs, encoded))]

    def fit(self, X, y) -> "StreamingSegmenter":
        seqs = _as_sequence_list(X)
        labels = _as_label_list(y, [s.shape[0] for s in seqs])
        self.classes_ = np.unique(np.concatenate(labels))
        if len(self.classes_) < 2:
            raise ValueError("fit needs at least two distinct classes")
        self.n_features_in_ = seqs[0].shape[1]
        streams = self._streams(seqs, labels)
        cfg = ModelConfig(
            clip=ClipSpec(k=self.k, p=self.p),
            encoder=EncoderConfig(input_width=self.n_features_in_,
                                  hidden_width=self.width, output_width=self.width),
            temporal=TemporalConfig(num_layers=self.num_layers, width=self.width,
                                    memory_slots=self.memory_slots, heads=self.heads,
                                    window=self.window),
            head=HeadConfig(num_classes=len(self.classes_), input_width=self.width,
                            num_blocks=self.num_blocks),
        )
        trainer = TrainerConfig(mode=self.mode, epochs=self.epochs, seed=self.seed,
                                lr=self.lr, weight_decay=self.weight_decay,
                                grad_clip=self.grad_clip,
                                reward=RewardConfig(beta1=self.beta1, beta2=self.beta2))
        rng = np.random.default_rng(self.seed)
        self.model_ = SegmentationModel(cfg, rng)
        opt = AdamW(self.model_.named_parameters(), lr=self.lr,
                    weight_decay=self.weight_decay, grad_clip=self.grad_clip)
        step_fn = {"supervised": supervised_episode, "mc": mc_train_episode,
                   "td": td_train_episode}[trainer.mode]
        for epoch in range(1, self.epochs + 1):
            order = np.random.default_rng([self.seed, epoch]).permutation(len(streams))
            for idx in order:
                step_fn(self.model_, streams[int(idx)], opt, trainer)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError("this StreamingSegmenter is not fitted; call fit first")

    def predict(self, X):
        """Per-frame labels; a list input returns a list of label arrays."""
        self._check_fitted()
        single = isinstance(X, np.ndarray) and X.ndim == 2
        outputs = []
        for stream in self._streams(X):
            predictions, _ = self.model_.run_episode(stream)
            outputs.append(self.classes_[predictions])
        return outputs[0] if single else outputs

    def predict_proba(self, X):
        """Per-frame class probabilities, one (frames, classes) array per video."""
        self._check_fitted()
        single = isinstance(X, np.ndarray) and X.ndim == 2
        outputs = []
        for stream in self._streams(X):
            _, actions = self.model_.run_episode(stream)
            blocks = [np.repeat(a.probs.data, self.p, axis=1)[:, :a.window_len]
                      for a in actions]
            outputs.append(np.concatenate(blocks, axis=1).T[:stream.num_frames])
        return outputs[0] if single else outputs

    def score(self, X, y) -> float:
        """Mean frame accuracy over the given videos, in [0, 1]."""
        self._check_fitted()
        single = isinstance(X, np.ndarray) and X.ndim == 2
        predictions = self.predict(X)
        if single:
            predictions, y = [predictions], [y]
        labels = _as_label_list(y, [len(p) for p in predictions])
        pairs = [(p, lab) for p, lab in zip(predictions, labels)]
        return evaluate_dataset(pairs).acc / 100.0
