"""The full segmentation model: encoder, temporal stack, decision head."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .clips import (Clip, ClipSpec, FeatureStream, clustering_features,
                    concat_episode, make_clips, sequential_features)
from .encoder import Encoder, EncoderConfig
from .head import ActionLogits, DecisionHead, HeadConfig, decide
from .layers import Module
from .temporal import MemoryBank, TemporalConfig, TemporalModel

__all__ = ["ModelConfig", "SegmentationModel"]

PARADIGMS = ("clustering", "sequential")


@dataclass(frozen=True)
class ModelConfig:
    clip: ClipSpec
    encoder: EncoderConfig
    temporal: TemporalConfig
    head: HeadConfig
    paradigm: str = "clustering"
    sequential_half_width: int | None = None

    def __post_init__(self):
        if self.paradigm not in PARADIGMS:
            raise ValueError(f"paradigm must be one of {PARADIGMS}, got {self.paradigm!r}")
        if self.encoder.output_width != self.temporal.width:
            raise ValueError(f"encoder output {self.encoder.output_width} != "
                             f"temporal width {self.temporal.width}")
        if self.head.input_width != self.temporal.width:
            raise ValueError(f"head input {self.head.input_width} != "
                             f"temporal width {self.temporal.width}")


class SegmentationModel(Module):
    """Streams a video clip-by-clip, emitting per-clip class probabilities."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.register("encoder", Encoder(cfg.encoder, rng))
        self.register("temporal", TemporalModel(cfg.temporal, rng))
        self.register("head", DecisionHead(cfg.head, rng))

    def fresh_bank(self) -> MemoryBank:
        return self.temporal.fresh_bank()

    def extract(self, clip: Clip, stream: FeatureStream) -> Tensor:
        if self.cfg.paradigm == "clustering":
            return clustering_features(clip, stream, self.encoder)
        hw = self.cfg.sequential_half_width
        if hw is None:
            hw = math.ceil(self.cfg.clip.L / 2)
        return sequential_features(clip, stream, self.encoder, hw)

    def forward_sampled(self, sampled: np.ndarray, window_len: int,
                        bank: MemoryBank) -> tuple[ActionLogits, MemoryBank]:
        """Clustering-paradigm forward from an already-gathered (k, D_in) block.

        This is the streaming entry point: it needs only the clip's own rows,
        never the rest of the stream.
        """
        features = self.encoder.encode_groups(Tensor(sampled)).mean(axis=1)
        state, bank = self.temporal(features, bank)
        return self.head(state, window_len), bank

    def forward_clip(self, clip: Clip, stream: FeatureStream,
                     bank: MemoryBank) -> tuple[ActionLogits, MemoryBank]:
        if self.cfg.paradigm == "clustering":
            return self.forward_sampled(stream.features[list(clip.sampled_rows)],
                                        clip.window_len, bank)
        features = self.extract(clip, stream)
        state, bank = self.temporal(features, bank)
        action = self.head(state, clip.window_len)
        return action, bank

    def run_episode(self, stream: FeatureStream) -> tuple[np.ndarray, list[ActionLogits]]:
        """Stream the whole video without recording gradients.

        Returns the length-T hard label sequence and the per-clip decisions.
        """
        clips = make_clips(stream.num_frames, self.cfg.clip)
        actions: list[ActionLogits] = []
        blocks: list[np.ndarray] = []
        with no_grad():
            bank = self.fresh_bank()
            for clip in clips:
                action, bank = self.forward_clip(clip, stream, bank)
                bank = bank.detach()
                actions.append(action)
                blocks.append(decide(action, self.cfg.clip))
        return concat_episode(blocks, stream.num_frames), actions
