"""Frame encoder: a position-wise MLP standing in for a heavy video backbone.

Deliberately contains no temporal mixing, so that every cross-frame effect in
the model is attributable to the temporal layers downstream. The output
carries an extra "group" axis playing the role of spatial structure; the
clip paradigms in `clips` decide how that axis is pooled away.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor
from .layers import Linear, Module

__all__ = ["EncoderConfig", "Encoder"]


@dataclass(frozen=True)
class EncoderConfig:
    input_width: int
    hidden_width: int
    output_width: int
    depth: int = 2
    groups: int = 1

    def __post_init__(self):
        if min(self.input_width, self.hidden_width, self.output_width) < 1:
            raise ValueError(f"encoder widths must be >= 1, got {self}")
        if self.depth < 1 or self.groups < 1:
            raise ValueError(f"encoder depth and groups must be >= 1, got {self}")


class Encoder(Module):
    """Per-frame MLP producing (n, groups, output_width) embeddings."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        widths = [cfg.input_width] + [cfg.hidden_width] * (cfg.depth - 1)
        widths.append(cfg.output_width * cfg.groups)
        for i in range(cfg.depth):
            self.register(f"fc{i}", Linear(widths[i], widths[i + 1], rng))

    def encode_groups(self, block: Tensor) -> Tensor:
        """(n, input_width) -> (n, groups, output_width), one row per frame."""
        if block.ndim != 2 or block.shape[1] != self.cfg.input_width:
            raise ShapeError(f"encoder expects (n, {self.cfg.input_width}), got {block.shape}")
        h = block
        for i in range(self.cfg.depth):
            h = getattr(self, f"fc{i}")(h)
            if i < self.cfg.depth - 1:
                h = h.gelu()
        return h.reshape(block.shape[0], self.cfg.groups, self.cfg.output_width)

    def __call__(self, block: Tensor) -> Tensor:
        """(n, input_width) -> (n, output_width) with the group axis pooled."""
        return self.encode_groups(block).mean(axis=1)
