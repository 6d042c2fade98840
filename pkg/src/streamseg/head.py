"""Decision head: class logits per sampled position plus refinement blocks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor
from .clips import ClipSpec
from .layers import Conv1d, Linear, Module

__all__ = ["HeadConfig", "ActionLogits", "DecisionHead", "decide"]


@dataclass(frozen=True)
class HeadConfig:
    num_classes: int
    input_width: int
    num_blocks: int = 4

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least two classes, got {self.num_classes}")
        if self.num_blocks < 0:
            raise ValueError(f"block count must be >= 0, got {self.num_blocks}")


@dataclass
class ActionLogits:
    """Per-clip decision: (C, k) logits and per-position class probabilities."""

    logits: Tensor
    probs: Tensor
    window_len: int

    @property
    def num_classes(self) -> int:
        return self.logits.shape[0]

    @property
    def positions(self) -> int:
        return self.logits.shape[1]


class DecisionHead(Module):
    """Linear projection to classes, refined by dilated residual conv blocks.

    Refinement runs on the logit sequence: block b applies a dilation-2^b
    width-3 convolution, GELU, then a 1x1 convolution, added residually.
    """

    def __init__(self, cfg: HeadConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.register("proj", Linear(cfg.input_width, cfg.num_classes, rng))
        c = cfg.num_classes
        for b in range(cfg.num_blocks):
            self.register(f"block{b}_dilated", Conv1d(c, c, 3, rng, dilation=2 ** b))
            self.register(f"block{b}_pointwise", Conv1d(c, c, 1, rng))

    def __call__(self, state: Tensor, window_len: int) -> ActionLogits:
        if state.ndim != 2 or state.shape[1] != self.cfg.input_width:
            raise ShapeError(f"head expects (k, {self.cfg.input_width}), got {state.shape}")
        h = self.proj(state)
        for b in range(self.cfg.num_blocks):
            dilated = getattr(self, f"block{b}_dilated")
            pointwise = getattr(self, f"block{b}_pointwise")
            h = h + pointwise(dilated(h).gelu())
        probs = h.softmax(axis=-1)
        return ActionLogits(logits=h.T, probs=probs.T, window_len=window_len)


def decide(action: ActionLogits, spec: ClipSpec) -> np.ndarray:
    """Hard labels for the clip's covered frames.

    Argmax per position (ties -> lowest class id), each repeated p times,
    truncated to the covered window.
    """
    hard = np.argmax(action.probs.data, axis=0)
    return np.repeat(hard, spec.p)[:action.window_len]
