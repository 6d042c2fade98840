"""Hierarchical block-recurrent temporal model.

A stack of layers, each owning a slice of recurrent memory that persists
across clips. Within a clip, layer o mixes the k sampled positions through a
dilated convolution (dilation 2^o), masked self-attention with rotary
position encoding, and a feed-forward block; memory is read by
cross-attention from the positions to the slots and written back through a
per-slot sigmoid gate. Layer o's updated memory feeds layer o of the next
clip, never any other layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    apply_rotary,
    concat,
    masked_attention,
    rotary_tables,
)
from .layers import Conv1d, LayerNorm, Linear, Module

__all__ = ["TemporalConfig", "MemoryBank", "TemporalLayer", "TemporalModel",
           "dilated_window_mask"]


@dataclass(frozen=True)
class TemporalConfig:
    num_layers: int = 4
    width: int = 128
    memory_slots: int = 512
    heads: int = 1
    window: int = 16

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError(f"need at least one layer, got {self.num_layers}")
        if self.memory_slots < 0:
            raise ValueError(f"memory slots must be >= 0, got {self.memory_slots}")
        if self.width % (2 * self.heads) != 0:
            raise ValueError(f"width {self.width} must split into {self.heads} heads "
                             "of even size for rotary encoding")
        if self.window < 1:
            raise ValueError(f"attention window must be >= 1, got {self.window}")


_MASK_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def dilated_window_mask(k: int, layer_index: int, window: int) -> np.ndarray:
    """Additive (k, k) mask: position i may attend position t iff t is causal
    (i >= t), on layer `layer_index`'s dilation grid ((i-t) % 2^o == 0), and
    within the window (i-t < window * 2^o). Allowed entries 0, others -1e30.
    """
    key = (k, layer_index, window)
    hit = _MASK_CACHE.get(key)
    if hit is not None:
        return hit
    dilation = 2 ** layer_index
    i = np.arange(k)[:, None]
    t = np.arange(k)[None, :]
    delta = i - t
    allowed = (delta >= 0) & (delta % dilation == 0) & (delta < window * dilation)
    mask = np.where(allowed, 0.0, -1e30)
    _MASK_CACHE[key] = mask
    return mask


class MemoryBank:
    """Per-layer recurrent memory: one (M, width) tensor per layer."""

    def __init__(self, layers: list[Tensor], clip_count: int = 0):
        self.layers = layers
        self.clip_count = clip_count

    @classmethod
    def zeros(cls, cfg: TemporalConfig) -> "MemoryBank":
        return cls([Tensor(np.zeros((cfg.memory_slots, cfg.width)))
                    for _ in range(cfg.num_layers)])

    def detach(self) -> "MemoryBank":
        """Cut the autodiff graph at a clip boundary (truncated backprop)."""
        return MemoryBank([m.detach() for m in self.layers], self.clip_count)


class TemporalLayer(Module):
    """One layer: dilated conv, masked+memory attention, feed-forward, gate write."""

    def __init__(self, cfg: TemporalConfig, layer_index: int, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.index = layer_index
        self.dilation = 2 ** layer_index
        d = cfg.width
        self.register("ln_conv", LayerNorm(d))
        self.register("conv", Conv1d(d, d, 3, rng, dilation=self.dilation))
        self.register("ln_attn", LayerNorm(d))
        self.register("wq", Linear(d, d, rng, bias=False))
        self.register("wk", Linear(d, d, rng, bias=False))
        self.register("wv", Linear(d, d, rng, bias=False))
        self.register("wo", Linear(d, d, rng))
        self.register("ln_ffn", LayerNorm(d))
        self.register("ffn_in", Linear(d, 2 * d, rng))
        self.register("ffn_out", Linear(2 * d, d, rng))
        if cfg.memory_slots > 0:
            # Distinct per-slot offsets; without them every zero-initialized
            # slot would receive the identical write forever.
            bound = np.sqrt(1.0 / d)
            self.register("slot_embed", Tensor(
                rng.uniform(-bound, bound, size=(cfg.memory_slots, d)),
                requires_grad=True))
            self.register("write_query", Linear(d, d, rng, bias=False))
            self.register("write_key", Linear(d, d, rng, bias=False))
            self.register("write_value", Linear(d, d, rng, bias=False))
            self.register("write_out", Linear(d, d, rng))
            self.register("gate", Linear(2 * d, d, rng))

    def __call__(self, x: Tensor, mem: Tensor) -> tuple[Tensor, Tensor]:
        d = self.cfg.width
        if x.ndim != 2 or x.shape[1] != d:
            raise ShapeError(f"layer {self.index}: expected (k, {d}) input, got {x.shape}")
        if mem.ndim != 2 or mem.shape != (self.cfg.memory_slots, d):
            raise ShapeError(f"layer {self.index}: expected ({self.cfg.memory_slots}, {d}) "
                             f"memory, got {mem.shape}")
        k = x.shape[0]
        use_mem = self.cfg.memory_slots > 0

        x = x + self.conv(self.ln_conv(x))

        a_in = self.ln_attn(x)
        q = self.wq(a_in)
        keys = self.wk(a_in)
        values = self.wv(a_in)
        if use_mem:
            mem_keys = self.wk(mem)
            mem_values = self.wv(mem)
        mask = dilated_window_mask(k, self.index, self.cfg.window)
        head_dim = d // self.cfg.heads
        cos, sin = rotary_tables(k, head_dim)
        head_parts = []
        for h in range(self.cfg.heads):
            cols = slice(h * head_dim, (h + 1) * head_dim)
            qh, kh, vh = q[:, cols], keys[:, cols], values[:, cols]
            ctx = masked_attention(apply_rotary(qh, cos, sin),
                                   apply_rotary(kh, cos, sin), vh, mask)
            if use_mem:
                # memory read: unrotated query, slots carry no position
                ctx = ctx + masked_attention(qh, mem_keys[:, cols], mem_values[:, cols])
            head_parts.append(ctx)
        ctx = head_parts[0] if len(head_parts) == 1 else concat(head_parts, axis=-1)
        x = x + self.wo(ctx)

        x = x + self.ffn_out(self.ffn_in(self.ln_ffn(x)).gelu())

        if use_mem:
            write_q = self.write_query(mem + self.slot_embed)
            attended = masked_attention(write_q, self.write_key(x), self.write_value(x))
            candidate = self.write_out(attended)
            pooled = x.mean(axis=0, keepdims=True)
            tiled = Tensor(np.ones((self.cfg.memory_slots, 1))) @ pooled
            g = self.gate(concat([tiled, mem], axis=-1)).sigmoid()
            mem = g * candidate + (1.0 - g) * mem
        return x, mem


class TemporalModel(Module):
    """The full layer stack; memory flows layer o -> layer o across clips."""

    def __init__(self, cfg: TemporalConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        for o in range(cfg.num_layers):
            self.register(f"layer{o}", TemporalLayer(cfg, o, rng))

    def fresh_bank(self) -> MemoryBank:
        return MemoryBank.zeros(self.cfg)

    def __call__(self, x: Tensor, bank: MemoryBank) -> tuple[Tensor, MemoryBank]:
        if len(bank.layers) != self.cfg.num_layers:
            raise ShapeError(f"memory bank has {len(bank.layers)} layers, "
                             f"model has {self.cfg.num_layers}")
        updated = []
        for o in range(self.cfg.num_layers):
            x, mem = getattr(self, f"layer{o}")(x, bank.layers[o])
            updated.append(mem)
        return x, MemoryBank(updated, bank.clip_count + 1)
