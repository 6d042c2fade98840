"""Systematic finite-difference verification of every kernel and model block.

Kernels get exhaustive coordinate-wise checks on small random shapes; model
blocks (temporal layer, full temporal step, decision head, the losses) get
directional-derivative probes over all parameters jointly, which validate
the assembled gradient at a fraction of the cost. Everything runs in 64-bit
at a 1e-6 relative-error gate.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .clips import ClipSpec, FeatureStream, make_clips
from .encoder import EncoderConfig
from .head import HeadConfig
from .model import ModelConfig, SegmentationModel
from .reward import RewardConfig
from .temporal import TemporalConfig
from .training import TrainerConfig, clip_cross_entropy, clip_reward

__all__ = ["CheckResult", "check_kernels", "check_blocks", "run_all", "format_table"]

TOLERANCE = 1e-6
FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    cases: int
    max_rel_err: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= TOLERANCE


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / scale


def _coordinate_check(f: Callable[[Tensor], Tensor], x: Tensor) -> float:
    """Exhaustive central-difference check of df/dx, every coordinate."""
    x.zero_grad()
    f(x).backward()
    analytic = x.grad.copy()
    numeric = ad.finite_difference_gradient(f, x, h=FD_STEP).data
    return _rel_err(analytic, numeric)


def _directional_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                       rng: np.random.Generator) -> float:
    """Compare the analytic gradient against one random directional derivative.

    A parameter left without a gradient contributes zero, matching a true
    derivative of zero for parameters the loss provably cannot reach.
    """
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    direction = {name: rng.normal(size=p.data.shape) for name, p in params.items()}
    norm = math.sqrt(sum(float((d * d).sum()) for d in direction.values()))
    analytic = sum(float((p.grad * direction[name]).sum())
                   for name, p in params.items() if p.grad is not None) / norm

    def shifted(sign: float) -> float:
        for name, p in params.items():
            p.data += sign * FD_STEP * direction[name] / norm
        with no_grad():
            value = loss_fn().item()
        for name, p in params.items():
            p.data -= sign * FD_STEP * direction[name] / norm
        return value

    numeric = (shifted(+1.0) - shifted(-1.0)) / (2.0 * FD_STEP)
    return _rel_err(np.array(analytic), np.array(numeric))


def _kernel_specs(rng: np.random.Generator):
    def shape2(max_side=8):
        return (int(rng.integers(1, max_side + 1)), int(rng.integers(1, max_side + 1)))

    def plain(op):
        def make():
            x = Tensor(rng.normal(size=shape2()), requires_grad=True)
            return op, x
        return make

    def scaled_sum(g):
        # reduce through random weights so every coordinate matters
        def op_factory():
            n, m = shape2()
            w = Tensor(rng.normal(size=(n, m)))
            x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
            return (lambda t: (g(t) * w).sum()), x
        return op_factory

    def make_add():
        n, m = shape2()
        other = Tensor(rng.normal(size=(1, m)))
        x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(n, m)))
        return (lambda t: ((t + other) * w).sum()), x

    def make_sub():
        n, m = shape2()
        other = Tensor(rng.normal(size=(n, 1)))
        x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(n, m)))
        return (lambda t: ((other - t) * w).sum()), x

    def make_mul():
        n, m = shape2()
        other = Tensor(rng.normal(size=(m,)))
        x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(n, m)))
        return (lambda t: (t * other * w).sum()), x

    def make_pow():
        n, m = shape2()
        x = Tensor(rng.uniform(0.5, 2.0, size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(n, m)))
        return (lambda t: ((t ** 1.7) * w).sum()), x

    def make_matmul():
        n, k, m = (int(rng.integers(1, 9)) for _ in range(3))
        other = Tensor(rng.normal(size=(k, m)))
        x = Tensor(rng.normal(size=(n, k)), requires_grad=True)
        w = Tensor(rng.normal(size=(n, m)))
        return (lambda t: ((t @ other) * w).sum()), x

    def make_reshape():
        n, m = shape2()
        x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(n * m,)))
        return (lambda t: (t.reshape(n * m) * w).sum()), x

    def make_transpose():
        n, m = shape2()
        x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(m, n)))
        return (lambda t: (t.T * w).sum()), x

    def make_getitem():
        n, m = shape2()
        rows = rng.integers(0, n, size=n)
        x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(n, m)))
        return (lambda t: (t[rows] * w).sum()), x

    def make_concat():
        n, m = shape2()
        x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
        other = Tensor(rng.normal(size=(2, m)))
        w = Tensor(rng.normal(size=(n + 2, m)))
        return (lambda t: (ad.concat([t, other], axis=0) * w).sum()), x

    def make_sum():
        n, m = shape2()
        axis = int(rng.integers(0, 2))
        x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(m,) if axis == 0 else (n,)))
        return (lambda t: (t.sum(axis=axis) * w).sum()), x

    def make_mean():
        n, m = shape2()
        x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(n, 1)))
        return (lambda t: (t.mean(axis=1, keepdims=True) * w).sum()), x

    def make_clamp():
        n, m = shape2()
        x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(n, m)))
        # keep coordinates away from the kink, where FD is ill-defined
        x.data[np.abs(x.data) < 0.05] += 0.1
        return (lambda t: (t.clamp_min(0.0) * w).sum()), x

    def make_softmax():
        n, m = shape2()
        x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(n, m)))
        return (lambda t: (t.softmax(axis=-1) * w).sum()), x

    def make_conv():
        t_len = int(rng.integers(5, 11))
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 4))
        dilation = int(rng.integers(1, 3))
        w = Tensor(rng.normal(size=(3, cin, cout)))
        b = Tensor(rng.normal(size=(cout,)))
        scale = Tensor(rng.normal(size=(t_len, cout)))
        x = Tensor(rng.normal(size=(t_len, cin)), requires_grad=True)
        pad = dilation
        return (lambda t: (ad.conv1d(t, w, b, dilation=dilation, pad_left=pad,
                                     pad_right=pad) * scale).sum()), x

    def make_conv_weights():
        t_len = int(rng.integers(5, 11))
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 4))
        x = Tensor(rng.normal(size=(t_len, cin)))
        scale = Tensor(rng.normal(size=(t_len, cout)))
        w = Tensor(rng.normal(size=(3, cin, cout)), requires_grad=True)
        return (lambda t: (ad.conv1d(x, t, None, dilation=1, pad_left=1,
                                     pad_right=1) * scale).sum()), w

    def make_layer_norm():
        n = int(rng.integers(1, 9))
        m = int(rng.integers(2, 9))
        x = Tensor(rng.normal(size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(n, m)))
        return (lambda t: (ad.layer_norm(t) * w).sum()), x

    def make_attention():
        n = int(rng.integers(1, 7))
        d = int(rng.integers(1, 7))
        k = Tensor(rng.normal(size=(n, d)))
        v = Tensor(rng.normal(size=(n, d)))
        mask = np.triu(np.full((n, n), -1e30), k=1)
        w = Tensor(rng.normal(size=(n, d)))
        x = Tensor(rng.normal(size=(n, d)), requires_grad=True)
        return (lambda t: (ad.masked_attention(t, k, v, mask) * w).sum()), x

    def make_rotary():
        n = int(rng.integers(1, 9))
        d = 2 * int(rng.integers(1, 5))
        cos, sin = ad.rotary_tables(n, d)
        w = Tensor(rng.normal(size=(n, d)))
        x = Tensor(rng.normal(size=(n, d)), requires_grad=True)
        return (lambda t: (ad.apply_rotary(t, cos, sin) * w).sum()), x

    def make_log():
        n, m = shape2()
        x = Tensor(rng.uniform(0.5, 3.0, size=(n, m)), requires_grad=True)
        w = Tensor(rng.normal(size=(n, m)))
        return (lambda t: (t.log() * w).sum()), x

    return {
        "add": make_add,
        "sub": make_sub,
        "mul": make_mul,
        "neg": scaled_sum(lambda t: -t),
        "pow": make_pow,
        "exp": scaled_sum(lambda t: (t * 0.5).exp()),
        "log": make_log,
        "sigmoid": scaled_sum(Tensor.sigmoid),
        "gelu": scaled_sum(Tensor.gelu),
        "softmax": make_softmax,
        "clamp_min": make_clamp,
        "matmul": make_matmul,
        "reshape": make_reshape,
        "transpose": make_transpose,
        "index": make_getitem,
        "concat": make_concat,
        "sum": make_sum,
        "mean": make_mean,
        "conv1d_input": make_conv,
        "conv1d_weight": make_conv_weights,
        "layer_norm": make_layer_norm,
        "attention": make_attention,
        "rotary": make_rotary,
    }


def check_kernels(cases: int = 100, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, make in _kernel_specs(rng).items():
        start = time.perf_counter()
        worst = 0.0
        for _ in range(cases):
            f, x = make()
            worst = max(worst, _coordinate_check(f, x))
        results.append(CheckResult(name, cases, worst, time.perf_counter() - start))
    return results


def _tiny_model(rng: np.random.Generator, memory_slots: int = 3) -> SegmentationModel:
    cfg = ModelConfig(
        clip=ClipSpec(k=4, p=2),
        encoder=EncoderConfig(input_width=5, hidden_width=6, output_width=8, groups=2),
        temporal=TemporalConfig(num_layers=2, width=8, memory_slots=memory_slots,
                                heads=2, window=4),
        head=HeadConfig(num_classes=3, input_width=8, num_blocks=2),
    )
    return SegmentationModel(cfg, rng)


def _tiny_stream(rng: np.random.Generator, frames: int = 14) -> FeatureStream:
    return FeatureStream(
        id="gradcheck",
        features=rng.normal(size=(frames, 5)),
        labels=rng.integers(0, 3, size=frames),
        num_classes=3,
    )


def check_blocks(cases: int = 100, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed + 1)
    results = []

    def run(name: str, build):
        start = time.perf_counter()
        worst = 0.0
        for _ in range(cases):
            loss_fn, params = build()
            worst = max(worst, _directional_check(loss_fn, params, rng))
        results.append(CheckResult(name, cases, worst, time.perf_counter() - start))

    def build_layer():
        model = _tiny_model(rng)
        layer = model.temporal.layer0
        x = Tensor(rng.normal(size=(4, 8)))
        mem = Tensor(rng.normal(size=(3, 8)))

        def loss_fn():
            y, mem_out = layer(x, mem)
            return y.sum() + mem_out.sum()

        return loss_fn, layer.named_parameters()

    def build_stack():
        model = _tiny_model(rng)
        x = Tensor(rng.normal(size=(4, 8)))

        def loss_fn():
            y, bank = model.temporal(x, model.fresh_bank())
            return y.sum() + sum((m.sum() for m in bank.layers), Tensor(0.0))

        return loss_fn, model.temporal.named_parameters()

    def build_head():
        model = _tiny_model(rng)
        x = Tensor(rng.normal(size=(4, 8)))
        labels = rng.integers(0, 3, size=4)

        def loss_fn():
            return clip_cross_entropy(model.head(x, 8), labels)

        return loss_fn, model.head.named_parameters()

    def build_ce():
        model = _tiny_model(rng)
        stream = _tiny_stream(rng)
        clip = make_clips(stream.num_frames, model.cfg.clip)[0]

        def loss_fn():
            action, _ = model.forward_clip(clip, stream, model.fresh_bank())
            return clip_cross_entropy(action, stream.labels[list(clip.sampled_rows)])

        return loss_fn, model.named_parameters()

    def build_mc_loss():
        # Rewards AND the per-clip input memories are frozen at their
        # unperturbed values: truncated backpropagation treats each clip's
        # incoming bank as a constant, and the finite-difference probe must
        # differentiate exactly that function.
        model = _tiny_model(rng)
        stream = _tiny_stream(rng)
        clips = make_clips(stream.num_frames, model.cfg.clip)
        cfg = TrainerConfig(mode="mc")
        with no_grad():
            bank = model.fresh_bank()
            rewards = []
            input_banks = []
            for clip in clips:
                input_banks.append(bank)
                action, bank = model.forward_clip(clip, stream, bank)
                bank = bank.detach()
                rewards.append(clip_reward(action, stream.labels[clip.start:clip.stop],
                                           model.cfg.clip, cfg.reward))

        def loss_fn():
            total = Tensor(0.0)
            for clip, r, bank_in in zip(clips, rewards, input_banks):
                action, _ = model.forward_clip(clip, stream, bank_in)
                ce = clip_cross_entropy(action, stream.labels[list(clip.sampled_rows)])
                total = total + ce * r
            return total * (1.0 / len(clips))

        return loss_fn, model.named_parameters()

    run("temporal_layer", build_layer)
    run("temporal_stack", build_stack)
    run("decision_head", build_head)
    run("clip_cross_entropy", build_ce)
    run("episodic_loss", build_mc_loss)
    return results


def run_all(cases: int = 100, seed: int = 0) -> list[CheckResult]:
    return check_kernels(cases, seed) + check_blocks(cases, seed)


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'cases':>5}  {'max rel err':>12}  {'time':>7}  status"]
    for r in results:
        status = "pass" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.cases:>5}  {r.max_rel_err:>12.3e}  "
                     f"{r.seconds:>6.2f}s  {status}")
    return "\n".join(lines) + "\n"
