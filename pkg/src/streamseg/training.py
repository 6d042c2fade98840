"""Training procedures: supervised, episodic policy gradient, per-clip TD.

All three share the same per-clip cross-entropy. The policy-gradient modes
scale it by the clip's dice reward, treated as a constant: gradients flow
through the log-probabilities only, never through the reward. Memory is
detached at every clip boundary, so backpropagation is truncated to a
single clip in all modes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, no_grad
from .clips import Clip, ClipSpec, FeatureStream, concat_episode, make_clips, upsample_predictions
from .dataio import METRIC_CSV_HEADER, metric_csv_row, save_checkpoint
from .head import ActionLogits, decide
from .metrics import evaluate_dataset
from .model import ModelConfig, SegmentationModel
from .optim import AdamW
from .reward import RewardConfig, episode_return, reward

__all__ = [
    "NumericalError",
    "TrainerConfig",
    "Episode",
    "clip_cross_entropy",
    "clip_reward",
    "supervised_episode",
    "mc_train_episode",
    "td_train_episode",
    "run_training",
    "evaluate_model",
]

MODES = ("supervised", "mc", "td")
PROB_FLOOR = 1e-12


class NumericalError(ArithmeticError):
    """A loss or parameter became non-finite during training."""


@dataclass(frozen=True)
class TrainerConfig:
    mode: str = "supervised"
    epochs: int = 10
    seed: int = 0
    lr: float = 5e-4
    weight_decay: float = 1e-4
    grad_clip: float = 10.0
    ce_norm: str = "classes"  # "classes": 1/(k*C); "frames": 1/k
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.ce_norm not in ("classes", "frames"):
            raise ValueError(f"ce_norm must be 'classes' or 'frames', got {self.ce_norm!r}")


@dataclass
class Episode:
    """One full pass over a stream: per-clip decisions, rewards, final labels."""

    stream_id: str
    clips: list[Clip]
    actions: list[ActionLogits]
    rewards: list[float]
    predictions: np.ndarray

    @property
    def episode_return(self) -> float:
        return episode_return(self.rewards)


def clip_cross_entropy(action: ActionLogits, sampled_labels: np.ndarray,
                       norm: str = "classes") -> Tensor:
    """Negative log-likelihood of the labels at the k sampled positions.

    Normalized by k*C ("classes") or by k ("frames"). Probabilities are
    floored at 1e-12 so a confidently wrong position costs a large but
    finite amount.
    """
    num_classes, k = action.probs.shape
    sampled_labels = np.asarray(sampled_labels)
    if sampled_labels.shape != (k,):
        raise ValueError(f"expected {k} sampled labels, got shape {sampled_labels.shape}")
    if sampled_labels.min() < 0 or sampled_labels.max() >= num_classes:
        raise ValueError(f"labels outside [0, {num_classes})")
    picked = action.probs[sampled_labels, np.arange(k)]
    denom = k * num_classes if norm == "classes" else k
    return picked.clamp_min(PROB_FLOOR).log().sum() * (-1.0 / denom)


def clip_reward(action: ActionLogits, window_labels: np.ndarray, spec: ClipSpec,
                cfg: RewardConfig) -> float:
    """Dice reward over the clip's full covered window.

    Predictions live at the k sampled positions; they are upsampled by
    repetition to the covered frames before scoring, so the reward sees the
    same label resolution the metrics do.
    """
    upsampled = upsample_predictions(action.probs.data, spec, action.window_len)
    return reward(upsampled, window_labels, cfg)


def _check_finite(value: float, context: str) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss in {context}: {value}")


def _backward_all(loss: Tensor, opt: AdamW) -> None:
    """Backward pass that materializes every parameter's gradient.

    Backpropagation is truncated at clip boundaries, so parameters that only
    influence future clips through the detached memory (the write path) have
    a gradient of exactly zero for the current loss. backward() leaves those
    untouched; fill the true zeros in so the optimizer sees a complete set.
    """
    opt.zero_grad()
    loss.backward()
    for p in opt.params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def _roll_episode(model: SegmentationModel, stream: FeatureStream,
                  clips: list[Clip], cfg: TrainerConfig) -> Episode:
    """Forward the whole stream without gradients, collecting rewards."""
    actions: list[ActionLogits] = []
    rewards: list[float] = []
    blocks: list[np.ndarray] = []
    with no_grad():
        bank = model.fresh_bank()
        for clip in clips:
            action, bank = model.forward_clip(clip, stream, bank)
            bank = bank.detach()
            actions.append(action)
            rewards.append(clip_reward(action, stream.labels[clip.start:clip.stop],
                                       model.cfg.clip, cfg.reward))
            blocks.append(decide(action, model.cfg.clip))
    predictions = concat_episode(blocks, stream.num_frames)
    return Episode(stream.id, clips, actions, rewards, predictions)


def supervised_episode(model: SegmentationModel, stream: FeatureStream,
                       opt: AdamW, cfg: TrainerConfig) -> float:
    """One optimizer step per clip on the plain cross-entropy. Returns mean CE."""
    clips = make_clips(stream.num_frames, model.cfg.clip)
    bank = model.fresh_bank()
    losses = []
    for clip in clips:
        action, bank = model.forward_clip(clip, stream, bank)
        bank = bank.detach()
        loss = clip_cross_entropy(action, stream.labels[list(clip.sampled_rows)],
                                  cfg.ce_norm)
        _check_finite(loss.item(), f"supervised clip {clip.index} of {stream.id}")
        _backward_all(loss, opt)
        opt.step()
        losses.append(loss.item())
    return float(np.mean(losses))


def mc_train_episode(model: SegmentationModel, stream: FeatureStream,
                     opt: AdamW, cfg: TrainerConfig) -> Episode:
    """Episodic policy gradient: one update per video.

    Pass 1 rolls the episode without gradients to collect the per-clip
    rewards; pass 2 re-rolls with recording and minimizes
    (1/q) * sum_j r_j * CE_j in a single step. No weight changes between
    the passes, so their forward values agree bitwise.
    """
    clips = make_clips(stream.num_frames, model.cfg.clip)
    episode = _roll_episode(model, stream, clips, cfg)
    if not any(r != 0.0 for r in episode.rewards):
        # zero reward everywhere: the estimator's gradient is exactly zero,
        # so the episode carries no learning signal and no update is made
        return episode
    bank = model.fresh_bank()
    total = None
    for clip, r in zip(clips, episode.rewards):
        action, bank = model.forward_clip(clip, stream, bank)
        bank = bank.detach()
        ce = clip_cross_entropy(action, stream.labels[list(clip.sampled_rows)],
                                cfg.ce_norm)
        term = ce * r
        total = term if total is None else total + term
    loss = total * (1.0 / len(clips))
    _check_finite(loss.item(), f"episodic update of {stream.id}")
    _backward_all(loss, opt)
    opt.step()
    return episode


def td_train_episode(model: SegmentationModel, stream: FeatureStream,
                     opt: AdamW, cfg: TrainerConfig) -> Episode:
    """Per-clip policy gradient: the immediate reward scales each clip's CE,
    and the optimizer steps before the next clip is read. Memory carries
    forward (detached) across the update.
    """
    clips = make_clips(stream.num_frames, model.cfg.clip)
    bank = model.fresh_bank()
    actions: list[ActionLogits] = []
    rewards: list[float] = []
    blocks: list[np.ndarray] = []
    for clip in clips:
        action, next_bank = model.forward_clip(clip, stream, bank)
        window_labels = stream.labels[clip.start:clip.stop]
        r = clip_reward(action, window_labels, model.cfg.clip, cfg.reward)
        if r != 0.0:
            loss = clip_cross_entropy(action, stream.labels[list(clip.sampled_rows)],
                                      cfg.ce_norm) * r
            _check_finite(loss.item(), f"td clip {clip.index} of {stream.id}")
            _backward_all(loss, opt)
            opt.step()
        bank = next_bank.detach()
        actions.append(action)
        rewards.append(r)
        blocks.append(decide(action, model.cfg.clip))
    predictions = concat_episode(blocks, stream.num_frames)
    return Episode(stream.id, clips, actions, rewards, predictions)


def evaluate_model(model: SegmentationModel, streams: list[FeatureStream]):
    pairs = []
    for stream in streams:
        predictions, _ = model.run_episode(stream)
        pairs.append((predictions, stream.labels))
    return evaluate_dataset(pairs)


def run_training(train_streams: list[FeatureStream], test_streams: list[FeatureStream],
                 model_cfg: ModelConfig, cfg: TrainerConfig,
                 out_dir: str | Path | None = None, log=None) -> dict:
    """Full training run: seeded, one stream at a time, evaluated per epoch.

    With an `out_dir`, writes `metrics.csv`, `best.ckpt` (highest test
    F1@0.5) and `last.ckpt` there. Returns a history dict with per-epoch
    reports and the trained model.
    """
    if not train_streams:
        raise ValueError("no training streams")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    model = SegmentationModel(model_cfg, rng)
    opt = AdamW(model.named_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay,
                grad_clip=cfg.grad_clip)
    step_fns = {"supervised": supervised_episode, "mc": mc_train_episode,
                "td": td_train_episode}
    step_fn = step_fns[cfg.mode]
    csv_lines = [METRIC_CSV_HEADER]
    history = {"train": [], "test": []}
    best_f1 = -1.0
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_streams))
        for idx in order:
            step_fn(model, train_streams[int(idx)], opt, cfg)
        for split, streams in (("train", train_streams), ("test", test_streams)):
            if not streams:
                continue
            report = evaluate_model(model, streams)
            history[split].append(report)
            csv_lines.append(metric_csv_row(epoch, split, report.acc, report.edit,
                                            report.f1))
            if log is not None:
                log(f"epoch {epoch} {split}: acc {report.acc:.2f} "
                    f"edit {report.edit:.2f} f1@0.5 {report.f1[0.5]:.2f}")
        current = history["test"][-1] if test_streams else history["train"][-1]
        if current.f1[0.5] > best_f1:
            best_f1 = current.f1[0.5]
            if out_dir is not None:
                save_checkpoint(out_dir / "best.ckpt", model.named_parameters())
    if out_dir is not None:
        save_checkpoint(out_dir / "last.ckpt", model.named_parameters())
        (out_dir / "metrics.csv").write_text("".join(line + "\n" for line in csv_lines))
    history["model"] = model
    history["best_f1_50"] = best_f1
    history["csv"] = "\n".join(csv_lines) + "\n"
    return history
