"""Streaming temporal action segmentation with policy-gradient training.

A self-contained engine: videos are consumed as non-overlapping clips of
k frames sampled at stride p, embedded, mixed by a memory-carrying temporal
model, and labeled clip-by-clip. Training is supervised cross-entropy or
one of two policy-gradient modes that weight the same loss by a dice-based
segment-integrity reward. Everything runs on a small bundled reverse-mode
autodiff core over numpy arrays.
"""

from .autodiff import Tensor, no_grad
from .clips import Clip, ClipSpec, FeatureStream, make_clips
from .encoder import Encoder, EncoderConfig
from .estimator import StreamingSegmenter
from .head import ActionLogits, DecisionHead, HeadConfig, decide
from .metrics import MetricsReport, evaluate_dataset
from .model import ModelConfig, SegmentationModel
from .optim import AdamW
from .reward import RewardConfig, reward, soft_dice
from .synthetic import SynthConfig, gen_dataset, gen_video
from .temporal import MemoryBank, TemporalConfig, TemporalModel
from .training import (Episode, TrainerConfig, mc_train_episode, run_training,
                       supervised_episode, td_train_episode)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "Clip",
    "ClipSpec",
    "FeatureStream",
    "make_clips",
    "Encoder",
    "EncoderConfig",
    "StreamingSegmenter",
    "ActionLogits",
    "DecisionHead",
    "HeadConfig",
    "decide",
    "MetricsReport",
    "evaluate_dataset",
    "ModelConfig",
    "SegmentationModel",
    "AdamW",
    "RewardConfig",
    "reward",
    "soft_dice",
    "SynthConfig",
    "gen_dataset",
    "gen_video",
    "MemoryBank",
    "TemporalConfig",
    "TemporalModel",
    "Episode",
    "TrainerConfig",
    "mc_train_episode",
    "run_training",
    "supervised_episode",
    "td_train_episode",
    "__version__",
]
