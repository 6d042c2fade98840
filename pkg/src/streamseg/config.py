"""INI-style run configuration with strict key checking and named profiles."""
from __future__ import annotations

import configparser
import copy
from pathlib import Path

from .clips import ClipSpec
from .encoder import EncoderConfig
from .head import HeadConfig
from .model import ModelConfig
from .reward import RewardConfig
from .temporal import TemporalConfig
from .training import TrainerConfig

__all__ = ["ConfigError", "DEFAULTS", "PROFILES", "load_config", "apply_overrides",
           "build_model_config", "build_trainer_config"]


class ConfigError(ValueError):
    """Unknown key/section, malformed value, or malformed override."""


# Every known key with its default and type. Values follow the source
# publication's training setup where it states them; clip geometry defaults
# are small enough for CPU experiments (profiles carry the published ones).
DEFAULTS: dict[str, dict[str, object]] = {
    "model": {
        "k": 16,
        "p": 2,
        "d": 128,
        "m": 512,
        "n1": 4,
        "n2": 4,
        "heads": 1,
        "window": 16,
    },
    "reward": {
        "beta1": 4.0,
        "beta2": -1.0,
        "class_start": 0,
    },
    "train": {
        "mode": "supervised",
        "epochs": 10,
        "lr": 5e-4,
        "weight_decay": 1e-4,
        "seed": 0,
        "grad_clip": 10.0,
    },
    "data": {
        "root": "",
        "out": "runs/default",
    },
}

# Published clip geometries per benchmark.
PROFILES: dict[str, dict[str, dict[str, object]]] = {
    "gtea": {"model": {"k": 64, "p": 2}},
    "50salads": {"model": {"k": 128, "p": 8}},
    "breakfast": {"model": {"k": 128, "p": 8}},
    "egtea": {"model": {"k": 128, "p": 8}},
}


def _convert(section: str, key: str, raw: str):
    default = DEFAULTS[section][key]
    kind = type(default)
    try:
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}")


def load_config(path: str | Path | None = None,
                profile: str | None = None) -> dict[str, dict[str, object]]:
    """Defaults, overlaid by a profile, overlaid by an INI file (if given)."""
    cfg = copy.deepcopy(DEFAULTS)
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; "
                              f"available: {', '.join(sorted(PROFILES))}")
        for section, values in PROFILES[profile].items():
            cfg[section].update(values)
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                cfg[section][key] = _convert(section, key, raw)
    return cfg


def apply_overrides(cfg: dict[str, dict[str, object]], overrides: list[str]) -> None:
    """Apply "section.key=value" strings on top of a loaded config."""
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        section = section.strip().lower()
        key = key.strip().lower()  # INI parsing lowercases keys; match it
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config entry {section}.{key}")
        cfg[section][key] = _convert(section, key, raw)


def build_model_config(cfg: dict[str, dict[str, object]], input_width: int,
                       num_classes: int) -> ModelConfig:
    m = cfg["model"]
    width = int(m["d"])
    return ModelConfig(
        clip=ClipSpec(k=int(m["k"]), p=int(m["p"])),
        encoder=EncoderConfig(input_width=input_width, hidden_width=width,
                              output_width=width),
        temporal=TemporalConfig(num_layers=int(m["n1"]), width=width,
                                memory_slots=int(m["m"]), heads=int(m["heads"]),
                                window=int(m["window"])),
        head=HeadConfig(num_classes=num_classes, input_width=width,
                        num_blocks=int(m["n2"])),
    )


def build_trainer_config(cfg: dict[str, dict[str, object]]) -> TrainerConfig:
    t = cfg["train"]
    r = cfg["reward"]
    return TrainerConfig(
        mode=str(t["mode"]),
        epochs=int(t["epochs"]),
        seed=int(t["seed"]),
        lr=float(t["lr"]),
        weight_decay=float(t["weight_decay"]),
        grad_clip=float(t["grad_clip"]),
        reward=RewardConfig(beta1=float(r["beta1"]), beta2=float(r["beta2"]),
                            class_start=int(r["class_start"])),
    )
