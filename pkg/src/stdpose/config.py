"""Experiment configuration: nested dataclasses, JSON (de)serialization with
strict unknown-key rejection, and the handful of top-level aliases (alpha,
beta, k, theta, T, ...) used on the command line."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .decoder import DAMParams, PADecoderConfig
from .miobj import MILossWeights
from .stre import TFFConfig, TKSConfig


@dataclass(frozen=True)
class ComponentFlags:
    """Which architecture components are active; mirrors the ablation rows."""

    tff: bool = True
    tks: bool = True
    dam: bool = True
    stda: bool = True
    mi: bool = True

    def __post_init__(self):
        if self.dam and not self.stda:
            raise ValueError("invalid component combination: DAM requires STDA")
        if self.stda and not (self.tff and self.tks):
            raise ValueError("invalid component combination: STDA requires TFF and TKS")
        if self.tff and self.tks and not self.stda:
            raise ValueError("invalid component combination: TFF+TKS need STDA to aggregate")
        if self.mi and not (self.tff and self.tks):
            raise ValueError("invalid component combination: MI requires TFF and TKS")

    @classmethod
    def from_names(cls, names) -> "ComponentFlags":
        names = {n.upper() for n in names}
        known = {"TFF", "TKS", "DAM", "STDA", "MI"}
        unknown = names - known
        if unknown:
            raise ValueError(f"unknown component flags: {sorted(unknown)}")
        return cls(**{k.lower(): (k in names) for k in known})


@dataclass(frozen=True)
class AugmentConfig:
    rotation_deg: tuple[float, float] = (-45.0, 45.0)
    scale: tuple[float, float] = (0.65, 1.35)
    flip_prob: float = 0.5
    half_body_prob: float = 0.0

    def __post_init__(self):
        if self.rotation_deg[0] > self.rotation_deg[1] or self.scale[0] > self.scale[1]:
            raise ValueError("augmentation ranges must be well-ordered")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "propagation"  # or "estimation"
    epochs: int = 20
    base_lr: float = 2e-4
    decay_epochs: tuple[int, ...] = (12, 16)
    decay_factor: float = 10.0
    batch_size: int = 16
    weight_decay: float = 1e-4
    seed: int = 0
    estimator_lr_multiplier: float = 10.0
    val_videos_per_epoch: int = 8
    augmentation: AugmentConfig = AugmentConfig()
    weights: MILossWeights = MILossWeights()

    def __post_init__(self):
        if self.mode not in ("propagation", "estimation"):
            raise ValueError(f"mode must be 'propagation' or 'estimation', got {self.mode!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")


@dataclass(frozen=True)
class DataConfig:
    crop_size: tuple[int, int] = (128, 96)  # (H, W); heatmaps are crop / 4
    heatmap_sigma: float = 2.0
    expand_factor: float = 1.25
    image_size: tuple[int, int] = (160, 160)
    num_frames: int = 30
    num_occluders: int = 2
    blur_probability: float = 0.2
    motion_smoothness: float = 4.0
    num_videos_train: int = 200
    num_videos_val: int = 50

    @property
    def heatmap_size(self) -> tuple[int, int]:
        return (self.crop_size[0] // 4, self.crop_size[1] // 4)


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = BackboneConfig()
    tff: TFFConfig = TFFConfig()
    tks: TKSConfig = TKSConfig()
    decoder: PADecoderConfig = PADecoderConfig()
    dam: DAMParams = DAMParams()
    components: ComponentFlags = ComponentFlags()


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    interval_T: int = 7
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# Top-level shorthand keys accepted in config files and mapped into the
# nested structure.
_ALIASES = {
    "alpha": ("train", "weights", "alpha"),
    "beta": ("train", "weights", "beta"),
    "k": ("model", "dam", "k"),
    "theta": ("model", "dam", "theta"),
    "T": ("interval_T",),
    "base_lr": ("train", "base_lr"),
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "mode": ("train", "mode"),
}


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def _convert(value, ftype, path):
    origin = typing.get_origin(ftype)
    if dataclasses.is_dataclass(ftype):
        if not isinstance(value, dict):
            raise ValueError(f"config key {path!r} expects an object")
        return _from_dict(ftype, value, path)
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"config key {path!r} expects a list")
        args = typing.get_args(ftype)
        if args and args[-1] is Ellipsis:
            return tuple(_convert(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if args:
            if len(value) != len(args):
                raise ValueError(f"config key {path!r} expects {len(args)} entries")
            return tuple(_convert(v, t, f"{path}[{i}]") for i, (v, t) in enumerate(zip(value, args)))
        return tuple(value)
    if ftype is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"config key {path!r} expects a number, got {value!r}")
        return float(value)
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"config key {path!r} expects an integer, got {value!r}")
        return value
    if ftype is bool:
        if not isinstance(value, bool):
            raise ValueError(f"config key {path!r} expects a boolean, got {value!r}")
        return value
    if ftype is str:
        if not isinstance(value, str):
            raise ValueError(f"config key {path!r} expects a string, got {value!r}")
        return value
    return value


def _from_dict(cls, doc: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    known = {f.name: hints[f.name] for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in known:
            raise ValueError(f"unknown config key {path!r}")
        kwargs[key] = _convert(value, known[key], path)
    return cls(**kwargs)


def experiment_config_from_dict(doc: dict) -> ExperimentConfig:
    """Parse and validate a config document; unknown keys are rejected by
    name, aliases are folded into the nested structure first."""
    if not isinstance(doc, dict):
        raise ValueError("config document must be a JSON object")
    doc = {k: v for k, v in doc.items()}
    for alias, target in _ALIASES.items():
        if alias in doc:
            value = doc.pop(alias)
            node = doc
            for part in target[:-1]:
                node = node.setdefault(part, {})
                if not isinstance(node, dict):
                    raise ValueError(f"config key {part!r} expects an object")
            node[target[-1]] = value
    return _from_dict(ExperimentConfig, doc)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"config file {path} is not valid JSON: {e}") from e
    return experiment_config_from_dict(doc)
