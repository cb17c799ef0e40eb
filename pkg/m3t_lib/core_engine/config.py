"""
Model configuration.

`ModelConfig` is the single source of truth for dimensions, data handling,
training hyperparameters, ablation switches, evaluation options and paths.
Two built-in profiles exist: 'desk' (small, CPU-friendly, the default) and
'full' (the published setting: 356×356×3 input, 12×12×1280 features,
d_emb 300, d_model 512, 8 heads, vocabulary 5000).
"""
import copy
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Iterable, List, Mapping, Tuple

import yaml

from m3t_lib.core.exceptions import ConfigError
from m3t_lib.data_processing.splits import SplitSpec
from m3t_lib.visual.backbone import BackboneConfig

logger = logging.getLogger(__name__)

SEED_ENV_VAR = "M3T_SEED"

# (visual_attention, keywords, keyword_attention): image only; + visual
# attention; + keywords; + keyword attention.
ABLATION_VARIANTS: Dict[str, Tuple[bool, bool, bool]] = {
    "image_only": (False, False, False),
    "visual_attention": (True, False, False),
    "keywords": (True, True, False),
    "full": (True, True, True),
}


@dataclass
class ModelDims:
    image_size: int = 64
    backbone_mode: str = "conv"
    stage_channels: List[int] = field(default_factory=lambda: [8, 16, 32, 64])
    se_ratio: int = 4
    feature_height: int = 4
    feature_width: int = 4
    feature_channels: int = 64
    gate_reduction: int = 4
    d_emb: int = 32
    d_model: int = 64
    heads: int = 2
    encoder_ff_dim: int = 32
    decoder_ff_dim: int = 16


@dataclass
class DataSettings:
    vocab_cap: int = 200
    min_freq: int = 2
    min_description_len: int = 5
    max_description_len: int = 30
    train_fraction: float = 0.6
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    split_seed: int = 0


@dataclass
class TrainingSettings:
    lr: float = 0.004
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    dropout: float = 0.2
    epochs: int = 30
    max_steps: int = 0          # 0 = bounded by epochs only
    patience: int = 5
    seed: int = 0
    loss_reduction: str = "mean"
    prefetch: bool = True


@dataclass
class AblationFlags:
    visual_attention: bool = True
    keywords: bool = True
    keyword_attention: bool = True

    def as_tuple(self) -> Tuple[bool, bool, bool]:
        return self.visual_attention, self.keywords, self.keyword_attention

    def variant_name(self) -> str:
        for name, flags in ABLATION_VARIANTS.items():
            if flags == self.as_tuple():
                return name
        raise ConfigError(self._diagnostic())

    def _diagnostic(self) -> str:
        allowed = ", ".join(f"{n}={f}" for n, f in ABLATION_VARIANTS.items())
        return (f"ablation flags (visual_attention, keywords, keyword_attention) = {self.as_tuple()} "
                f"are not one of the supported variants: {allowed}")

    def validate(self):
        if self.keyword_attention and not self.keywords:
            raise ConfigError("keyword_attention requires keywords; " + self._diagnostic())
        if self.as_tuple() not in ABLATION_VARIANTS.values():
            raise ConfigError(self._diagnostic())

    @classmethod
    def variant(cls, name: str) -> "AblationFlags":
        if name not in ABLATION_VARIANTS:
            raise ConfigError(f"Unknown ablation variant '{name}', expected one of {list(ABLATION_VARIANTS)}")
        return cls(*ABLATION_VARIANTS[name])


@dataclass
class EvaluationSettings:
    beam_size: int = 1
    max_decode_len: int = 0      # 0 = data.max_description_len
    bleu_smoothing: bool = False
    sentence_bleu: bool = False
    cider_d: bool = False
    oracle_decode: bool = False
    sample_rows: int = 20


@dataclass
class PathSettings:
    corpus: str = ""
    output_dir: str = "runs/desk"
    checkpoint: str = "model.m3tc"
    log: str = "train_log.tsv"
    skip_report: str = "skip_report.txt"


SECTIONS = {
    "model": ModelDims,
    "data": DataSettings,
    "training": TrainingSettings,
    "ablation": AblationFlags,
    "evaluation": EvaluationSettings,
    "paths": PathSettings,
}


@dataclass
class ModelConfig:
    profile: str = "desk"
    model: ModelDims = field(default_factory=ModelDims)
    data: DataSettings = field(default_factory=DataSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    @property
    def feature_shape(self) -> Tuple[int, int, int]:
        m = self.model
        return m.feature_height, m.feature_width, m.feature_channels

    @property
    def max_positions(self) -> int:
        """Decoder inputs are BOS + description."""
        return self.data.max_description_len + 1

    @property
    def decode_len(self) -> int:
        return self.evaluation.max_decode_len or self.data.max_description_len

    def backbone_config(self) -> BackboneConfig:
        m = self.model
        return BackboneConfig(mode=m.backbone_mode, input_size=m.image_size,
                              stage_channels=list(m.stage_channels), se_ratio=m.se_ratio,
                              feature_shape=self.feature_shape)

    def split_spec(self) -> SplitSpec:
        d = self.data
        return SplitSpec(d.train_fraction, d.val_fraction, d.test_fraction, d.split_seed)

    def validate(self) -> "ModelConfig":
        m, d, t = self.model, self.data, self.training
        if self.profile not in PROFILES:
            raise ConfigError(f"Unknown profile '{self.profile}', expected one of {sorted(PROFILES)}")
        if m.heads < 1 or m.d_model % m.heads != 0:
            raise ConfigError(f"d_model {m.d_model} must be divisible by heads {m.heads}")
        for name in ("d_emb", "d_model", "encoder_ff_dim", "decoder_ff_dim", "feature_channels", "image_size"):
            if getattr(m, name) < 1:
                raise ConfigError(f"model.{name} must be positive")
        self.backbone_config().validate()
        if not 1 <= d.min_description_len <= d.max_description_len:
            raise ConfigError(f"description length range [{d.min_description_len}, {d.max_description_len}] is invalid")
        if d.vocab_cap < 6:
            raise ConfigError(f"vocab_cap {d.vocab_cap} leaves no room for corpus tokens")
        self.split_spec().validate()
        if not 0.0 <= t.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {t.dropout}")
        if t.lr <= 0 or t.batch_size < 1 or t.epochs < 1 or t.patience < 1 or t.max_steps < 0:
            raise ConfigError("training.lr, batch_size, epochs and patience must be positive")
        if t.loss_reduction not in ("mean", "sum"):
            raise ConfigError(f"loss_reduction must be 'mean' or 'sum', got '{t.loss_reduction}'")
        if self.evaluation.beam_size < 1:
            raise ConfigError("evaluation.beam_size must be >= 1")
        self.ablation.validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"profile": self.profile}
        for name in SECTIONS:
            out[name] = asdict(getattr(self, name))
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base: "ModelConfig" = None) -> "ModelConfig":
        """
        Layers a section mapping over `base` (or over the profile it names).

        Unknown sections or keys raise ConfigError.
        """
        data = dict(data or {})
        profile = data.pop("profile", None)
        config = copy.deepcopy(base) if base is not None else profile_defaults(profile or "desk")
        if profile is not None and base is not None and profile != base.profile:
            config = profile_defaults(profile)
        for section, values in data.items():
            if section not in SECTIONS:
                raise ConfigError(f"Unknown configuration section '{section}'")
            if values is None:
                continue
            if not isinstance(values, Mapping):
                raise ConfigError(f"Section '{section}' must be a mapping of key: value pairs")
            for key, value in values.items():
                _set_field(config, section, key, value)
        return config

    def apply_overrides(self, overrides: Iterable[str]) -> "ModelConfig":
        """Applies 'section.key=value' strings; values are parsed as YAML scalars."""
        for item in overrides or []:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(f"Override '{item}' is not of the form section.key=value")
            target, raw = item.split("=", 1)
            section, key = target.strip().split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"Unknown configuration section '{section}' in override '{item}'")
            try:
                value = yaml.safe_load(raw) if raw.strip() else ""
            except yaml.YAMLError as e:
                raise ConfigError(f"Cannot parse value in override '{item}': {e}") from e
            _set_field(self, section, key, value)
        return self

    def apply_environment(self, environ: Mapping[str, str] = None) -> "ModelConfig":
        environ = os.environ if environ is None else environ
        raw = environ.get(SEED_ENV_VAR)
        if raw:
            try:
                self.training.seed = int(raw)
            except ValueError:
                raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{raw}'") from None
            logger.info(f"Seed overridden from {SEED_ENV_VAR}: {self.training.seed}")
        return self


def _set_field(config: ModelConfig, section: str, key: str, value: Any):
    target = getattr(config, section)
    known = {f.name: f for f in fields(target)}
    if key not in known:
        raise ConfigError(f"Unknown key '{key}' in section '{section}'")
    current = getattr(target, key)
    try:
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise TypeError
        elif isinstance(current, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        elif isinstance(current, list):
            value = [int(v) for v in value]
        elif isinstance(current, str):
            value = str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: cannot use {value!r} where {type(current).__name__} is expected") from None
    setattr(target, key, value)


_FULL = {
    "model": {
        "image_size": 356, "stage_channels": [32, 64, 128, 256, 1280], "se_ratio": 4,
        "feature_height": 12, "feature_width": 12, "feature_channels": 1280, "gate_reduction": 4,
        "d_emb": 300, "d_model": 512, "heads": 8, "encoder_ff_dim": 512, "decoder_ff_dim": 256,
    },
    "data": {"vocab_cap": 5000, "min_freq": 2, "min_description_len": 5, "max_description_len": 50},
    "training": {"lr": 0.004, "batch_size": 64, "dropout": 0.2, "epochs": 50},
    "paths": {"output_dir": "runs/full"},
}

PROFILES = {"desk": {}, "full": _FULL}


def profile_defaults(name: str) -> ModelConfig:
    if name not in PROFILES:
        raise ConfigError(f"Unknown profile '{name}', expected one of {sorted(PROFILES)}")
    config = ModelConfig(profile=name)
    for section, values in PROFILES[name].items():
        for key, value in values.items():
            _set_field(config, section, key, value)
    return config
