"""Configuration dataclasses and the INI-style config file loader.

A config file is flat ``key = value`` pairs grouped into sections:
[encoder], [model], [loss], [train], [synth]. Every key is a field of the
matching dataclass below; unknown keys (in files or CLI overrides) raise
ConfigurationError before anything executes.
"""

import configparser
import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigurationError

MODALITIES = ("R", "N", "T")
PAIRS = ("RN", "NT", "TR")
DECOUPLED_SLOTS = ("R", "N", "T", "RN", "NT", "TR", "RNT")
NUM_SLOTS = len(DECOUPLED_SLOTS)

POOLING_MODES = ("average", "max", "gem")
EXPERT_STRUCTURES = ("simple", "bottleneck", "ffn")
GATING_MODES = ("attention", "simple_add", "simple_concat")
HDM_INTERACTIONS = (
    "cross_attention",
    "cross_attention_no_fused",
    "no_interaction",
    "transformer_block",
)
INFERENCE_STREAMS = ("modal", "decoupled", "final", "final+modal")


@dataclass
class EncoderConfig:
    image_height: int = 256
    image_width: int = 128
    patch_size: int = 16
    embed_dim: int = 512
    depth: int = 4
    num_heads: int = 8
    share_across_modalities: bool = False
    seed: int = 0

    def validate(self):
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ConfigurationError(
                f"image size {self.image_height}x{self.image_width} not divisible "
                f"by patch size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if min(self.patch_size, self.depth, self.num_heads, self.embed_dim) <= 0:
            raise ConfigurationError("encoder dimensions must be positive")

    @property
    def num_patches(self):
        return (self.image_height // self.patch_size) * (self.image_width // self.patch_size)


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    use_pife: bool = True
    use_hdm: bool = True
    use_atmoe: bool = True
    inference_streams: str = "final+modal"
    pooling_mode: str = "average"
    gem_p: float = 3.0
    hdm_interaction: str = "cross_attention"
    gating: str = "attention"
    gate_heads: int = 4
    expert_structure: str = "simple"

    def validate(self):
        self.encoder.validate()
        if self.use_atmoe and not self.use_hdm:
            raise ConfigurationError("use_atmoe requires use_hdm")
        if self.pooling_mode not in POOLING_MODES:
            raise ConfigurationError(f"unknown pooling_mode {self.pooling_mode!r}")
        if self.gem_p <= 0:
            raise ConfigurationError("gem_p must be positive")
        if self.hdm_interaction not in HDM_INTERACTIONS:
            raise ConfigurationError(f"unknown hdm_interaction {self.hdm_interaction!r}")
        if self.gating not in GATING_MODES:
            raise ConfigurationError(f"unknown gating {self.gating!r}")
        if self.expert_structure not in EXPERT_STRUCTURES:
            raise ConfigurationError(f"unknown expert_structure {self.expert_structure!r}")
        if self.inference_streams not in INFERENCE_STREAMS:
            raise ConfigurationError(f"unknown inference_streams {self.inference_streams!r}")
        if self.encoder.embed_dim % self.gate_heads:
            raise ConfigurationError(
                f"embed_dim {self.encoder.embed_dim} not divisible by gate_heads {self.gate_heads}"
            )
        if self.inference_streams == "decoupled" and not self.use_hdm:
            raise ConfigurationError("inference_streams=decoupled requires use_hdm")
        if self.inference_streams in ("final", "final+modal") and not self.use_atmoe:
            raise ConfigurationError(f"inference_streams={self.inference_streams} requires use_atmoe")


@dataclass
class LossConfig:
    smoothing: float = 0.1
    margin: float = 0.3

    def validate(self):
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigurationError("smoothing must lie in [0, 1)")
        if self.margin < 0:
            raise ConfigurationError("margin must be non-negative")


@dataclass
class TrainConfig:
    epochs: int = 50
    max_steps: int = 0  # 0 = no cap
    base_lr: float = 3.5e-4
    encoder_lr: float = 5e-6
    weight_decay: float = 1e-4
    p_ids: int = 8
    k_instances: int = 8
    seed: int = 0
    cosine_decay: bool = False
    augment: bool = True
    eval_period: int = 1
    holdout_per_id: int = 1  # 0 = evaluate on the full training set

    def validate(self):
        if self.epochs <= 0 or self.p_ids <= 0 or self.k_instances <= 0:
            raise ConfigurationError("epochs, p_ids and k_instances must be positive")
        if self.base_lr < 0 or self.encoder_lr < 0 or self.weight_decay < 0:
            raise ConfigurationError("learning rates and weight decay must be non-negative")


@dataclass
class SynthSpec:
    num_identities: int = 8
    instances_per_identity: int = 8
    image_height: int = 32
    image_width: int = 16
    signal_r: float = 1.0
    signal_n: float = 1.0
    signal_t: float = 1.0
    noise_r: float = 0.1
    noise_n: float = 0.1
    noise_t: float = 0.1
    cameras: int = 4
    seed: int = 0

    def validate(self):
        if self.num_identities <= 0:
            raise ConfigurationError("num_identities must be positive")
        if self.instances_per_identity <= 0:
            raise ConfigurationError("instances_per_identity must be positive")
        if self.cameras <= 0:
            raise ConfigurationError("cameras must be positive")
        for name in ("signal_r", "signal_n", "signal_t"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")

    def signal(self, modality):
        return {"R": self.signal_r, "N": self.signal_n, "T": self.signal_t}[modality]

    def noise(self, modality):
        return {"R": self.noise_r, "N": self.noise_n, "T": self.noise_t}[modality]


@dataclass
class RunConfig:
    """Everything one experiment needs: model, loss and train sections plus the synth spec."""

    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def validate(self):
        self.model.validate()
        self.loss.validate()
        self.train.validate()
        self.synth.validate()
        return self


_SECTIONS = {
    "encoder": lambda cfg: cfg.model.encoder,
    "model": lambda cfg: cfg.model,
    "loss": lambda cfg: cfg.loss,
    "train": lambda cfg: cfg.train,
    "synth": lambda cfg: cfg.synth,
}


def _coerce(raw, target_type, key):
    if target_type is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"cannot parse boolean {raw!r} for key {key}")
    try:
        return target_type(raw)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse {raw!r} for key {key}: {exc}") from None


def _set_key(cfg, section, key, raw):
    if section not in _SECTIONS:
        raise ConfigurationError(f"unknown config section [{section}]")
    target = _SECTIONS[section](cfg)
    fields = {f.name: f for f in dataclasses.fields(target)}
    if key not in fields or key == "encoder":
        raise ConfigurationError(f"unknown config key {section}.{key}")
    value = _coerce(raw, type(getattr(target, key)), f"{section}.{key}")
    setattr(target, key, value)


def load_config(path=None, overrides=()):
    """Build a RunConfig from an optional INI file plus ``section.key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read([str(path)])
        if not read:
            raise ConfigurationError(f"config file not found: {path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                _set_key(cfg, section, key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise ConfigurationError(f"override key {dotted!r} must be section.key")
        section, key = dotted.split(".", 1)
        _set_key(cfg, section.strip(), key.strip(), raw.strip())
    cfg.validate()
    return cfg


def dump_config(cfg, path):
    """Write a RunConfig back out as an INI file (all keys, current values)."""
    parser = configparser.ConfigParser()
    for section, getter in _SECTIONS.items():
        target = getter(cfg)
        parser[section] = {}
        for f in dataclasses.fields(target):
            if f.name == "encoder":
                continue
            parser[section][f.name] = str(getattr(target, f.name))
    with open(path, "w") as fh:
        parser.write(fh)


# Tab-5-style module ablation presets.
MODEL_PRESETS = {
    "A": dict(use_pife=False, use_hdm=False, use_atmoe=False, inference_streams="modal"),
    "B": dict(use_pife=True, use_hdm=False, use_atmoe=False, inference_streams="modal"),
    "C": dict(use_pife=True, use_hdm=True, use_atmoe=False, inference_streams="decoupled"),
    "D": dict(use_pife=True, use_hdm=True, use_atmoe=True, inference_streams="final"),
    "E": dict(use_pife=True, use_hdm=True, use_atmoe=True, inference_streams="final+modal"),
}


def apply_model_preset(model_cfg: ModelConfig, name: str) -> ModelConfig:
    if name not in MODEL_PRESETS:
        raise ConfigurationError(f"unknown model preset {name!r}")
    updated = dataclasses.replace(model_cfg, **MODEL_PRESETS[name])
    updated.validate()
    return updated
