# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Layered run configuration.

Values are resolved in three layers: dataclass defaults, an optional YAML file
and ``key=value`` overrides given on the command line. Override values are
parsed as YAML scalars and coerced to the declared field type.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)

# Channel widths accepted for c_d (the sweep of the channel ablation)
VALID_CD = (16, 32, 64, 128, 256)

PROVIDER_KINDS = ("gt", "constant", "model")
ENCODER_KINDS = ("toy", "resnet50")
KERNEL_MODES = ("linear", "identity")
MSF_MODES = ("clstm", "concat")


@dataclass
class DataConfig:
    """Dataset location and episode shape.

    Attributes
    ----------
    root : str
        Dataset root in the canonical ``Camo/`` + ``Ref/`` layout.
    image_size : int
        Side length images are resized to; must be divisible by 32.
    k : int
        Number of referring images per episode (0 selects baseline mode).
    num_workers : int
        DataLoader worker processes (0 loads in the main process).
    """

    root: str = "data/toy"
    image_size: int = 352
    k: int = 5
    num_workers: int = 0


@dataclass
class ModelConfig:
    """Network width and encoder selection.

    Attributes
    ----------
    c_d : int
        Common channel count of projected features and embeddings.
    encoder : str
        ``toy`` or ``resnet50:<weights-path>``.
    encoder_width : int
        Base width of the toy encoder (stage widths are 1x, 2x, 4x, 8x).
    """

    c_d: int = 64
    encoder: str = "toy"
    encoder_width: int = 16


@dataclass
class ReferenceConfig:
    """Foreground-map provider: ``gt``, ``constant`` or ``model:<path>``."""

    provider: str = "gt"


@dataclass
class RMGConfig:
    """Referring mask generation options."""

    kernel_from_e: str = "linear"
    lstm_kernel: int = 3
    msf: str = "clstm"


@dataclass
class RFEConfig:
    """Referring feature enrichment options."""

    cross_scale_path: bool = True


@dataclass
class LossConfig:
    """Structure loss options."""

    weighted: bool = False


@dataclass
class TrainConfig:
    """Optimisation schedule and reproducibility settings."""

    steps: int = 2000
    batch_size: int = 32
    lr: float = 5e-4
    lr_floor: float = 0.0
    seed: int = 0
    deterministic: bool = True
    log_every: int = 10
    device: str = "cpu"


@dataclass
class EvalConfig:
    """Evaluation settings.

    Attributes
    ----------
    repeats : int
        Number of reference draws averaged when 0 < k < available references.
    batch_size : int
        Episodes per inference batch.
    seed : int
        Base seed for reference sampling.
    """

    repeats: int = 3
    batch_size: int = 8
    seed: int = 0


@dataclass
class OutputConfig:
    """Directory receiving checkpoints, logs and reports."""

    dir: str = "runs/default"


@dataclass
class ToyGenConfig:
    """Parameters of the synthetic toy-camouflage generator."""

    n_categories: int = 2
    n_camo_per_cat: int = 4
    n_ref_per_cat: int = 25
    image_size: int = 64
    seed: int = 7
    camo_test_fraction: float = 0.2


@dataclass
class RunConfig:
    """Complete configuration of a refcod run."""

    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    rmg: RMGConfig = field(default_factory=RMGConfig)
    rfe: RFEConfig = field(default_factory=RFEConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    toygen: ToyGenConfig = field(default_factory=ToyGenConfig)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        """Build a configuration from a nested mapping, starting at the defaults.

        Parameters
        ----------
        data : dict
            Mapping of section name to a mapping of key/value pairs.

        Returns
        -------
        RunConfig
            New configuration (not yet validated).

        Raises
        ------
        ConfigError
            If a section or key is unknown or a value has the wrong type.
        """
        config = cls()
        if not isinstance(data, dict):
            raise ConfigError(f"Configuration must be a mapping, got {type(data).__name__}")
        for section_name, values in data.items():
            if not isinstance(values, dict):
                raise ConfigError(f"Section '{section_name}' must be a mapping")
            for key, value in values.items():
                config.set(f"{section_name}.{key}", value)
        return config

    @classmethod
    def load(
        cls, path: str | Path | None = None, overrides: list[str] | None = None
    ) -> "RunConfig":
        """Resolve defaults, an optional YAML file and ``key=value`` overrides.

        Parameters
        ----------
        path : str or Path or None
            YAML file to read. ``None`` keeps the defaults.
        overrides : list[str] or None
            Overrides of the form ``section.key=value``.

        Returns
        -------
        RunConfig
            Validated configuration.

        Raises
        ------
        ConfigError
            If the file cannot be read or any value is invalid.
        """
        data: dict[str, Any] = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as f:
                    data = yaml.safe_load(f) or {}
            except OSError as e:
                raise ConfigError(f"Cannot read config file '{path}': {e}", original_error=e) from e
            except yaml.YAMLError as e:
                raise ConfigError(f"Invalid YAML in '{path}': {e}", original_error=e) from e

        config = cls.from_dict(data)
        for override in overrides or []:
            config.apply_override(override)
        config.validate()
        logger.debug(f"Resolved configuration (file={path}, overrides={len(overrides or [])})")
        return config

    def apply_override(self, override: str) -> None:
        """Apply a single ``section.key=value`` override."""
        if "=" not in override:
            raise ConfigError(f"Override '{override}' must have the form section.key=value")
        key, raw = override.split("=", 1)
        try:
            value = yaml.safe_load(raw) if raw.strip() else ""
        except yaml.YAMLError:
            value = raw
        self.set(key.strip(), value)

    def set(self, key: str, value: Any) -> None:
        """Set a dotted key, coercing the value to the field's declared type."""
        parts = key.split(".")
        if len(parts) != 2:
            raise ConfigError(f"Config key '{key}' must have the form section.key")
        section_name, name = parts
        section = getattr(self, section_name, None)
        if section is None or not dataclasses.is_dataclass(section):
            raise ConfigError(f"Unknown config section '{section_name}'")
        types = {f.name: f.type for f in dataclasses.fields(section)}
        if name not in types:
            raise ConfigError(f"Unknown config key '{key}'")
        setattr(section, name, _coerce(key, value, types[name]))

    def get(self, key: str) -> Any:
        """Return the value of a dotted key."""
        section_name, name = key.split(".", 1)
        return getattr(getattr(self, section_name), name)

    def validate(self) -> None:
        """Check every invariant of the configuration.

        Raises
        ------
        ConfigError
            On the first violated constraint.
        """
        if self.data.image_size <= 0 or self.data.image_size % 32 != 0:
            raise ConfigError(
                f"data.image_size must be a positive multiple of 32, got {self.data.image_size}"
            )
        if self.data.k < 0:
            raise ConfigError(f"data.k must be >= 0, got {self.data.k}")
        if self.data.num_workers < 0:
            raise ConfigError("data.num_workers must be >= 0")
        if self.model.c_d not in VALID_CD:
            raise ConfigError(f"model.c_d must be one of {VALID_CD}, got {self.model.c_d}")
        if self.model.encoder_width < 1:
            raise ConfigError("model.encoder_width must be >= 1")
        encoder_kind, encoder_path = self.encoder_spec
        if encoder_kind not in ENCODER_KINDS or (encoder_kind == "resnet50" and not encoder_path):
            raise ConfigError(
                f"model.encoder must be 'toy' or 'resnet50:<weights-path>', got "
                f"'{self.model.encoder}'"
            )
        provider_kind, provider_path = self.provider_spec
        if provider_kind not in PROVIDER_KINDS or (provider_kind == "model" and not provider_path):
            raise ConfigError(
                f"reference.provider must be 'gt', 'constant' or 'model:<path>', got "
                f"'{self.reference.provider}'"
            )
        if self.rmg.kernel_from_e not in KERNEL_MODES:
            raise ConfigError(f"rmg.kernel_from_e must be one of {KERNEL_MODES}")
        if self.rmg.msf not in MSF_MODES:
            raise ConfigError(f"rmg.msf must be one of {MSF_MODES}")
        if self.rmg.lstm_kernel < 1 or self.rmg.lstm_kernel % 2 == 0:
            raise ConfigError("rmg.lstm_kernel must be a positive odd number")
        if self.train.steps < 1:
            raise ConfigError("train.steps must be >= 1")
        if self.train.batch_size < 1 or self.eval.batch_size < 1:
            raise ConfigError("train.batch_size and eval.batch_size must be >= 1")
        if self.train.lr <= 0 or self.train.lr_floor < 0 or self.train.lr_floor > self.train.lr:
            raise ConfigError("train.lr must be > 0 and 0 <= train.lr_floor <= train.lr")
        if self.train.log_every < 1:
            raise ConfigError("train.log_every must be >= 1")
        if self.eval.repeats < 1:
            raise ConfigError("eval.repeats must be >= 1")
        if self.toygen.n_categories < 2:
            raise ConfigError("toygen.n_categories must be >= 2")
        if self.toygen.image_size < 32:
            raise ConfigError("toygen.image_size must be >= 32")
        if not 0.0 < self.toygen.camo_test_fraction < 1.0:
            raise ConfigError("toygen.camo_test_fraction must lie in (0, 1)")

    @property
    def provider_spec(self) -> tuple[str, str | None]:
        """Provider kind and optional weights path, e.g. ``("model", "sod.pt")``."""
        return _split_spec(self.reference.provider)

    @property
    def encoder_spec(self) -> tuple[str, str | None]:
        """Encoder kind and optional weights path, e.g. ``("resnet50", "r50.pth")``."""
        return _split_spec(self.model.encoder)

    def to_dict(self) -> dict[str, Any]:
        """Return the configuration as a nested plain mapping."""
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        """Return the configuration as a YAML document."""
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _split_spec(spec: str) -> tuple[str, str | None]:
    kind, sep, path = spec.partition(":")
    return kind, (path if sep else None)


def _coerce(key: str, value: Any, target: Any) -> Any:
    """Coerce a YAML-parsed value to the field type ``target``."""
    if target is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("on", "true", "yes", "1"):
            return True
        if isinstance(value, str) and value.lower() in ("off", "false", "no", "0"):
            return False
        raise ConfigError(f"{key} expects on/off, got '{value}'")
    if target is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got '{value}'")
        return value
    if target is float:
        # PyYAML reads exponents without a dot (5e-4) as strings
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{key} expects a number, got '{value}'") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got '{value}'")
        return float(value)
    if target is str:
        if isinstance(value, (dict, list)):
            raise ConfigError(f"{key} expects a string, got '{value}'")
        return str(value)
    return value
