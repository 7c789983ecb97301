"""Configuration management for training and curriculum runs."""

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .iqa import MIN_PATCH
from .losses import LOSS_MODES, LossWeights
from .network import NetConfig

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


@dataclass(frozen=True)
class TrainConfig:
    """Configuration container for training settings."""

    # Optimisation
    batch_size: int = 16
    learning_rate: float = 1e-4
    lr_decay_factor: float = 0.5
    lr_patience: int = 5
    min_lr: float = 1e-6
    min_delta: float = 1e-4
    epochs: int = 100
    pretrain_decays: int = 2

    # Reproducibility
    seed: int = 0

    # Model and loss
    loss_weights: LossWeights = field(default_factory=LossWeights)
    network: NetConfig = field(default_factory=NetConfig)
    loss_mode: str = "total"
    augment: bool = True

    # Curriculum
    tau: float = 0.5
    max_rounds: int = 5
    validation_fraction: float = 0.1
    niqe_patch_size: int = 48

    # Application settings
    log_level: str = "INFO"

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        """
        Build a config from a parsed JSON object.

        Args:
            data: Mapping of field names to values

        Returns:
            TrainConfig instance (not yet validated)

        Raises:
            ConfigError: If an unknown key is present or a value has the wrong type
        """
        if not isinstance(data, dict):
            raise ConfigError(f"Config must be a JSON object, got {type(data).__name__}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {unknown}")

        kwargs = dict(data)
        if "loss_weights" in kwargs:
            weights = kwargs["loss_weights"]
            weight_keys = {f.name for f in fields(LossWeights)}
            extra = sorted(set(weights) - weight_keys)
            if extra:
                raise ConfigError(f"Unknown loss_weights keys: {extra}")
            kwargs["loss_weights"] = LossWeights(**weights)
        if "network" in kwargs:
            kwargs["network"] = NetConfig.from_dict(kwargs["network"])
        try:
            for name, caster in (
                ("learning_rate", float),
                ("lr_decay_factor", float),
                ("min_lr", float),
                ("min_delta", float),
                ("tau", float),
                ("validation_fraction", float),
            ):
                if name in kwargs:
                    kwargs[name] = caster(kwargs[name])
            if "log_level" in kwargs:
                kwargs["log_level"] = str(kwargs["log_level"]).upper()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid config value: {e}") from e
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: Path) -> "TrainConfig":
        """
        Load configuration from a JSON file.

        Args:
            path: Path to the config file

        Returns:
            TrainConfig instance with loaded values

        Raises:
            ConfigError: If the file is missing, unreadable or has unknown keys
        """
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lr_decay_factor": self.lr_decay_factor,
            "lr_patience": self.lr_patience,
            "min_lr": self.min_lr,
            "min_delta": self.min_delta,
            "epochs": self.epochs,
            "pretrain_decays": self.pretrain_decays,
            "seed": self.seed,
            "loss_weights": self.loss_weights.to_dict(),
            "network": self.network.to_dict(),
            "loss_mode": self.loss_mode,
            "augment": self.augment,
            "tau": self.tau,
            "max_rounds": self.max_rounds,
            "validation_fraction": self.validation_fraction,
            "niqe_patch_size": self.niqe_patch_size,
            "log_level": self.log_level,
        }

    def with_overrides(self, **overrides) -> "TrainConfig":
        """Return a copy with the non-None overrides applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def validate(self) -> None:
        """
        Validate configuration values.

        Raises:
            ConfigError: If any configuration value is invalid
        """
        if self.batch_size < 1:
            raise ConfigError(f"Invalid batch size: {self.batch_size}")

        for name in ("learning_rate", "min_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"Invalid {name}: {getattr(self, name)} (must be > 0)")

        if self.min_lr > self.learning_rate:
            raise ConfigError(f"min_lr {self.min_lr} exceeds learning_rate {self.learning_rate}")

        if not 0 < self.lr_decay_factor < 1:
            raise ConfigError(f"Invalid lr_decay_factor: {self.lr_decay_factor}")

        if self.lr_patience < 1:
            raise ConfigError(f"Invalid lr_patience: {self.lr_patience}")

        if self.min_delta < 0:
            raise ConfigError(f"Invalid min_delta: {self.min_delta}")

        if self.epochs < 0:
            raise ConfigError(f"Invalid epochs: {self.epochs}")

        if self.pretrain_decays < 1:
            raise ConfigError(f"Invalid pretrain_decays: {self.pretrain_decays}")

        if math.isnan(self.tau) or not self.tau > 0:
            raise ConfigError(f"Invalid tau: {self.tau} (must be > 0)")

        if self.max_rounds < 0:
            raise ConfigError(f"Invalid max_rounds: {self.max_rounds}")

        if not 0 <= self.validation_fraction < 1:
            raise ConfigError(f"Invalid validation_fraction: {self.validation_fraction}")

        if self.niqe_patch_size < MIN_PATCH or self.niqe_patch_size % 2:
            raise ConfigError(f"Invalid niqe_patch_size: {self.niqe_patch_size}")

        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"Invalid loss_mode: {self.loss_mode} (choose from {LOSS_MODES})")

        if self.log_level not in LOG_LEVELS:
            raise ConfigError(f"Invalid log level: {self.log_level}")

        self.loss_weights.validate()
        try:
            self.network.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e


def load_config(path: Path | None = None, **overrides) -> TrainConfig:
    """
    Load and validate configuration.

    Args:
        path: Optional JSON config file; defaults are used when omitted
        **overrides: Field values that win over the file (None values are ignored)

    Returns:
        Validated TrainConfig instance
    """
    config = TrainConfig.from_json(path) if path is not None else TrainConfig()
    config = config.with_overrides(**overrides)
    config.validate()
    return config
