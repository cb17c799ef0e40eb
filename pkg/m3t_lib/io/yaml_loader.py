"""
Loads an M3T configuration from a YAML file.
"""
import logging
from pathlib import Path
from typing import Iterable, Optional

import yaml

from m3t_lib.core.exceptions import ConfigError
from m3t_lib.core_engine.config import ModelConfig, profile_defaults

logger = logging.getLogger(__name__)


class ConfigLoader:
    """
    Builds a validated ModelConfig from profile defaults, an optional YAML
    file, 'section.key=value' overrides and the environment, in that order.
    """

    def __init__(self, config_path: Optional[str] = None, profile: Optional[str] = None):
        """
        Args:
            config_path: Path to a YAML file with one mapping per section.
                May be None to use the profile defaults only.
            profile: Profile to start from; a 'profile' key in the file wins
                when this is None.
        """
        self.config_path = Path(config_path) if config_path else None
        self.profile = profile
        self.raw = self._load_yaml() if self.config_path else {}

    def _load_yaml(self) -> dict:
        """Reads the YAML file; any failure is a ConfigError."""
        try:
            with open(self.config_path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except FileNotFoundError:
            logger.error(f"Configuration file not found: {self.config_path}")
            raise ConfigError(f"Configuration file not found: {self.config_path}") from None
        except yaml.YAMLError as e:
            logger.error(f"Error parsing YAML file {self.config_path}: {e}")
            raise ConfigError(f"Error parsing YAML file {self.config_path}: {e}") from e
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ConfigError(f"{self.config_path}: top level must be a mapping of sections")
        return data

    def load(self, overrides: Iterable[str] = (), environ=None) -> ModelConfig:
        """
        Returns:
            A validated ModelConfig.
        """
        raw = dict(self.raw)
        profile = self.profile or raw.get("profile") or "desk"
        raw["profile"] = profile
        config = ModelConfig.from_dict(raw, base=profile_defaults(profile))
        config.apply_overrides(overrides)
        config.apply_environment(environ)
        config.validate()
        source = self.config_path.name if self.config_path else "defaults"
        logger.info(f"Configuration loaded: profile '{config.profile}' from {source}, "
                    f"variant '{config.ablation.variant_name()}'")
        return config
