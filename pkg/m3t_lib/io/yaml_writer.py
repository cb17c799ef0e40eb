"""
Writes configurations and small result mappings as YAML.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Union

import yaml

from m3t_lib.core_engine.config import ModelConfig

logger = logging.getLogger(__name__)

HEADER = "# M3T configuration. Sections hold flat key: value pairs; override with --set section.key=value\n"


def dump_yaml(data: Dict[str, Any]) -> str:
    """Block-style YAML with the key order preserved."""
    return yaml.safe_dump(data, default_flow_style=False, sort_keys=False)


def save_config_to_yaml(config: ModelConfig, output_path: Union[str, Path]) -> Path:
    """
    Saves every configuration value, defaults included.

    Args:
        config: The configuration to write.
        output_path: Target file; parent directories are created.
    """
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    output_path.write_text(HEADER + dump_yaml(config.to_dict()), encoding="utf-8")
    logger.info(f"Configuration for profile '{config.profile}' written to '{output_path}'")
    return output_path
