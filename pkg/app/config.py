from pathlib import Path
from pydantic_settings import BaseSettings
from typing import Any, Dict, Optional, Union
import json
import logging

from app.models import PRESETS, RunConfig


class Settings(BaseSettings):
    """Application configuration settings"""

    # API Configuration
    app_name: str = "SVS-net Desk API"
    app_description: str = "Vessel segmentation with a Gaussian attention stage, synthetic OCTA data and thresholding baselines"
    app_version: str = "1.0.0"

    # Server Configuration
    host: str = "0.0.0.0"
    port: int = 8000
    debug: bool = False

    # Model Configuration
    default_preset: str = "desk"
    checkpoint_path: Optional[str] = None  # env var: CHECKPOINT_PATH
    render_mode: str = "truncated"
    truncation_k: float = 5.0

    # Logging Configuration
    log_level: str = "INFO"

    # API Configuration
    docs_url: str = "/docs"
    redoc_url: str = "/redoc"

    # CORS Configuration
    cors_origins: list = ["*"]
    cors_methods: list = ["*"]
    cors_headers: list = ["*"]

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"


# Global settings instance
settings = Settings()

# Configure logging
def setup_logging():
    """Setup logging configuration"""
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper()),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    return logging.getLogger(__name__)


# --- run configuration ---------------------------------------------------------

SECTIONS = ("network", "training", "augment", "scene")
TOP_LEVEL = ("preset", "data_dir", "render_mode", "truncation_k")
PRESET_KEYS = {"lr": "training", "batch_size": "training", "input_size": "network"}


def _section_fields() -> Dict[str, str]:
    """Plain field name -> owning section, for names that are unambiguous."""
    owners: Dict[str, list] = {}
    for section in SECTIONS:
        model = RunConfig.model_fields[section].annotation
        for name in model.model_fields:
            owners.setdefault(name, []).append(section)
    return {name: sections[0] for name, sections in owners.items() if len(sections) == 1}


def parse_config_text(text: str) -> Dict[str, Any]:
    """JSON object or flat ``key=value`` lines (``#`` comments allowed)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        payload = json.loads(stripped)
        if not isinstance(payload, dict):
            raise ValueError("JSON config must be an object")
        return payload
    values: Dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"config line {number} is not key=value: {line!r}")
        values[key.strip()] = _parse_value(value.strip())
    return values


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _flatten(values: Dict[str, Any]) -> Dict[str, Any]:
    """Nested JSON sections become dotted keys."""
    flat: Dict[str, Any] = {}
    for key, value in values.items():
        if key in SECTIONS and isinstance(value, dict):
            for inner, inner_value in value.items():
                flat[f"{key}.{inner}"] = inner_value
        else:
            flat[key] = value
    return flat


def _assign(tree: Dict[str, Any], key: str, value: Any, owners: Dict[str, str]) -> None:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ValueError(f"Unknown config section: {section}")
        tree[section][name] = value
    elif key in TOP_LEVEL:
        tree[key] = value
    elif key in owners:
        tree[owners[key]][key] = value
    else:
        raise ValueError(f"Unknown or ambiguous config key: {key}")


def build_run_config(preset: Optional[str] = None,
                     file_values: Optional[Dict[str, Any]] = None,
                     overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Merge preset < config file < explicit overrides into a validated RunConfig.

    Seeds given as plain ``seed`` apply to every section. The augmentation
    crop size follows the network input size unless set explicitly.
    """
    file_values = _flatten(dict(file_values or {}))
    overrides = _flatten({k: v for k, v in (overrides or {}).items() if v is not None})
    preset = overrides.pop("preset", None) or preset or file_values.pop("preset", None) \
        or settings.default_preset
    file_values.pop("preset", None)
    if preset not in PRESETS:
        raise ValueError(f"Unknown preset: {preset}")

    tree: Dict[str, Any] = {section: {} for section in SECTIONS}
    tree["preset"] = preset
    tree["render_mode"] = settings.render_mode
    tree["truncation_k"] = settings.truncation_k
    owners = _section_fields()
    owners.pop("seed", None)

    for key, value in PRESETS[preset].items():
        tree[PRESET_KEYS[key]][key] = value
    for layer in (file_values, overrides):
        for key, value in layer.items():
            if key == "seed":
                for section in SECTIONS:
                    tree[section]["seed"] = value
                continue
            _assign(tree, key, value, owners)

    tree["augment"].setdefault("crop_size", tree["network"].get("input_size"))
    return RunConfig(**tree)
