"""Service configuration: file-based with environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path


@dataclass
class ServiceConfig:
    store_dir: Path
    registry_dir: Path
    worker_count: int = 1
    default_model: str | None = None  # falls back to the registry's best entry
    score_threshold: float = 0.5
    fill_window: int = 11
    crop_padding: int = 8
    input_size: int = 512
    host: str = "127.0.0.1"
    port: int = 8077
    ui_dir: Path | None = None  # built frontend to serve at /, when present

    def __post_init__(self) -> None:
        self.store_dir = Path(self.store_dir)
        self.registry_dir = Path(self.registry_dir)
        if self.ui_dir is not None:
            self.ui_dir = Path(self.ui_dir)
        if self.worker_count < 1:
            raise ValueError("worker count must be >= 1")

    @classmethod
    def load(cls, path: Path | None = None, env: dict | None = None) -> "ServiceConfig":
        """Read config from a JSON/YAML file, then apply THERMOSEG_* overrides."""
        env = os.environ if env is None else env
        values: dict = {}
        if path is not None:
            text = Path(path).read_text()
            if str(path).endswith((".yaml", ".yml")):
                import yaml

                values = yaml.safe_load(text) or {}
            else:
                values = json.loads(text)
        overrides = {
            "store_dir": env.get("THERMOSEG_STORE_DIR"),
            "registry_dir": env.get("THERMOSEG_REGISTRY_DIR"),
            "worker_count": env.get("THERMOSEG_WORKERS"),
            "default_model": env.get("THERMOSEG_DEFAULT_MODEL"),
            "score_threshold": env.get("THERMOSEG_THRESHOLD"),
            "host": env.get("THERMOSEG_HOST"),
            "port": env.get("THERMOSEG_PORT"),
            "ui_dir": env.get("THERMOSEG_UI_DIR"),
        }
        for key, raw in overrides.items():
            if raw is None:
                continue
            if key in ("worker_count", "port"):
                values[key] = int(raw)
            elif key == "score_threshold":
                values[key] = float(raw)
            else:
                values[key] = raw
        missing = [k for k in ("store_dir", "registry_dir") if not values.get(k)]
        if missing:
            raise ValueError(f"service config missing required keys: {missing}")
        return cls(**values)
