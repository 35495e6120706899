import logging
import os
import sys
from typing import Dict

import yaml

DEFAULTS: Dict = {
    "logging_level": "INFO",
    "log_file_name": None,
    "verify_trials": 5,
    "verify_tolerance": 1e-5,
    "verify_seed": 42,
    "fd_step": 1e-6,
    "relative_error_floor": 1e-8,
    "sample_low": 0.1,
    "sample_high": 1.0,
    "gradio_server_name": "0.0.0.0",
    "gradio_server_port": 7860,
}


def default_config_path() -> str:
    """config.yaml next to the package, unless ELEMDIFF_CONFIG points elsewhere."""
    env_path = os.getenv("ELEMDIFF_CONFIG")
    if env_path:
        return env_path
    return os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config.yaml")


def load_config(config_path: str = None) -> Dict:
    """Loads the configuration from the specified YAML file, on top of the defaults."""
    config_path = config_path or default_config_path()
    config_data = dict(DEFAULTS)
    try:
        with open(config_path, "r") as f:
            loaded = yaml.safe_load(f)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            print(f"Error: Configuration file {config_path} did not load as a dictionary.", file=sys.stderr)
            sys.exit(1)
        config_data.update(loaded)
    except FileNotFoundError:
        print(f"Warning: Configuration file not found at {config_path}, using defaults", file=sys.stderr)
    except yaml.YAMLError as e:
        print(f"Error parsing YAML in {config_path}: {e}", file=sys.stderr)
        sys.exit(1)

    # Convert logging level string to actual level
    level = config_data.get("logging_level", "INFO")
    if isinstance(level, str):
        config_data["logging_level"] = getattr(logging, level.upper(), logging.INFO)
    return config_data


# Load configuration at the start when this module is imported
config = load_config()
