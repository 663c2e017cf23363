"""
ogfmap.config: run configuration.

All tunable constants live in DEFAULTS. A YAML file only needs the keys it
changes; it is merged over a deep copy of the defaults:

    settings = Settings.load('config.yaml')
    settings.get('ep.tol')            # 1e-06 unless overridden
    settings.set('sim2d.sigma', 0.5)

CLI flags are applied with set() after loading, so the effective values are
what gets recorded in run.json.
"""

import copy
import math
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from ogfmap.utils import deep_merge, get_logger, logging_to_file

DEFAULTS: Dict[str, Any] = {
    'log_file': '',
    'log_level': 'INFO',
    'thresholds': {
        'r_o': 0.65,
        'r_f': 0.35,
    },
    'kernel': {
        'cutoff_radius': None,      # None = infinite (dense correlation)
        'dense_limit': 5000,
    },
    'ogf': {
        'variance_floor': 1e-12,
        'check_symmetry': False,
    },
    'ep': {
        'tol': 1e-6,
        'max_sweeps': 100,
        'debug': False,
        'max_skip_fraction': 0.01,
        'divergence_sweeps': 3,
    },
    'baseline': {
        'l_hit': math.log(0.7 / 0.3),
        'l_miss': math.log(0.3 / 0.7),
        'l_min': -3.5,
        'l_max': 3.5,
    },
    'sim2d': {
        'map': '',                  # '' = bundled maps/lab25.txt
        'sample_counts': list(range(30, 301, 30)),
        'trials': 10,
        'seed': 0,
        'sigma': 1.0,
        'workers': 1,
        'timings': True,
    },
    'cloud3d': {
        'dims': [175, 150, 10],
        'resolution': 0.2,
        'origin': [0.0, 0.0, 0.0],
        'max_range': 100.0,
        'sigma': None,              # None = half the cell size
        'cutoff_cells': 3,
        'backend': 'auto',          # auto | dense | sparse
    },
}


class Settings:
    """
    Nested configuration dictionary with dotted-path access.

    Attributes:
        data: The merged configuration
        source: Path of the YAML file merged over the defaults, if any
    """

    def __init__(self, data: Optional[Dict[str, Any]] = None) -> None:
        self.data: Dict[str, Any] = copy.deepcopy(DEFAULTS)
        self.source: Optional[Path] = None
        self.logger = get_logger('ogfmap')
        if data:
            self.merge(data)

    @classmethod
    def load(cls, config: Union[str, Path, None] = None) -> 'Settings':
        """
        Build settings from the defaults and an optional YAML file.

        Args:
            config: Path to a YAML configuration file, or None for defaults only

        Raises:
            OSError: If the file cannot be read
            ValueError: If the file does not contain a mapping
        """
        settings = cls()
        if config is not None:
            with open(config) as f:
                data = yaml.safe_load(f) or {}
            if not isinstance(data, dict):
                raise ValueError(f"Configuration file {config} must contain a mapping")
            settings.merge(data)
            settings.source = Path(config)

        if settings.get('log_file'):
            logging_to_file(settings.logger, settings.get('log_file'))
        settings.logger.setLevel(str(settings.get('log_level')).upper())
        return settings

    def merge(self, data: Dict[str, Any]) -> None:
        for key in deep_merge(self.data, data):
            self.logger.warning(f"Unknown configuration key '{key}' kept as given")

    def get(self, path: str, default: Any = None) -> Any:
        """
        Get a value by dotted path, e.g. "ep.max_sweeps".

        Returns:
            The value at that path, or default if not found
        """
        current: Any = self.data
        for part in path.split('.'):
            if not isinstance(current, dict) or part not in current:
                return default
            current = current[part]
        return current

    def set(self, path: str, value: Any) -> None:
        """Set a value by dotted path, creating intermediate sections as needed."""
        parts = path.split('.')
        current = self.data
        for part in parts[:-1]:
            current = current.setdefault(part, {})
        current[parts[-1]] = value

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.data)
