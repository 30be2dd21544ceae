import json
import logging
import os
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError

from hyperlab.core.errors import InvalidConfig

DEFAULTS_PATH = Path(__file__).with_name("defaults.json")


class Settings:
    """Process-wide knobs read from the environment (.env is loaded by the CLI)."""

    def __init__(self):
        self.threads = self._int("HYPERLAB_THREADS", 1)
        self.log_level = os.getenv("HYPERLAB_LOG_LEVEL", "INFO").upper()
        self.max_exact_entries = self._int("HYPERLAB_MAX_EXACT_ENTRIES", 10_000_000)
        self.output_dir = Path(os.getenv("HYPERLAB_OUTPUT_DIR", "results"))

    @staticmethod
    def _int(name: str, default: int) -> int:
        raw = os.getenv(name)
        if raw is None:
            return default
        try:
            return int(float(raw))
        except ValueError:
            logging.warning(f"Ignoring non-numeric {name}={raw!r}, using {default}")
            return default


class Thresholds(BaseModel):
    """Pass/fail thresholds for the acceptance checks."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    version: Literal[1] = 1
    poisson_sigma_tolerance: float = 0.05
    lattice_slope_min: float = -1.3
    lattice_slope_max: float = -0.7
    spectral_agreement_abs: float = 0.05
    spectral_agreement_rel: float = 0.10
    hustar_exponent_threshold: float = -0.2
    hustar_floor: float = 0.5
    stability_tolerance: float = 0.10
    collapse_w2_factor: float = 2.0
    collapse_energy_band: float = 2.0
    local_energy_min_ratio: float = 0.001
    binomial_variance_band: float = 3.0
    akt_min_r_squared: float = 0.9
    forward_bridge_min_fraction: float = 0.95
    reverse_bridge_min_fraction: float = 1.0
    bound_slack: float = 0.05
    tol_div: float = 1e-6
    newton_tolerance: float = 1e-6
    discrepancy_max_constant: float = 50.0
    translation_bound_constant: float = 50.0


def load_thresholds(path: Optional[Path] = None, overrides: Optional[dict] = None) -> Thresholds:
    path = Path(path) if path else DEFAULTS_PATH
    try:
        document = json.loads(path.read_text())
        document.update(overrides or {})
        return Thresholds.model_validate(document)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidConfig(f"cannot read thresholds from {path}: {e}") from e
    except ValidationError as e:
        raise InvalidConfig(f"invalid thresholds: {e}") from e
