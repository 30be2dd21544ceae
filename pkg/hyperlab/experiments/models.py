from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, field_validator

from hyperlab.generators.specs import (
    BinomialSpec,
    CollapseSpec,
    GaussianLaw,
    LatticeSpec,
    PerturbedLatticeSpec,
    PoissonSpec,
    ProcessSpec,
    spec_label,
)


class SuiteEntry(BaseModel):
    model_config = ConfigDict(frozen=True)
    label: str
    spec: ProcessSpec


def default_suite() -> List[SuiteEntry]:
    return [
        SuiteEntry(label="poisson", spec=PoissonSpec()),
        SuiteEntry(label="lattice", spec=LatticeSpec()),
        SuiteEntry(label="perturbed", spec=PerturbedLatticeSpec(law=GaussianLaw(std=0.2))),
        SuiteEntry(label="collapse", spec=CollapseSpec(N=8)),
        SuiteEntry(label="binomial", spec=BinomialSpec(N=8)),
    ]


class ExperimentConfig(BaseModel):
    """One full run of the chain or counterexample suite, as read from --config."""

    model_config = ConfigDict(extra="forbid")

    name: str = "hyperlab"
    kind: Literal["chain", "counterexamples"] = "chain"
    spec: Optional[ProcessSpec] = None
    suite: List[SuiteEntry] = Field(default_factory=default_suite)
    boxes: List[PositiveInt] = Field(default_factory=lambda: [16, 32])
    radii: List[PositiveFloat] = Field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 16.0])
    eta: float = Field(default=1.0, gt=0.0, le=1.0)
    grid_per_unit: PositiveInt = 8
    grid_m_factor: PositiveInt = 2
    omega_max: PositiveFloat = 4.0
    replicas: PositiveInt = 200
    centers_per_replica: PositiveInt = 16
    spectral_replicas: PositiveInt = 50
    field_replicas: PositiveInt = 4
    transport_replicas: PositiveInt = 4
    seed: int = Field(default=7, ge=0)
    output_dir: Optional[str] = None

    # chain extras
    spectral_box: PositiveInt = 64
    spectral_radii: List[PositiveFloat] = Field(default_factory=lambda: [4.0, 8.0])
    pair_box: PositiveInt = 16
    discrepancy_radii: List[PositiveFloat] = Field(default_factory=lambda: [4.0, 8.0])
    mixture_j_max: PositiveInt = 3
    bridge_configs: PositiveInt = 100
    forward_bridge_L: PositiveInt = 16
    reverse_bridge_L: PositiveInt = 8
    bridge_std: PositiveFloat = 0.1

    # counterexample extras
    collapse_N: List[PositiveInt] = Field(default_factory=lambda: [4, 8, 16])
    local_M: List[PositiveInt] = Field(default_factory=lambda: [10, 20])
    binomial_N: List[PositiveInt] = Field(default_factory=lambda: [8, 16])
    w1_N: List[PositiveInt] = Field(default_factory=lambda: [8, 16, 32])
    akt_N: List[PositiveInt] = Field(default_factory=lambda: [8, 16, 32, 64])
    akt_entry_limit: PositiveInt = 20_000_000

    checks: Optional[List[str]] = None
    thresholds: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("boxes", "radii", "collapse_N", "binomial_N", "w1_N", "akt_N")
    @classmethod
    def _sorted_unique(cls, values):
        return sorted(set(values))

    def entries(self) -> List[SuiteEntry]:
        """The single `spec` when given, the suite otherwise."""
        if self.spec is not None:
            return [SuiteEntry(label=spec_label(self.spec), spec=self.spec)]
        return list(self.suite)

    @property
    def largest_box(self) -> int:
        return max(self.boxes)

    def grid_n(self, L: int) -> int:
        return self.grid_per_unit * L


def plain(value):
    """numpy scalars and arrays (also inside dicts and lists) as JSON-friendly Python values."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


class CheckRecord(BaseModel):
    name: str
    success: bool
    data: Optional[Dict[str, Any]] = None
    error: Optional[str] = None


class ExperimentReport(BaseModel):
    """Tables, fits and check outcomes of one experiment.

    `timings` holds wall-clock seconds per step and is kept out of the
    serialized report so that identical configs give identical report.json.
    """

    name: str
    kind: str
    seed: int
    thresholds_version: int = 1
    config: Dict[str, Any] = Field(default_factory=dict)
    sections: Dict[str, List[Dict[str, Any]]] = Field(default_factory=dict)
    fits: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    checks: List[CheckRecord] = Field(default_factory=list)
    errors: List[str] = Field(default_factory=list)
    timings: Dict[str, float] = Field(default_factory=dict, exclude=True)

    def add_rows(self, section: str, rows: List[Dict[str, Any]]):
        self.sections.setdefault(section, []).extend(plain(row) for row in rows)

    def rows(self, section: str) -> List[Dict[str, Any]]:
        return self.sections.get(section, [])

    @property
    def passed(self) -> bool:
        return all(check.success for check in self.checks)
