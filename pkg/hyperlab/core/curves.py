from dataclasses import dataclass
from typing import List

import numpy as np


@dataclass(frozen=True)
class VarianceEntry:
    r: float
    sigma: float
    stderr: float
    replicas: int


@dataclass(frozen=True)
class VarianceCurve:
    """Estimated sigma(r) at strictly increasing radii."""

    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        radii = [entry.r for entry in entries]
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError(f"radii must be strictly increasing, got {radii}")
        if any(entry.stderr < 0 for entry in entries):
            raise ValueError("stderr must be nonnegative")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_arrays(cls, radii, sigma, stderr=None, replicas=0) -> "VarianceCurve":
        stderr = np.zeros(len(radii)) if stderr is None else stderr
        return cls(
            tuple(
                VarianceEntry(float(r), float(s), float(e), int(replicas))
                for r, s, e in zip(radii, sigma, stderr)
            )
        )

    @property
    def radii(self) -> np.ndarray:
        return np.array([entry.r for entry in self.entries])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([entry.sigma for entry in self.entries])

    @property
    def stderr(self) -> np.ndarray:
        return np.array([entry.stderr for entry in self.entries])

    def at(self, r: float) -> VarianceEntry:
        for entry in self.entries:
            if np.isclose(entry.r, r):
                return entry
        raise KeyError(r)

    def loglog_slope(self) -> float:
        """Least-squares slope of log sigma against log r (positive sigma only)."""
        keep = self.sigma > 0
        if keep.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(self.radii[keep]), np.log(self.sigma[keep]), 1)[0])

    def to_rows(self) -> List[dict]:
        return [
            {"r": entry.r, "sigma": entry.sigma, "stderr": entry.stderr, "replicas": entry.replicas}
            for entry in self.entries
        ]
