import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from hyperlab.core.errors import NonIntegerSide, RadiusTooLarge
from hyperlab.core.rng import RngSeed


@dataclass(frozen=True)
class TorusBox:
    """Periodic square [0, L)^2."""

    side_length: float

    def __post_init__(self):
        if not self.side_length > 0:
            raise ValueError(f"side_length must be positive, got {self.side_length}")

    @property
    def L(self) -> float:
        return float(self.side_length)

    @property
    def area(self) -> float:
        return self.L * self.L

    @property
    def is_integer(self) -> bool:
        return float(self.side_length).is_integer()

    def integer_side(self) -> int:
        """Side as an int; raises NonIntegerSide for fractional boxes."""
        if not self.is_integer:
            raise NonIntegerSide(f"operation needs an integer side, got L={self.side_length}")
        return int(self.side_length)

    def wrap(self, positions: np.ndarray) -> np.ndarray:
        wrapped = np.mod(positions, self.L)
        # np.mod can return L itself for tiny negative inputs
        wrapped[wrapped >= self.L] = 0.0
        return wrapped

    def uniform_points(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(0.0, self.L, size=(count, 2))


def minimal_image(delta: np.ndarray, box: TorusBox) -> np.ndarray:
    """Displacements reduced to [-L/2, L/2)^2 (nearest periodic copy)."""
    L = box.L
    return delta - L * np.floor(delta / L + 0.5)


def periodic_distance(x: Sequence[float], y: Sequence[float], box: TorusBox) -> float:
    delta = minimal_image(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), box)
    return float(np.hypot(delta[..., 0], delta[..., 1]))


def periodic_distances(points: np.ndarray, center: Sequence[float], box: TorusBox) -> np.ndarray:
    """Distances from every row of `points` to `center`."""
    delta = minimal_image(np.asarray(points, dtype=float) - np.asarray(center, dtype=float), box)
    return np.hypot(delta[:, 0], delta[:, 1])


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """Finite multiset of positions on a torus.

    Positions are stored once with an explicit integer multiplicity, so
    coincident points (collapsed blocks) are represented exactly.
    """

    box: TorusBox
    positions: np.ndarray
    multiplicities: np.ndarray = field(default=None)

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if self.multiplicities is None:
            multiplicities = np.ones(len(positions), dtype=np.int64)
        else:
            multiplicities = np.asarray(self.multiplicities, dtype=np.int64).reshape(-1)
        if len(multiplicities) != len(positions):
            raise ValueError("positions and multiplicities differ in length")
        if np.any(multiplicities <= 0):
            raise ValueError("multiplicities must be positive")
        if np.any(positions < 0.0) or np.any(positions >= self.box.L):
            raise ValueError(f"positions must lie in [0, {self.box.L})^2")
        positions.setflags(write=False)
        multiplicities.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "multiplicities", multiplicities)

    @classmethod
    def empty(cls, box: TorusBox) -> "PointConfiguration":
        return cls(box, np.zeros((0, 2)), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_unwrapped(cls, box: TorusBox, positions: np.ndarray, multiplicities=None) -> "PointConfiguration":
        return cls(box, box.wrap(np.asarray(positions, dtype=float).reshape(-1, 2)), multiplicities)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def total_count(self) -> int:
        return int(self.multiplicities.sum())

    @property
    def is_neutral(self) -> bool:
        return self.box.is_integer and self.total_count == self.box.integer_side() ** 2

    @property
    def is_simple(self) -> bool:
        return bool(np.all(self.multiplicities == 1))

    def shift(self, t: Sequence[float]) -> "PointConfiguration":
        return PointConfiguration.from_unwrapped(self.box, self.positions + np.asarray(t, dtype=float), self.multiplicities)

    def expanded(self) -> np.ndarray:
        """Positions repeated by multiplicity."""
        return np.repeat(self.positions, self.multiplicities, axis=0)

    def with_jitter(self, radius: float, seed: RngSeed) -> "PointConfiguration":
        """Simple variant: each unit of multiplicity moved uniformly into B_radius."""
        if radius <= 0 or self.is_simple:
            return self
        rng = seed.generator()
        points = self.expanded()
        angles = rng.uniform(0.0, 2.0 * np.pi, len(points))
        radii = radius * np.sqrt(rng.uniform(0.0, 1.0, len(points)))
        offsets = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
        return PointConfiguration.from_unwrapped(self.box, points + offsets)

    def tree(self) -> cKDTree:
        return cKDTree(self.positions, boxsize=self.box.L)

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.float64(self.box.L).tobytes())
        digest.update(np.ascontiguousarray(self.positions).tobytes())
        digest.update(np.ascontiguousarray(self.multiplicities).tobytes())
        return digest.hexdigest()[:16]


def check_radius(r: float, box: TorusBox, fraction: float = 0.5) -> None:
    if not 0 < r < fraction * box.L:
        raise RadiusTooLarge(f"radius {r} must lie in (0, {fraction}*L = {fraction * box.L})")


def count_in_ball(config: PointConfiguration, center: Sequence[float], r: float) -> int:
    """Sum of multiplicities at periodic distance <= r from `center`."""
    check_radius(r, config.box)
    if len(config) == 0:
        return 0
    inside = periodic_distances(config.positions, center, config.box) <= r
    return int(config.multiplicities[inside].sum())


def counts_in_balls(config: PointConfiguration, centers: np.ndarray, radii: Sequence[float]) -> np.ndarray:
    """Counts for every (center, radius) pair, shape (len(centers), len(radii)).

    One periodic KD-tree query per center at the largest radius; smaller radii
    reuse the sorted distances.
    """
    radii = np.asarray(radii, dtype=float)
    for r in radii:
        check_radius(r, config.box)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    counts = np.zeros((len(centers), len(radii)), dtype=np.int64)
    if len(config) == 0:
        return counts
    tree = config.tree()
    r_max = float(radii.max())
    neighbours = tree.query_ball_point(config.box.wrap(centers.copy()), r_max * (1.0 + 1e-12))
    for row, (center, index) in enumerate(zip(centers, neighbours)):
        if not index:
            continue
        index = np.asarray(index)
        distances = periodic_distances(config.positions[index], center, config.box)
        order = np.argsort(distances)
        cumulative = np.cumsum(config.multiplicities[index][order])
        position = np.searchsorted(distances[order], radii, side="right")
        counts[row] = np.where(position > 0, cumulative[np.maximum(position - 1, 0)], 0)
    return counts
