from dataclasses import dataclass

import numpy as np

from hyperlab.core.errors import GridTooCoarse
from hyperlab.core.geometry import TorusBox

MIN_GRID = 8


def check_resolution(box: TorusBox, n: int, eta: float = None) -> float:
    """Return the spacing h = L/n, enforcing n >= 8 and h <= eta/4."""
    if n < MIN_GRID:
        raise GridTooCoarse(f"grid needs at least {MIN_GRID} points per side, got {n}")
    h = box.L / n
    if eta is not None and h > eta / 4.0 + 1e-12:
        raise GridTooCoarse(f"spacing h={h:.4g} exceeds eta/4={eta / 4.0:.4g}; use n >= {int(np.ceil(4 * box.L / eta))}")
    return h


@dataclass(frozen=True, eq=False)
class ScalarFieldGrid:
    """n x n samples at nodes (i*h, j*h); values[i, j] sits at x = i*h, y = j*h."""

    box: TorusBox
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"scalar grid must be n x n, got shape {values.shape}")
        check_resolution(self.box, values.shape[0])
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return self.box.L / self.n

    def integrate(self) -> float:
        return float(self.spacing**2 * self.values.sum())


@dataclass(frozen=True, eq=False)
class VectorFieldGrid:
    """Staggered vector field on an n x n periodic grid.

    values[..., 0] is the x-component on vertical faces (i*h + h/2, j*h);
    values[..., 1] is the y-component on horizontal faces (i*h, j*h + h/2).
    Forward differences of a node potential land on these faces, backward
    differences of face values land back on nodes.
    """

    box: TorusBox
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3 or values.shape[0] != values.shape[1] or values.shape[2] != 2:
            raise ValueError(f"vector grid must be n x n x 2, got shape {values.shape}")
        check_resolution(self.box, values.shape[0])
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return self.box.L / self.n

    def squared_norm_integral(self, mask: np.ndarray = None) -> float:
        """h^2 * sum of squared components, optionally restricted per component."""
        squares = self.values**2
        if mask is not None:
            squares = squares * mask
        return float(self.spacing**2 * squares.sum())

    def face_coordinates(self) -> np.ndarray:
        """Coordinates of the sample points, shape (n, n, 2 components, 2)."""
        h = self.spacing
        axis = np.arange(self.n) * h
        x, y = np.meshgrid(axis, axis, indexing="ij")
        x_faces = np.stack([x + 0.5 * h, y], axis=-1)
        y_faces = np.stack([x, y + 0.5 * h], axis=-1)
        return np.stack([x_faces, y_faces], axis=2)

    def divergence(self) -> np.ndarray:
        h = self.spacing
        ex, ey = self.values[..., 0], self.values[..., 1]
        return (ex - np.roll(ex, 1, axis=0)) / h + (ey - np.roll(ey, 1, axis=1)) / h

    def curl(self) -> np.ndarray:
        """Discrete curl on cell corners; identically zero for forward-difference gradients."""
        h = self.spacing
        ex, ey = self.values[..., 0], self.values[..., 1]
        return (np.roll(ey, -1, axis=0) - ey) / h - (np.roll(ex, -1, axis=1) - ex) / h

    def scaled(self, factor: float) -> "VectorFieldGrid":
        return VectorFieldGrid(self.box, self.values * factor)

    def shifted(self, cells: tuple) -> "VectorFieldGrid":
        return VectorFieldGrid(self.box, np.roll(self.values, shift=cells, axis=(0, 1)))


def forward_gradient(potential: np.ndarray, h: float) -> np.ndarray:
    return np.stack(
        [(np.roll(potential, -1, axis=0) - potential) / h, (np.roll(potential, -1, axis=1) - potential) / h],
        axis=-1,
    )


def laplacian_symbol(n: int, h: float) -> np.ndarray:
    """Eigenvalues of minus the 5-point Laplacian for the FFT modes of an n x n grid."""
    s = np.sin(np.pi * np.fft.fftfreq(n)) ** 2
    return (4.0 / h**2) * (s[:, None] + s[None, :])


def five_point_laplacian(values: np.ndarray, h: float) -> np.ndarray:
    return (
        np.roll(values, 1, axis=0) + np.roll(values, -1, axis=0) + np.roll(values, 1, axis=1) + np.roll(values, -1, axis=1) - 4.0 * values
    ) / h**2
