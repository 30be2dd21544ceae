"""Truncated electric fields on the torus and the inequalities tying their energy to discrepancy.

A configuration X with L^2 points is spread into X_eta and paired with the
gradient field E solving -div E = c_d (X_eta - 1), c_d = 2 pi, by one FFT
Poisson solve with the 5-point Laplacian symbol. Every energy computed here is
an upper estimate: it comes from one admissible stationary field.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from hyperlab.core.errors import CountTooFar, NonNeutral, PreconditionNotMet
from hyperlab.core.geometry import PointConfiguration, TorusBox, count_in_ball, minimal_image
from hyperlab.core.grids import (
    ScalarFieldGrid,
    VectorFieldGrid,
    check_resolution,
    five_point_laplacian,
    forward_gradient,
    laplacian_symbol,
)
from hyperlab.core.parallel import run_replicas, thread_cap
from hyperlab.core.rng import RngSeed
from hyperlab.generators.processes import sample
from hyperlab.services.variance_service import VarianceService

C_D = 2.0 * np.pi
MAX_COUNT_DEVIATION = 0.2
_ATOM_CHUNK = 1024


def f_eta(x, eta: float):
    """max(0, log(eta / |x|)) for a 2D vector or an array of vectors."""
    if not 0 < eta <= 1:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    x = np.asarray(x, dtype=float)
    norm = np.hypot(x[..., 0], x[..., 1])
    with np.errstate(divide="ignore"):
        value = np.maximum(0.0, np.log(eta / norm))
    return float(value) if np.ndim(value) == 0 else value


def disk_potential(s: np.ndarray, a: float) -> np.ndarray:
    """Potential of a unit charge spread uniformly on B_a: -log s outside, -log a + (1 - s^2/a^2)/2 inside."""
    s = np.asarray(s, dtype=float)
    outside = -np.log(np.maximum(s, a))
    inside = -np.log(a) + 0.5 * (1.0 - (s / a) ** 2)
    return np.where(s >= a, outside, inside)


def _node_stencils(config: PointConfiguration, h: float, n: int, reach: float):
    """Yield (atom index, node i, node j, distance) for nodes within `reach` of each atom, in chunks."""
    width = int(np.ceil(reach / h)) + 1
    offsets = np.arange(-width, width + 1)
    for start in range(0, len(config), _ATOM_CHUNK):
        positions = config.positions[start:start + _ATOM_CHUNK]
        nearest = np.rint(positions / h).astype(np.int64)
        ix = nearest[:, 0, None, None] + offsets[None, :, None]
        iy = nearest[:, 1, None, None] + offsets[None, None, :]
        dx = ix * h - positions[:, 0, None, None]
        dy = iy * h - positions[:, 1, None, None]
        distance = np.hypot(dx, dy)
        atoms = np.broadcast_to(np.arange(start, start + len(positions))[:, None, None], distance.shape)
        yield (
            atoms,
            np.broadcast_to(np.mod(ix, n), distance.shape),
            np.broadcast_to(np.mod(iy, n), distance.shape),
            distance,
        )


def rasterize_disks(config: PointConfiguration, h: float, n: int, radius: float = 1.0) -> np.ndarray:
    """Each atom rasterised onto the nodes of its disk, mass renormalised to its multiplicity."""
    density = np.zeros((n, n))
    for atoms, ix, iy, distance in _node_stencils(config, h, n, radius):
        inside = distance <= radius
        nodes = inside.sum(axis=(1, 2))
        weight = config.multiplicities[atoms[:, 0, 0]] / (nodes * h * h)
        values = np.where(inside, weight[:, None, None], 0.0)
        np.add.at(density, (ix[inside], iy[inside]), values[inside])
    return density


def short_range_potential(config: PointConfiguration, eta: float, h: float, n: int) -> np.ndarray:
    """Sum over atoms of m (U_eta - U_1)(|node - x|), supported in the unit balls."""
    psi = np.zeros((n, n))
    if eta >= 1.0:
        return psi
    for atoms, ix, iy, distance in _node_stencils(config, h, n, 1.0):
        near = distance < 1.0
        values = config.multiplicities[atoms].astype(float) * (disk_potential(distance, eta) - disk_potential(distance, 1.0))
        np.add.at(psi, (ix[near], iy[near]), values[near])
    return psi


@dataclass(frozen=True, eq=False)
class TruncatedField:
    grid: VectorFieldGrid
    eta: float
    config_hash: str
    density: ScalarFieldGrid
    c_d: float = C_D

    @property
    def box(self) -> TorusBox:
        return self.grid.box


@dataclass
class CoulombEstimate:
    mean: float
    stderr: float
    replicas: int
    energies: np.ndarray = field(repr=False, default=None)


@dataclass
class LocalEnergyBound:
    lhs: float
    rhs_shape: float
    ratio: float
    M: float


@dataclass
class DiscrepancyBound:
    lhs: float
    rhs: float
    ratio: float
    energy: float
    r: float


@dataclass
class EtaComparison:
    energies: Dict[float, float]
    slack_constant: float
    ratio_constant: float
    newton_deviation: float

    def to_rows(self):
        return [{"eta": eta, "energy": energy} for eta, energy in sorted(self.energies.items())]


def spread_charges(config: PointConfiguration, eta: float, grid_n: int) -> ScalarFieldGrid:
    """Density of X_eta on the node grid; integrates to the total count exactly."""
    h = check_resolution(config.box, grid_n, eta)
    density = rasterize_disks(config, h, grid_n)
    if eta < 1.0:
        psi = short_range_potential(config, eta, h, grid_n)
        density -= five_point_laplacian(psi, h) / C_D
    return ScalarFieldGrid(config.box, density)


def _solve(config: PointConfiguration, eta: float, grid_n: int):
    box = config.box
    if not config.is_neutral:
        raise NonNeutral(f"field solve needs count L^2 = {box.L**2:g}, got {config.total_count}")
    h = check_resolution(box, grid_n, eta)
    base = rasterize_disks(config, h, grid_n)
    symbol = laplacian_symbol(grid_n, h)
    symbol[0, 0] = 1.0
    transform = np.fft.fft2(C_D * (base - 1.0)) / symbol
    transform[0, 0] = 0.0
    potential = np.real(np.fft.ifft2(transform))
    psi = short_range_potential(config, eta, h, grid_n)
    density = base - five_point_laplacian(psi, h) / C_D if eta < 1.0 else base
    return forward_gradient(potential + psi, h), density


def solve_field(config: PointConfiguration, eta: float, grid_n: int) -> TruncatedField:
    values, density = _solve(config, eta, grid_n)
    return TruncatedField(
        grid=VectorFieldGrid(config.box, values),
        eta=float(eta),
        config_hash=config.content_hash(),
        density=ScalarFieldGrid(config.box, density),
    )


def energy_per_volume(truncated: TruncatedField) -> float:
    return truncated.grid.squared_norm_integral() / truncated.box.area


def divergence_residual(truncated: TruncatedField) -> float:
    """max |div E + c_d (X_eta - 1)| over nodes."""
    return float(np.max(np.abs(truncated.grid.divergence() + truncated.c_d * (truncated.density.values - 1.0))))


def curl_residual(truncated: TruncatedField) -> float:
    return float(np.max(np.abs(truncated.grid.curl())))


def _face_distances(config: PointConfiguration, grid: VectorFieldGrid) -> np.ndarray:
    """Periodic distance from every face sample to the nearest atom, shape (n, n, 2)."""
    faces = grid.face_coordinates()
    tree = cKDTree(config.positions, boxsize=config.box.L)
    distances, _ = tree.query(config.box.wrap(faces.reshape(-1, 2).copy()))
    return distances.reshape(faces.shape[:3])


def newton_check(config: PointConfiguration, eta_small: float, eta_large: float, grid_n: int) -> float:
    """Largest deviation between the two truncated fields outside every B_{eta_large}(x), relative to max |E|."""
    small = solve_field(config, eta_small, grid_n)
    large = solve_field(config, eta_large, grid_n)
    outside = _face_distances(config, large.grid) > eta_large + large.grid.spacing
    if not np.any(outside):
        return 0.0
    scale = float(np.max(np.abs(large.grid.values[outside])))
    deviation = float(np.max(np.abs(small.grid.values - large.grid.values)[outside]))
    return deviation / scale if scale > 0 else deviation


def condition_point_count(config: PointConfiguration, seed: RngSeed, target: Optional[int] = None) -> PointConfiguration:
    """Force exactly `target` (default L^2) points: uniform removal of multiplicity units, or uniform fill."""
    box = config.box
    target = box.integer_side() ** 2 if target is None else int(target)
    difference = config.total_count - target
    if difference == 0:
        return config
    if abs(difference) > MAX_COUNT_DEVIATION * box.area:
        raise CountTooFar(f"count {config.total_count} is more than {MAX_COUNT_DEVIATION:.0%} of L^2 away from {target}")
    rng = seed.generator()
    if difference > 0:
        owners = np.repeat(np.arange(len(config)), config.multiplicities)
        removed = rng.choice(len(owners), size=difference, replace=False)
        remaining = config.multiplicities - np.bincount(owners[removed], minlength=len(config))
        keep = remaining > 0
        return PointConfiguration(box, config.positions[keep], remaining[keep])
    extra = box.uniform_points(rng, -difference)
    return PointConfiguration(
        box,
        np.vstack([config.positions, extra]),
        np.concatenate([config.multiplicities, np.ones(len(extra), dtype=np.int64)]),
    )


def _replica_energy(spec, box: TorusBox, seed: RngSeed, eta: float, grid_n: int, condition: bool) -> float:
    config = sample(spec, box, seed)
    if condition:
        config = condition_point_count(config, seed.child(3))
    return energy_per_volume(solve_field(config, eta, grid_n))


class CoulombService:
    def __init__(self, n_jobs: Optional[int] = None):
        self.n_jobs = n_jobs or thread_cap()

    def coul_estimate(
        self,
        spec,
        box: TorusBox,
        eta: float,
        replicas: int,
        grid_n: int,
        seed: RngSeed,
        condition: bool = False,
    ) -> CoulombEstimate:
        """Monte Carlo mean of the torus field energy per unit volume."""
        check_resolution(box, grid_n, eta)
        arguments = [(spec, box, seed.replica(i), eta, grid_n, condition) for i in range(replicas)]
        energies = np.asarray(run_replicas(_replica_energy, arguments, self.n_jobs), dtype=float)
        stderr = float(energies.std(ddof=1) / np.sqrt(replicas)) if replicas > 1 else 0.0
        logging.info(f"Coulomb energy eta={eta:g} on L={box.L:g}: {energies.mean():.4g} +/- {stderr:.2g}")
        return CoulombEstimate(float(energies.mean()), stderr, replicas, energies)

    @staticmethod
    def local_energy_lower_bound_check(
        config: PointConfiguration, truncated: TruncatedField, z: Sequence[float], M: float
    ) -> LocalEnergyBound:
        box = config.box
        if M < 10:
            raise PreconditionNotMet(f"M must be at least 10, got {M}")
        if not M < box.L / 2.0:
            raise PreconditionNotMet(f"B_M with M={M} does not fit the torus of side {box.L:g}")
        near = count_in_ball(config, z, 1.0)
        if near < M * M:
            raise PreconditionNotMet(f"|X ∩ B_1(z)| = {near} is below M^2 = {M * M:g}")
        faces = truncated.grid.face_coordinates()
        delta = minimal_image(faces - np.asarray(z, dtype=float), box)
        inside = np.hypot(delta[..., 0], delta[..., 1]) <= M
        lhs = truncated.grid.squared_norm_integral(inside)
        shape = M**4 * np.log(M)
        return LocalEnergyBound(lhs, float(shape), lhs / shape, float(M))

    def discrepancy_bound_check(
        self,
        spec,
        box: TorusBox,
        eta: float,
        r: float,
        replicas: int,
        seed: RngSeed,
        grid_n: int,
        condition: bool = False,
    ) -> DiscrepancyBound:
        """E[(N(B_r) - |B_r|)^2] against (Coul_eta + 1) r^2; the ratio estimates the constant."""
        moments = VarianceService(self.n_jobs).count_moments(spec, box, r, replicas, seed)
        energy = self.coul_estimate(spec, box, eta, max(2, replicas // 10), grid_n, seed.child(4), condition).mean
        rhs = (energy + 1.0) * r * r
        return DiscrepancyBound(moments.discrepancy, rhs, moments.discrepancy / rhs, energy, float(r))

    @staticmethod
    def eta_comparison_check(
        config: PointConfiguration, grid_n: int, etas: Sequence[float] = (0.25, 0.5, 1.0)
    ) -> EtaComparison:
        """Energies across truncations, the fitted slack C in E_1 <= E_eta + C eta and C_eta in E_eta <= C_eta (E_1 + 1)."""
        etas = sorted(etas)
        check_resolution(config.box, grid_n, etas[0])
        energies = {float(eta): energy_per_volume(solve_field(config, eta, grid_n)) for eta in etas}
        reference = energies[max(energies)]
        slack = max(max(0.0, (reference - energy) / eta) for eta, energy in energies.items())
        ratio = max(energy / (reference + 1.0) for energy in energies.values())
        deviation = newton_check(config, 0.5, 1.0, grid_n) if {0.5, 1.0} <= set(energies) else float("nan")
        return EtaComparison(energies, slack, ratio, deviation)
