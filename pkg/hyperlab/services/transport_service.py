"""Semi-discrete Wasserstein costs to Lebesgue on the torus, and the two bridges
between transport cost and field energy."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import ot
from scipy import integrate, optimize, stats

from hyperlab.core.errors import DensityUnbounded, InstanceTooLarge, MissingCoupling, Unbalanced
from hyperlab.core.geometry import PointConfiguration, TorusBox, minimal_image
from hyperlab.core.grids import VectorFieldGrid, check_resolution
from hyperlab.core.parallel import run_replicas, thread_cap
from hyperlab.core.rng import RngSeed
from hyperlab.generators.processes import gen_binomial_blocks, sample
from hyperlab.generators.specs import has_exact_count
from hyperlab.services.coulomb_service import C_D, TruncatedField, condition_point_count, energy_per_volume, rasterize_disks
from hyperlab.settings import Settings

EXACT = "exact_assignment"
ENTROPIC = "entropic"
BOUND_SLACK = 0.05
STABILITY_TOLERANCE = 0.10

Coupling = Dict[int, List[Tuple[int, float]]]


def max_exact_entries() -> int:
    return Settings().max_exact_entries


@dataclass
class TransportResult:
    """Optimal (or entropic) coupling between a discrete measure and Lebesgue on grid_m^2 cells.

    Sources are atoms of a configuration, or grid cells when the measure was
    itself rasterised (then `source_density` holds its cell densities).
    """

    cost_per_volume: float
    p: float
    method: str
    epsilon: float
    box: TorusBox
    grid_m: int
    coupling: Optional[Coupling] = None
    source_density: Optional[np.ndarray] = field(default=None, repr=False)
    discretization_bound: float = 0.0

    def marginal_errors(self, source_masses: np.ndarray) -> Tuple[float, float]:
        """Largest relative violation of the point and cell marginals."""
        if self.coupling is None:
            raise MissingCoupling("result carries no coupling")
        cell_mass = self.box.area / self.grid_m**2
        rows = np.zeros(len(source_masses))
        columns = np.zeros(self.grid_m**2)
        for point_id, entries in self.coupling.items():
            for cell, mass in entries:
                rows[point_id] += mass
                columns[cell] += mass
        row_error = float(np.max(np.abs(rows - source_masses) / np.maximum(source_masses, 1e-300)))
        column_error = float(np.max(np.abs(columns - cell_mass)) / cell_mass)
        return row_error, column_error


@dataclass
class WpScaling:
    sides: List[float]
    means: List[float]
    stderrs: List[float]
    verdict: str
    slope: float
    intercept: float


@dataclass
class AktScaling:
    N: List[int]
    means: List[float]
    stderrs: List[float]
    slope: float
    intercept: float
    r_squared: float


@dataclass
class FieldTransportBound:
    bound: float
    measured: float
    holds: bool


@dataclass
class CouplingField:
    flux: VectorFieldGrid
    energy: float
    rhs: float
    holds: bool
    density_bound: float
    divergence_residual: float


def cell_centers(box: TorusBox, grid_m: int, offset: float = 0.5) -> np.ndarray:
    return (np.arange(grid_m) + offset) * box.L / grid_m


def cost_matrix(positions: np.ndarray, box: TorusBox, grid_m: int, p: float, offset: float = 0.5) -> np.ndarray:
    """|minimal-image displacement|^p from each source to each cell (row-major cells)."""
    axis = cell_centers(box, grid_m, offset)
    dx = minimal_image(positions[:, 0, None] - axis[None, :], box)
    dy = minimal_image(positions[:, 1, None] - axis[None, :], box)
    squared = (dx**2)[:, :, None] + (dy**2)[:, None, :]
    squared = squared.reshape(len(positions), grid_m * grid_m)
    return squared if p == 2 else squared ** (p / 2.0)


def _round_to_marginals(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project an approximate plan onto the exact transport polytope of (a, b)."""
    rows = plan.sum(axis=1)
    plan = plan * np.minimum(1.0, a / np.maximum(rows, 1e-300))[:, None]
    columns = plan.sum(axis=0)
    plan = plan * np.minimum(1.0, b / np.maximum(columns, 1e-300))[None, :]
    row_deficit = a - plan.sum(axis=1)
    column_deficit = b - plan.sum(axis=0)
    total = row_deficit.sum()
    if total > 0:
        plan = plan + np.outer(row_deficit, column_deficit) / total
    return plan


def _sparse_coupling(plan: np.ndarray, scale: float, floor: float = 1e-14) -> Coupling:
    coupling = {}
    for point_id, row in enumerate(plan):
        cells = np.flatnonzero(row > floor * row.max()) if row.max() > 0 else []
        coupling[point_id] = [(int(cell), float(row[cell] * scale)) for cell in cells]
    return coupling


def _solve_transport(
    positions: np.ndarray,
    masses: np.ndarray,
    box: TorusBox,
    grid_m: int,
    p: float,
    method: str,
    epsilon: float,
    offset: float,
    entry_limit: Optional[int],
):
    """Returns (cost per volume, coupling) for sources with `masses` against uniform cells."""
    cells = grid_m * grid_m
    limit = max_exact_entries() if entry_limit is None else entry_limit
    if method == EXACT and len(positions) * cells > limit:
        raise InstanceTooLarge(f"{len(positions)} x {cells} entries exceed the exact limit {limit}; use the entropic method")
    costs = cost_matrix(positions, box, grid_m, p, offset)
    total = float(masses.sum())
    if method == EXACT and len(positions) == cells and np.allclose(masses, total / cells):
        rows, columns = optimize.linear_sum_assignment(costs)
        plan = np.zeros_like(costs)
        plan[rows, columns] = 1.0 / cells
    elif method == EXACT:
        plan = ot.emd(masses / total, np.full(cells, 1.0 / cells), costs, numItermax=10_000_000)
    elif method == ENTROPIC:
        a = masses / total
        b = np.full(cells, 1.0 / cells)
        plan = ot.sinkhorn(a, b, costs, epsilon, method="sinkhorn_log", numItermax=20_000, stopThr=1e-10)
        plan = _round_to_marginals(np.asarray(plan), a, b)
    else:
        raise ValueError(f"unknown transport method {method!r}")
    cost = float(np.sum(plan * costs)) * total / box.area
    return cost, _sparse_coupling(plan, total)


def _check_balanced(config: PointConfiguration):
    if not config.is_neutral:
        raise Unbalanced(f"balanced transport needs L^2 = {config.box.L**2:g} points, got {config.total_count}")


class TransportService:
    def __init__(self, n_jobs: Optional[int] = None):
        self.n_jobs = n_jobs or thread_cap()

    @staticmethod
    def wp_to_lebesgue(
        config: PointConfiguration,
        grid_m: int,
        p: float = 2.0,
        method: str = EXACT,
        epsilon: float = 0.0,
        entry_limit: Optional[int] = None,
    ) -> TransportResult:
        """Per-volume |x - y|^p transport cost from the atoms of `config` to Lebesgue."""
        _check_balanced(config)
        box = config.box
        if grid_m < box.integer_side():
            raise ValueError(f"grid_m={grid_m} must be at least L={box.L:g}")
        cost, coupling = _solve_transport(
            config.positions, config.multiplicities.astype(float), box, grid_m, p, method, epsilon, 0.5, entry_limit
        )
        half_cell = 0.5 * math.sqrt(2.0) * box.L / grid_m
        return TransportResult(cost, p, method, epsilon if method == ENTROPIC else 0.0, box, grid_m, coupling, None, half_cell)

    def w2_to_lebesgue(self, config, grid_m, method=EXACT, epsilon=0.0, entry_limit=None) -> TransportResult:
        return self.wp_to_lebesgue(config, grid_m, 2.0, method, epsilon, entry_limit)

    def w1_to_lebesgue(self, config, grid_m, method=EXACT, epsilon=0.0, entry_limit=None) -> TransportResult:
        return self.wp_to_lebesgue(config, grid_m, 1.0, method, epsilon, entry_limit)

    def replica_costs(
        self,
        spec,
        box: TorusBox,
        replicas: int,
        seed: RngSeed,
        grid_m: int,
        p: float = 2.0,
        method: str = EXACT,
        epsilon: float = 0.0,
    ) -> np.ndarray:
        """Cost per volume of replicas 0..replicas-1; random counts are conditioned to L^2 first."""
        condition = not has_exact_count(spec)
        arguments = [(spec, box, seed.replica(i), grid_m, p, method, epsilon, condition) for i in range(replicas)]
        return np.asarray(run_replicas(_replica_cost, arguments, self.n_jobs), dtype=float)

    @staticmethod
    def spread_to_lebesgue(config: PointConfiguration, eta: float, grid_m: int, method: str = EXACT, epsilon: float = 0.0) -> TransportResult:
        """W2 from the cell-rasterised X_eta to Lebesgue on the same cells (sources are cells)."""
        _check_balanced(config)
        box = config.box
        h = check_resolution(box, grid_m, eta)
        density = rasterize_disks(config, h, grid_m, radius=eta)
        masses = density.ravel() * h * h
        occupied = np.flatnonzero(masses > 0)
        axis = np.arange(grid_m) * h
        nodes = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
        cost, coupling = _solve_transport(nodes[occupied], masses[occupied], box, grid_m, 2.0, method, epsilon, 0.0, None)
        coupling = {int(occupied[source]): entries for source, entries in coupling.items()}
        return TransportResult(cost, 2.0, method, epsilon if method == ENTROPIC else 0.0, box, grid_m, coupling, density, 0.0)

    def wp_per_unit_volume(
        self,
        spec,
        sides: Sequence[int],
        p: float,
        replicas: int,
        seed: RngSeed,
        grid_factor: int = 2,
        method: str = EXACT,
        epsilon: float = 0.0,
    ) -> WpScaling:
        sides = sorted(sides)
        means, stderrs = [], []
        for index, L in enumerate(sides):
            costs = self.replica_costs(spec, TorusBox(L), replicas, seed.child(index), grid_factor * L, p, method, epsilon)
            means.append(float(costs.mean()))
            stderrs.append(float(costs.std(ddof=1) / np.sqrt(replicas)) if replicas > 1 else 0.0)
        change = abs(means[-1] - means[-2]) / max(abs(means[-2]), 1e-300) if len(means) > 1 else 0.0
        verdict = "finite" if change < STABILITY_TOLERANCE else "growing"
        if len(sides) > 1:
            fit = stats.linregress(np.log(sides), means)
            slope, intercept = float(fit.slope), float(fit.intercept)
        else:
            slope, intercept = 0.0, means[0]
        logging.info(f"w_{p:g} per unit volume over L={sides}: {verdict} (slope vs log L {slope:.3g})")
        return WpScaling(list(map(float, sides)), means, stderrs, verdict, slope, intercept)

    def akt_scaling(self, N_values: Sequence[int], replicas: int, seed: RngSeed, entry_limit: Optional[int] = None) -> AktScaling:
        """Per-point W2^2 of N^2 i.i.d. uniform points in an N x N torus, fitted against log N."""
        N_values = sorted(N_values)
        means, stderrs = [], []
        for index, N in enumerate(N_values):
            arguments = [(N, seed.child(index).replica(i), entry_limit) for i in range(replicas)]
            costs = np.asarray(run_replicas(_binomial_cost, arguments, self.n_jobs))
            means.append(float(costs.mean()))
            stderrs.append(float(costs.std(ddof=1) / np.sqrt(replicas)) if replicas > 1 else 0.0)
        fit = stats.linregress(np.log(N_values), means)
        return AktScaling(list(N_values), means, stderrs, float(fit.slope), float(fit.intercept), float(fit.rvalue**2))

    def transport_bound_from_field(
        self, truncated: TruncatedField, config: PointConfiguration, grid_m: Optional[int] = None
    ) -> FieldTransportBound:
        """Measured W2^2 per volume against (4 / c_d^2) * field energy per volume + eta^2."""
        grid_m = grid_m or 2 * config.box.integer_side()
        bound = 4.0 / C_D**2 * energy_per_volume(truncated) + truncated.eta**2
        measured = self.w2_to_lebesgue(config, grid_m).cost_per_volume
        return FieldTransportBound(bound, measured, measured <= bound * (1.0 + BOUND_SLACK))

    @staticmethod
    def field_from_coupling(result: TransportResult, grid_n: Optional[int] = None) -> CouplingField:
        """Time-integrated momentum of the displacement interpolation, rasterised on the cell grid.

        Each parcel moves from its source cell to its target cell along a
        staircase of face crossings ordered by the straight segment (x first on
        ties), so -div(flux) = m - Leb holds exactly on cells.
        """
        if result.coupling is None:
            raise MissingCoupling("field_from_coupling needs a coupling")
        if result.source_density is None:
            raise DensityUnbounded("source is atomic; transport a spread measure (spread_to_lebesgue) instead")
        m = result.grid_m
        if grid_n is not None and grid_n != m:
            raise ValueError(f"flux grid must match the coupling grid ({m}), got {grid_n}")
        box = result.box
        h = box.L / m
        sources, targets, masses = [], [], []
        for source, entries in result.coupling.items():
            for cell, mass in entries:
                sources.append(source)
                targets.append(cell)
                masses.append(mass)
        sources = np.asarray(sources, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        masses = np.asarray(masses, dtype=float)
        si, sj = np.divmod(sources, m)
        ti, tj = np.divmod(targets, m)
        di = np.mod(ti - si + m // 2, m) - m // 2
        dj = np.mod(tj - sj + m // 2, m) - m // 2
        flux = np.zeros((m, m, 2))
        steps = np.stack([di, dj], axis=1)
        for step in np.unique(steps, axis=0):
            if not step.any():
                continue
            parcels = np.all(steps == step, axis=1)
            for (oi, oj), component, sign in _crossing_stencil(int(step[0]), int(step[1])):
                np.add.at(
                    flux[..., component],
                    (np.mod(si[parcels] + oi, m), np.mod(sj[parcels] + oj, m)),
                    -sign * masses[parcels] / h,
                )
        grid = VectorFieldGrid(box, flux)
        energy = grid.squared_norm_integral() / box.area
        density_bound = max(float(result.source_density.max()), 1.0)
        rhs = density_bound * result.cost_per_volume
        residual = float(np.max(np.abs(-grid.divergence() - (result.source_density - 1.0))))
        return CouplingField(grid, energy, rhs, energy <= rhs * (1.0 + BOUND_SLACK), density_bound, residual)


def _crossing_stencil(di: int, dj: int):
    """Faces crossed moving from cell (0, 0) to cell (di, dj): ((lower cell), component, direction)."""
    events = [((k - 0.5) / abs(di), 0) for k in range(1, abs(di) + 1)]
    events += [((k - 0.5) / abs(dj), 1) for k in range(1, abs(dj) + 1)]
    events.sort(key=lambda event: (event[0], event[1]))
    stencil = []
    ci, cj = 0, 0
    for _, component in events:
        if component == 0:
            sign = 1 if di > 0 else -1
            lower = (ci, cj) if sign > 0 else (ci - 1, cj)
            ci += sign
        else:
            sign = 1 if dj > 0 else -1
            lower = (ci, cj) if sign > 0 else (ci, cj - 1)
            cj += sign
        stencil.append((lower, component, sign))
    return stencil


def _replica_cost(spec, box, seed, grid_m, p, method, epsilon, condition) -> float:
    config = sample(spec, box, seed)
    if condition:
        config = condition_point_count(config, seed.child(3))
    return TransportService.wp_to_lebesgue(config, grid_m, p, method, epsilon).cost_per_volume


def _binomial_cost(N: int, seed: RngSeed, entry_limit: Optional[int]) -> float:
    config = gen_binomial_blocks(TorusBox(N), N, seed)
    return TransportService.wp_to_lebesgue(config, N, 2.0, EXACT, 0.0, entry_limit).cost_per_volume


def interpolation_constant() -> float:
    """int_0^1 theta'(t)^2 / (1 - theta(t)) dt for theta(t) = 1 - (1 - t)^2."""
    theta = lambda t: 1.0 - (1.0 - t) ** 2
    derivative = lambda t: 2.0 * (1.0 - t)
    value, _ = integrate.quad(lambda t: derivative(t) ** 2 / (1.0 - theta(t)), 0.0, 1.0)
    return float(value)


def lattice_cost(p: float) -> float:
    """Per-volume cost of sending each lattice point to Lebesgue on its own unit cell: int_{[-1/2,1/2]^2} |x|^p dx."""
    value, _ = integrate.dblquad(lambda y, x: (x * x + y * y) ** (p / 2.0), -0.5, 0.5, -0.5, 0.5)
    return float(value)


def perturbation_cost_bound(law, p: float) -> float:
    """Upper bound on the per-volume w_p of a perturbed lattice: ((E|v|^p)^(1/p) + c_p^(1/p))^p."""
    moment = law.moment(p)
    if not math.isfinite(moment):
        return math.inf
    return float((moment ** (1.0 / p) + lattice_cost(p) ** (1.0 / p)) ** p)
