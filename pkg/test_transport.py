"""
Tests for transport costs to Lebesgue and the field/transport bridges
"""
import numpy as np
import pytest

from hyperlab.core.errors import DensityUnbounded, InstanceTooLarge, MissingCoupling, Unbalanced
from hyperlab.core.geometry import PointConfiguration, TorusBox
from hyperlab.core.rng import RngSeed
from hyperlab.generators.processes import _lattice_sites, gen_perturbed_lattice, gen_stationary_lattice
from hyperlab.generators.specs import GaussianLaw, LatticeSpec, PowerTailLaw
from hyperlab.services.coulomb_service import solve_field
from hyperlab.services.transport_service import (
    ENTROPIC,
    EXACT,
    TransportResult,
    TransportService,
    cost_matrix,
    interpolation_constant,
    lattice_cost,
    perturbation_cost_bound,
)


def centered_lattice(L: int) -> PointConfiguration:
    """Lattice points at the centers of the unit cells"""
    return PointConfiguration(TorusBox(L), _lattice_sites(L) + 0.5)


@pytest.fixture
def service():
    return TransportService(n_jobs=1)


def test_cost_matrix_uses_minimal_image():
    costs = cost_matrix(np.array([[0.1, 0.1]]), TorusBox(4), 4, 2.0)
    assert costs.shape == (1, 16)
    assert costs[0, 15] == pytest.approx(0.72)
    assert costs[0, 0] == pytest.approx(0.32)


def test_centered_lattice_has_zero_cost(service):
    result = service.w2_to_lebesgue(centered_lattice(4), 4)
    assert result.cost_per_volume == pytest.approx(0.0, abs=1e-12)
    assert result.method == EXACT


def test_centered_lattice_on_finer_cells(service):
    """Every point spreads over its four surrounding half cells"""
    config = centered_lattice(4)
    result = service.w2_to_lebesgue(config, 8)
    assert result.cost_per_volume == pytest.approx(0.125)
    row_error, column_error = result.marginal_errors(config.multiplicities.astype(float))
    assert row_error < 1e-8
    assert column_error < 1e-8
    w1 = service.w1_to_lebesgue(config, 8)
    assert w1.cost_per_volume == pytest.approx(np.sqrt(0.125))


def test_entropic_cost_close_to_exact(service):
    config = centered_lattice(4)
    exact = service.w2_to_lebesgue(config, 8).cost_per_volume
    entropic = service.w2_to_lebesgue(config, 8, method=ENTROPIC, epsilon=0.01)
    assert entropic.epsilon == 0.01
    assert exact - 1e-9 <= entropic.cost_per_volume <= exact + 0.05


def test_transport_guards(service):
    rng = np.random.default_rng(0)
    with pytest.raises(Unbalanced):
        service.w2_to_lebesgue(PointConfiguration(TorusBox(4), rng.uniform(0, 4, size=(15, 2))), 4)
    with pytest.raises(ValueError):
        service.w2_to_lebesgue(centered_lattice(4), 2)
    with pytest.raises(InstanceTooLarge):
        service.w2_to_lebesgue(centered_lattice(4), 4, entry_limit=10)
    with pytest.raises(ValueError):
        service.w2_to_lebesgue(centered_lattice(4), 4, method="auction")


def test_reference_constants():
    assert lattice_cost(2) == pytest.approx(1.0 / 6.0)
    assert interpolation_constant() == pytest.approx(4.0)
    expected = (np.sqrt(0.02) + np.sqrt(1.0 / 6.0)) ** 2
    assert perturbation_cost_bound(GaussianLaw(std=0.1), 2) == pytest.approx(expected, rel=1e-6)
    assert perturbation_cost_bound(PowerTailLaw(alpha=1.5), 2) == float("inf")


def test_lattice_cost_per_volume_bounds(service):
    """With half-unit cells each lattice point pays between 1/8 and 1/4"""
    scaling = service.wp_per_unit_volume(LatticeSpec(), [8, 4], 2.0, 2, RngSeed(3))
    assert scaling.sides == [4.0, 8.0]
    for mean in scaling.means:
        assert 0.125 - 1e-9 <= mean <= 0.25 + 1e-9
    assert scaling.verdict in ("finite", "growing")


def test_akt_scaling_shape(service):
    scaling = service.akt_scaling([4, 8, 16], 2, RngSeed(1))
    assert scaling.N == [4, 8, 16]
    assert all(mean > 0 for mean in scaling.means)
    assert 0.0 <= scaling.r_squared <= 1.0


def test_spread_coupling_field_has_exact_divergence(service):
    config = gen_stationary_lattice(TorusBox(4), RngSeed(2))
    result = service.spread_to_lebesgue(config, 1.0, 16)
    assert result.source_density is not None
    assert result.source_density.sum() * (4 / 16) ** 2 == pytest.approx(16.0)
    coupled = service.field_from_coupling(result)
    assert coupled.divergence_residual < 1e-6
    assert coupled.energy >= 0
    assert coupled.density_bound >= 1.0
    with pytest.raises(ValueError):
        service.field_from_coupling(result, grid_n=32)


def test_field_from_coupling_guards(service):
    atomic = service.w2_to_lebesgue(centered_lattice(4), 4)
    with pytest.raises(DensityUnbounded):
        service.field_from_coupling(atomic)
    bare = TransportResult(0.0, 2.0, EXACT, 0.0, TorusBox(4), 4)
    with pytest.raises(MissingCoupling):
        service.field_from_coupling(bare)
    with pytest.raises(MissingCoupling):
        bare.marginal_errors(np.ones(16))


def test_transport_bound_from_field(service):
    config = gen_perturbed_lattice(TorusBox(8), GaussianLaw(std=0.1), RngSeed(6))
    truncated = solve_field(config, 1.0, 64)
    bound = service.transport_bound_from_field(truncated, config)
    assert bound.bound >= 1.0
    assert bound.measured > 0
    assert bound.holds


def test_single_point_on_unit_torus(service):
    """Transporting one atom onto the unit torus costs the second moment of the square, 1/6"""
    config = PointConfiguration(TorusBox(1), np.array([[0.5, 0.5]]))
    result = service.w2_to_lebesgue(config, 64)
    assert result.cost_per_volume == pytest.approx(1.0 / 6.0, rel=0.02)


def test_coupling_field_energy_below_density_times_cost(service):
    """One unit of mass moved diagonally by one cell on L = 8, everything else at rest"""
    box, m = TorusBox(8), 8
    density = np.ones((m, m))
    density[0, 0], density[1, 1] = 2.0, 0.0
    coupling = {cell: [(cell, 1.0)] for cell in range(m * m) if cell != m + 1}
    coupling[0] = [(0, 1.0), (m + 1, 1.0)]
    cost = 2.0 / box.area
    result = TransportResult(cost, 2.0, EXACT, 0.0, box, m, coupling, density)
    coupled = service.field_from_coupling(result)
    assert coupled.divergence_residual == pytest.approx(0.0, abs=1e-12)
    assert coupled.energy == pytest.approx(2.0 / box.area)
    assert coupled.density_bound == 2.0
    assert coupled.rhs == pytest.approx(2.0 * cost)
    assert coupled.holds
    assert coupled.energy <= coupled.density_bound * result.cost_per_volume
