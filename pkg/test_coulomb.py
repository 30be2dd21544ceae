"""
Tests for truncated fields, their energies and the energy inequalities
"""
import dataclasses

import numpy as np
import pytest

from hyperlab.core.errors import CountTooFar, GridTooCoarse, NonNeutral, PreconditionNotMet
from hyperlab.core.geometry import PointConfiguration, TorusBox
from hyperlab.core.rng import RngSeed
from hyperlab.generators.processes import gen_collapse_blocks, gen_perturbed_lattice, gen_stationary_lattice
from hyperlab.generators.specs import GaussianLaw, LatticeSpec
from hyperlab.services.coulomb_service import (
    CoulombService,
    condition_point_count,
    curl_residual,
    disk_potential,
    divergence_residual,
    energy_per_volume,
    f_eta,
    newton_check,
    solve_field,
    spread_charges,
)


def test_f_eta():
    assert f_eta([0.5, 0.0], 1.0) == pytest.approx(np.log(2.0))
    assert f_eta([2.0, 0.0], 1.0) == 0.0
    with pytest.raises(ValueError):
        f_eta([0.5, 0.0], 1.5)


def test_disk_potential_is_continuous():
    a = 0.5
    inside = disk_potential(np.array([a - 1e-9]), a)[0]
    outside = disk_potential(np.array([a + 1e-9]), a)[0]
    assert inside == pytest.approx(outside, abs=1e-6)
    assert disk_potential(np.array([2.0]), a)[0] == pytest.approx(-np.log(2.0))


@pytest.mark.parametrize("eta", [1.0, 0.5])
def test_spread_charges_keep_total_count(eta):
    config = gen_perturbed_lattice(TorusBox(8), GaussianLaw(std=0.2), RngSeed(3))
    density = spread_charges(config, eta, 64)
    assert density.integrate() == pytest.approx(64.0)


@pytest.mark.parametrize("eta", [1.0, 0.5])
def test_field_satisfies_gauss_law_and_is_curl_free(eta):
    config = gen_perturbed_lattice(TorusBox(8), GaussianLaw(std=0.2), RngSeed(1))
    truncated = solve_field(config, eta, 64)
    assert divergence_residual(truncated) < 1e-8
    assert curl_residual(truncated) < 1e-8
    assert truncated.config_hash == config.content_hash()


def test_solve_field_guards():
    rng = np.random.default_rng(0)
    config = PointConfiguration(TorusBox(4), rng.uniform(0, 4, size=(15, 2)))
    with pytest.raises(NonNeutral):
        solve_field(config, 1.0, 32)
    lattice = gen_stationary_lattice(TorusBox(4), RngSeed(0))
    with pytest.raises(GridTooCoarse):
        solve_field(lattice, 0.5, 16)


def test_lattice_energy_invariant_under_lattice_shift():
    config = gen_stationary_lattice(TorusBox(8), RngSeed(2))
    energy = energy_per_volume(solve_field(config, 1.0, 64))
    shifted = energy_per_volume(solve_field(config.shift((1.0, 0.0)), 1.0, 64))
    assert shifted == pytest.approx(energy, rel=1e-8)


def test_collapse_energy_exceeds_lattice_energy():
    box = TorusBox(8)
    lattice = energy_per_volume(solve_field(gen_stationary_lattice(box, RngSeed(0)), 1.0, 64))
    collapse = energy_per_volume(solve_field(gen_collapse_blocks(box, 4, RngSeed(0)), 1.0, 64))
    assert collapse > lattice > 0


def test_truncations_agree_away_from_atoms():
    config = gen_collapse_blocks(TorusBox(8), 4, RngSeed(0), offset=(2.0, 2.0))
    assert newton_check(config, 0.5, 1.0, 64) < 1e-8


def test_condition_point_count():
    box = TorusBox(8)
    rng = np.random.default_rng(1)
    for count in (70, 60):
        config = PointConfiguration(box, rng.uniform(0, 8, size=(count, 2)))
        conditioned = condition_point_count(config, RngSeed(4))
        assert conditioned.total_count == 64
        assert conditioned.is_neutral
    with pytest.raises(CountTooFar):
        condition_point_count(PointConfiguration(box, rng.uniform(0, 8, size=(100, 2))), RngSeed(4))


def test_condition_removes_multiplicity_units():
    config = gen_collapse_blocks(TorusBox(8), 4, RngSeed(0))
    extra = PointConfiguration(config.box, config.positions, config.multiplicities + 1)
    conditioned = condition_point_count(extra, RngSeed(1))
    assert conditioned.total_count == 64
    assert np.all(conditioned.multiplicities <= 17)


def test_coul_estimate_is_reproducible():
    service = CoulombService(n_jobs=1)
    first = service.coul_estimate(LatticeSpec(), TorusBox(4), 1.0, 3, 32, RngSeed(5))
    second = service.coul_estimate(LatticeSpec(), TorusBox(4), 1.0, 3, 32, RngSeed(5))
    assert first.mean == second.mean
    assert first.mean > 0
    assert first.stderr >= 0
    assert len(first.energies) == 3


def test_local_energy_lower_bound():
    box = TorusBox(40)
    config = gen_collapse_blocks(box, 10, RngSeed(0), offset=(5.0, 5.0))
    truncated = solve_field(config, 1.0, 160)
    bound = CoulombService.local_energy_lower_bound_check(config, truncated, (5.0, 5.0), 10)
    assert bound.lhs > 0
    assert bound.rhs_shape == pytest.approx(10**4 * np.log(10))
    assert bound.ratio > 0
    with pytest.raises(PreconditionNotMet):
        CoulombService.local_energy_lower_bound_check(config, truncated, (5.0, 5.0), 5)
    with pytest.raises(PreconditionNotMet):
        CoulombService.local_energy_lower_bound_check(config, truncated, (10.0, 10.0), 10)


def test_discrepancy_bound():
    service = CoulombService(n_jobs=1)
    bound = service.discrepancy_bound_check(LatticeSpec(), TorusBox(8), 1.0, 2.0, 30, RngSeed(2), 64)
    assert bound.rhs > 0
    assert bound.lhs >= 0
    assert bound.ratio == pytest.approx(bound.lhs / bound.rhs)


def test_eta_comparison():
    config = gen_stationary_lattice(TorusBox(4), RngSeed(3))
    comparison = CoulombService.eta_comparison_check(config, 64)
    assert sorted(comparison.energies) == [0.25, 0.5, 1.0]
    assert comparison.energies[0.25] > comparison.energies[1.0]
    assert comparison.ratio_constant > 0
    assert [row["eta"] for row in comparison.to_rows()] == [0.25, 0.5, 1.0]


@pytest.mark.parametrize("eta", [1.0, 0.5])
def test_field_follows_shifts_smaller_than_the_lattice_spacing(eta):
    config = gen_perturbed_lattice(TorusBox(8), GaussianLaw(std=0.2), RngSeed(3))
    h = 8 / 64
    base = solve_field(config, eta, 64).grid
    moved = solve_field(config.shift((3 * h, 5 * h)), eta, 64).grid
    scale = np.abs(base.values).max()
    np.testing.assert_allclose(moved.values, base.shifted((3, 5)).values, rtol=0.0, atol=1e-8 * scale)


def test_energy_is_quadratic_in_the_field():
    truncated = solve_field(gen_stationary_lattice(TorusBox(8), RngSeed(1)), 1.0, 64)
    energy = energy_per_volume(truncated)
    assert energy > 0
    for a in (0.0, -1.0, 3.0):
        scaled = dataclasses.replace(truncated, grid=truncated.grid.scaled(a))
        assert energy_per_volume(scaled) == pytest.approx(a * a * energy)
