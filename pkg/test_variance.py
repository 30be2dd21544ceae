"""
Tests for the real-space variance diagnostics
"""
import numpy as np
import pytest

from hyperlab.core.curves import VarianceCurve
from hyperlab.core.errors import BadBinning, MissingDyadicRadii, RadiusTooLarge, TooFewReplicas
from hyperlab.core.geometry import TorusBox
from hyperlab.core.rng import RngSeed
from hyperlab.generators.processes import sample_ensemble
from hyperlab.generators.specs import CollapseSpec, LatticeSpec, MixtureComponent, MixtureSpec, PoissonSpec
from hyperlab.services.variance_service import (
    CONVERGING,
    DIVERGING,
    INCONCLUSIVE,
    PairCorrelation,
    VarianceService,
    dyadic_verdict,
    jr_real,
    lens_fraction,
)


@pytest.fixture
def service():
    return VarianceService(n_jobs=1)


def test_lens_fraction_limits():
    assert lens_fraction(0.0, 2.0) == pytest.approx(1.0)
    assert lens_fraction(4.0, 2.0) == pytest.approx(0.0)
    assert lens_fraction(10.0, 2.0) == 0.0
    values = lens_fraction(np.linspace(0.0, 4.0, 9), 2.0)
    assert np.all(np.diff(values) < 0)
    assert jr_real((0.0, 2.0), 1.0) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        lens_fraction(1.0, 0.0)


@pytest.mark.parametrize("terms,verdict", [
    ([1.0, 0.5, 0.25, 0.125], CONVERGING),
    ([1.0, 1.0, 1.0, 1.0], DIVERGING),
    ([0.3, 0.3, 0.3, 0.3], INCONCLUSIVE),
    ([0.0, 0.0, 0.0], CONVERGING),
    ([1.0], INCONCLUSIVE),
])
def test_dyadic_verdict(terms, verdict):
    assert dyadic_verdict(terms)[0] == verdict


def test_dyadic_verdict_exponent():
    _, exponent = dyadic_verdict([1.0, 0.5, 0.25, 0.125])
    assert exponent == pytest.approx(-1.0)


def test_poisson_sigma_close_to_one(service):
    curve = service.estimate_sigma(PoissonSpec(), TorusBox(32), [2.0, 4.0], 200, RngSeed(3), centers_per_replica=8)
    assert curve.sigma == pytest.approx([1.0, 1.0], abs=0.2)
    assert np.all(curve.stderr > 0)
    assert curve.at(4.0).replicas == 200


def test_lattice_sigma_below_poisson(service):
    box = TorusBox(32)
    lattice = service.estimate_sigma(LatticeSpec(), box, [4.0, 8.0], 30, RngSeed(1), centers_per_replica=8)
    assert np.all(lattice.sigma < 0.5)


def test_variance_guards(service):
    with pytest.raises(TooFewReplicas):
        service.estimate_sigma(PoissonSpec(), TorusBox(16), [1.0], 10, RngSeed(0))
    with pytest.raises(RadiusTooLarge):
        service.estimate_sigma(PoissonSpec(), TorusBox(16), [8.0], 30, RngSeed(0))


def test_collapse_counts_are_all_or_nothing(service):
    """Small balls almost never meet two atoms of multiplicity 64"""
    moments = service.count_moments(CollapseSpec(N=8), TorusBox(32), 0.25, 60, RngSeed(2))
    assert moments.second_moment == pytest.approx(64.0 * moments.mean)
    assert moments.replicas == 60
    assert moments.discrepancy >= 0


def test_poisson_variance_profile_matches_ball_area(service):
    radii = [1.0, 2.0]
    variance, stderr = service.variance_profile(PoissonSpec(), TorusBox(32), radii, 200, RngSeed(8), centers_per_replica=8)
    np.testing.assert_allclose(variance, np.pi * np.square(radii), rtol=0.15)
    assert np.all(stderr > 0)


def test_hustar_series_converging(service):
    curve = VarianceCurve.from_arrays([1.0, 2.0, 4.0, 8.0], [1.0, 0.5, 0.25, 0.125])
    report = service.hustar_series(curve, 3)
    assert report.verdict == CONVERGING
    np.testing.assert_allclose(report.partial_sums, [1.0, 1.5, 1.75, 1.875])
    assert report.n_max == 3
    assert report.warnings == []


def test_hustar_series_drops_radii_beyond_half_box(service):
    curve = VarianceCurve.from_arrays([1.0, 2.0, 4.0, 8.0], [1.0, 0.5, 0.25, 0.125])
    report = service.hustar_series(curve, 3, box=TorusBox(8))
    assert report.radii.tolist() == [1.0, 2.0]
    assert len(report.warnings) == 1


def test_hustar_series_clamps_negative_terms(service):
    curve = VarianceCurve.from_arrays([1.0, 2.0, 4.0, 8.0], [1.0, -0.1, 0.2, 0.1])
    report = service.hustar_series(curve, 3)
    assert report.terms[1] == 0.0
    assert any("clamped" in warning for warning in report.warnings)


def test_hustar_series_missing_radius(service):
    curve = VarianceCurve.from_arrays([1.0, 4.0, 8.0], [1.0, 0.5, 0.25])
    with pytest.raises(MissingDyadicRadii):
        service.hustar_series(curve, 3)


def test_sigma_from_pairs(service):
    box = TorusBox(16)
    poisson = sample_ensemble(PoissonSpec(), box, RngSeed(5), 100)
    lattice = sample_ensemble(LatticeSpec(), box, RngSeed(5), 100)
    sigma_poisson = service.sigma_from_pairs(poisson, 2.0)
    sigma_lattice = service.sigma_from_pairs(lattice, 2.0)
    assert sigma_poisson == pytest.approx(1.0, abs=0.2)
    assert 0.0 <= sigma_lattice < 0.5
    assert service.sum_rule_diagnostic(lattice, 2.0) < -0.4


def test_sigma_from_pairs_guards(service):
    box = TorusBox(16)
    with pytest.raises(TooFewReplicas):
        service.sigma_from_pairs(sample_ensemble(LatticeSpec(), box, RngSeed(0), 50), 2.0)
    with pytest.raises(RadiusTooLarge):
        service.sigma_from_pairs(sample_ensemble(LatticeSpec(), box, RngSeed(0), 100), 4.0)


def test_poisson_pair_correlation_is_flat(service):
    ensemble = sample_ensemble(PoissonSpec(), TorusBox(16), RngSeed(8), 100)
    correlation = service.pair_correlation(ensemble, 0.25, 3.0)
    assert len(correlation.rho2) == 12
    assert correlation.v_max == pytest.approx(3.0)
    assert correlation.rho2.mean() == pytest.approx(1.0, abs=0.05)
    assert np.all(np.abs(correlation.rho2 - 1.0) < 0.3)


def test_pair_correlation_binning(service):
    ensemble = sample_ensemble(LatticeSpec(), TorusBox(8), RngSeed(0), 2)
    with pytest.raises(BadBinning):
        service.pair_correlation(ensemble, 0.5, 4.0)
    with pytest.raises(BadBinning):
        PairCorrelation(np.array([0.0, 1.0, 2.0]), np.array([1.0]), 1.0, 1)


def test_dlog_diagnostic():
    curve = VarianceCurve.from_arrays([1.0, 2.0, 4.0, 8.0], [1.0, 0.5, 0.25, 0.125])
    diagnostic = VarianceService.dlog_diagnostic(curve)
    assert diagnostic["radii"] == [2.0, 4.0, 8.0]
    assert diagnostic["tail_sup"] == pytest.approx(0.25 * np.log(4.0))


def test_jr_real_at_one_radius():
    """Two unit disks at distance r share (2/pi)(pi/3 - sqrt(3)/4) of their area"""
    expected = (2.0 / np.pi) * (np.arccos(0.5) - 0.5 * np.sqrt(0.75))
    assert jr_real((1.5, 0.0), 1.5) == pytest.approx(expected)
    assert jr_real((0.0, 2.0), 2.0) == pytest.approx(0.39100, abs=1e-5)


def test_jr_real_is_rotation_invariant_and_lipschitz():
    rng = np.random.default_rng(3)
    r = 1.5
    v = rng.uniform(-4.0, 4.0, size=(10_000, 2))
    w = rng.uniform(-4.0, 4.0, size=(10_000, 2))
    angle = rng.uniform(0.0, 2.0 * np.pi, size=10_000)
    cos, sin = np.cos(angle), np.sin(angle)
    rotated = np.stack([cos * v[:, 0] - sin * v[:, 1], sin * v[:, 0] + cos * v[:, 1]], axis=1)
    np.testing.assert_allclose(jr_real(rotated, r), jr_real(v, r), atol=1e-7)
    gap = np.abs(jr_real(v, r) - jr_real(w, r))
    assert np.all(gap <= 2.0 / r * np.hypot(*(v - w).T) + 1e-12)


def test_mixture_sigma_is_weighted_sum_for_equal_means(service):
    box = TorusBox(16)
    radii = [2.0]
    mixture = MixtureSpec(components=[
        MixtureComponent(weight=1.0, spec=PoissonSpec()),
        MixtureComponent(weight=1.0, spec=LatticeSpec()),
    ])
    poisson = service.estimate_sigma(PoissonSpec(), box, radii, 400, RngSeed(30), centers_per_replica=8)
    lattice = service.estimate_sigma(LatticeSpec(), box, radii, 400, RngSeed(31), centers_per_replica=8)
    mixed = service.estimate_sigma(mixture, box, radii, 400, RngSeed(32), centers_per_replica=8)
    expected = 0.5 * poisson.sigma[0] + 0.5 * lattice.sigma[0]
    assert mixed.sigma[0] == pytest.approx(expected, abs=0.2)


def test_hustar_partial_sums_of_poisson_like_curve(service):
    n_max = 4
    radii = [2.0**m for m in range(n_max + 1)]
    report = service.hustar_series(VarianceCurve.from_arrays(radii, np.ones(len(radii))), n_max)
    assert report.partial_sums[-1] == pytest.approx(n_max + 1)
    assert report.verdict == DIVERGING
