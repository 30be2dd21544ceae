"""
Tests for process specs and samplers
"""
import numpy as np
import pytest
from scipy import stats

from hyperlab.core.errors import BlockMismatch, EmptyMixture, IntensityOverflow, InvalidConfig
from hyperlab.core.geometry import TorusBox, count_in_ball
from hyperlab.core.rng import RngSeed
from hyperlab.generators.processes import (
    gen_binomial_blocks,
    gen_collapse_blocks,
    gen_perturbed_lattice,
    gen_poisson,
    gen_stationary_lattice,
    sample,
    sample_displacements,
    sample_ensemble,
)
from hyperlab.generators.specs import (
    BinomialSpec,
    CollapseSpec,
    GaussianLaw,
    LatticeSpec,
    MixtureSpec,
    PerturbedLatticeSpec,
    PoissonSpec,
    PowerTailLaw,
    ZeroLaw,
    block_sizes,
    dyadic_collapse_mixture,
    has_exact_count,
    parse_process_spec,
    spec_label,
    spec_to_dict,
)


def test_parse_process_spec():
    spec = parse_process_spec('{"kind": "collapse", "N": 4}')
    assert isinstance(spec, CollapseSpec)
    assert spec.N == 4
    perturbed = parse_process_spec({"kind": "perturbed", "law": {"kind": "power_tail", "alpha": 1.5}})
    assert isinstance(perturbed.law, PowerTailLaw)
    assert parse_process_spec(spec_to_dict(perturbed)) == perturbed


@pytest.mark.parametrize("document", [
    '{"kind": "ginibre"}',
    '{"kind": "collapse", "N": 1}',
    '{"kind": "poisson", "intensity": -1}',
    "not json",
])
def test_parse_process_spec_rejects(document):
    with pytest.raises(InvalidConfig):
        parse_process_spec(document)


def test_spec_labels_and_blocks():
    assert spec_label(PoissonSpec()) == "poisson"
    assert spec_label(CollapseSpec(N=8)) == "collapse(N=8)"
    assert spec_label(PerturbedLatticeSpec(law=GaussianLaw(std=0.2))) == "perturbed(gaussian std=0.2)"
    mixture = dyadic_collapse_mixture(3)
    assert block_sizes(mixture) == [2, 4, 8]
    assert has_exact_count(mixture)
    assert not has_exact_count(PoissonSpec())


def test_dyadic_mixture_weights():
    mixture = dyadic_collapse_mixture(3, tail_exponent=1.5)
    expected = np.array([1.0 / (4.0**j * j**1.5) for j in (1, 2, 3)])
    np.testing.assert_allclose(mixture.normalized_weights(), expected / expected.sum())


def test_law_moments():
    assert ZeroLaw().moment(2) == 0.0
    assert GaussianLaw(std=1.0).moment(2) == pytest.approx(2.0)
    tail = PowerTailLaw(alpha=2.0)
    assert tail.moment(1) == pytest.approx(2.0, rel=1e-6)
    assert tail.moment(3) == float("inf")


def test_poisson_count_and_overflow():
    config = gen_poisson(TorusBox(32), 1.0, RngSeed(1))
    assert abs(config.total_count - 1024) < 5 * 32
    assert config.is_simple
    with pytest.raises(IntensityOverflow):
        gen_poisson(TorusBox(100), 1e12, RngSeed(1))


def test_stationary_lattice_is_shifted_grid():
    config = gen_stationary_lattice(TorusBox(6), RngSeed(5))
    assert config.total_count == 36
    assert config.is_neutral
    fractional = np.mod(config.positions - config.positions[0], 1.0)
    fractional = np.minimum(fractional, 1.0 - fractional)
    np.testing.assert_allclose(fractional, 0.0, atol=1e-9)


def test_zero_law_reproduces_lattice():
    box = TorusBox(8)
    lattice = gen_stationary_lattice(box, RngSeed(11))
    perturbed = gen_perturbed_lattice(box, ZeroLaw(), RngSeed(11))
    np.testing.assert_allclose(perturbed.positions, lattice.positions)


def test_collapse_blocks_with_fixed_offset():
    config = gen_collapse_blocks(TorusBox(8), 4, RngSeed(0), offset=(1.5, 1.5))
    assert sorted(map(tuple, config.positions.tolist())) == [(1.5, 1.5), (1.5, 5.5), (5.5, 1.5), (5.5, 5.5)]
    assert config.multiplicities.tolist() == [16, 16, 16, 16]
    assert config.is_neutral


def test_collapse_atoms_and_jitter():
    config = sample(CollapseSpec(N=4), TorusBox(16), RngSeed(2))
    assert len(config) == 16
    assert set(config.multiplicities.tolist()) == {16}
    jittered = sample(CollapseSpec(N=4, jitter=0.2), TorusBox(16), RngSeed(2))
    assert jittered.is_simple
    assert jittered.total_count == 256


def test_block_mismatch():
    with pytest.raises(BlockMismatch):
        gen_collapse_blocks(TorusBox(10), 4, RngSeed(0))
    with pytest.raises(BlockMismatch):
        gen_binomial_blocks(TorusBox(10), 3, RngSeed(0))


def test_binomial_blocks_hold_exactly_n_squared_points():
    N = 4
    config = gen_binomial_blocks(TorusBox(16), N, RngSeed(3), shift=(0.0, 0.0))
    blocks = np.floor(config.positions / N).astype(int)
    _, counts = np.unique(blocks, axis=0, return_counts=True)
    assert len(counts) == 16
    assert set(counts.tolist()) == {N * N}


def test_mixture_sampling():
    with pytest.raises(EmptyMixture):
        sample(MixtureSpec(), TorusBox(8), RngSeed(0))
    config = sample(dyadic_collapse_mixture(2), TorusBox(8), RngSeed(4))
    assert config.total_count == 64
    assert set(config.multiplicities.tolist()) <= {4, 16}


def test_sampling_is_deterministic():
    spec = BinomialSpec(N=2)
    a = sample(spec, TorusBox(8), RngSeed(9))
    b = sample(spec, TorusBox(8), RngSeed(9))
    c = sample(spec, TorusBox(8), RngSeed(9, stream=1))
    assert a.content_hash() == b.content_hash()
    assert a.content_hash() != c.content_hash()
    assert sample(LatticeSpec(), TorusBox(4), RngSeed(9)).total_count == 16


def test_power_tail_displacements_are_finite():
    rng = np.random.default_rng(0)
    displacements = sample_displacements(PowerTailLaw(alpha=1.5), rng, 1000)
    assert displacements.shape == (1000, 2)
    assert np.all(np.isfinite(displacements))
    # median of the radial law is well below 10 for alpha = 1.5
    assert np.median(np.hypot(displacements[:, 0], displacements[:, 1])) < 10.0


@pytest.mark.parametrize("spec", [
    PoissonSpec(),
    LatticeSpec(),
    PerturbedLatticeSpec(law=GaussianLaw(std=0.3)),
    CollapseSpec(N=4),
    BinomialSpec(N=4),
])
def test_mean_count_matches_box_area(spec):
    counts = np.array([config.total_count for config in sample_ensemble(spec, TorusBox(8), RngSeed(12), 200)], dtype=float)
    stderr = counts.std(ddof=1) / np.sqrt(len(counts))
    assert abs(counts.mean() - 64.0) <= 3.0 * stderr + 1e-9


@pytest.mark.parametrize("spec", [
    PoissonSpec(),
    PerturbedLatticeSpec(law=GaussianLaw(std=0.2)),
    CollapseSpec(N=2),
])
def test_ball_counts_are_stationary(spec):
    box = TorusBox(8)
    center = np.array([1.0, 1.0])
    shifted = np.mod(center + np.array([2.3, 5.6]), 8.0)
    here = [count_in_ball(config, center, 1.5) for config in sample_ensemble(spec, box, RngSeed(20), 500)]
    there = [count_in_ball(config, shifted, 1.5) for config in sample_ensemble(spec, box, RngSeed(21), 500)]
    assert stats.ks_2samp(here, there).pvalue > 0.01
