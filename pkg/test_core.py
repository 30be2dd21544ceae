"""
Tests for the core types: seeds, torus geometry, grids, curves and file formats
"""
import numpy as np
import pytest

from hyperlab.core import errors
from hyperlab.core.curves import VarianceCurve
from hyperlab.core.errors import GridTooCoarse, HyperlabError, NonIntegerSide, RadiusTooLarge
from hyperlab.core.geometry import (
    PointConfiguration,
    TorusBox,
    count_in_ball,
    counts_in_balls,
    minimal_image,
    periodic_distance,
)
from hyperlab.core.grids import (
    ScalarFieldGrid,
    VectorFieldGrid,
    check_resolution,
    five_point_laplacian,
    forward_gradient,
    laplacian_symbol,
)
from hyperlab.core.io import coupling_frame, parse_configuration, read_configuration, read_grid, write_configuration, write_grid
from hyperlab.core.parallel import run_replicas
from hyperlab.core.rng import RngSeed


def test_seed_reproducible_and_streams_differ():
    """Same (seed, stream) gives the same draws; neighbouring replicas do not"""
    a = RngSeed(42).generator().uniform(size=5)
    b = RngSeed(42).generator().uniform(size=5)
    c = RngSeed(42).replica(1).generator().uniform(size=5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert RngSeed(42).child(3) == RngSeed(42).child(3)


def test_seed_range_checked():
    with pytest.raises(ValueError):
        RngSeed(-1)


def test_integer_side():
    assert TorusBox(8).integer_side() == 8
    with pytest.raises(NonIntegerSide):
        TorusBox(2.5).integer_side()


def test_minimal_image_and_distance():
    box = TorusBox(10)
    np.testing.assert_allclose(minimal_image(np.array([9.0, -6.0]), box), [-1.0, 4.0])
    assert periodic_distance((0.1, 0.1), (9.9, 9.9), box) == pytest.approx(np.sqrt(0.08))


def test_configuration_validation():
    box = TorusBox(4)
    with pytest.raises(ValueError):
        PointConfiguration(box, np.array([[4.0, 1.0]]))
    with pytest.raises(ValueError):
        PointConfiguration(box, np.array([[1.0, 1.0]]), np.array([0]))


def test_configuration_helpers():
    box = TorusBox(2)
    config = PointConfiguration(box, np.array([[0.5, 0.5], [1.5, 1.5]]), np.array([3, 1]))
    assert config.total_count == 4
    assert config.is_neutral
    assert not config.is_simple
    assert config.expanded().shape == (4, 2)

    shifted = config.shift((1.0, 0.0))
    np.testing.assert_allclose(shifted.positions, [[1.5, 0.5], [0.5, 1.5]])

    jittered = config.with_jitter(0.1, RngSeed(1))
    assert jittered.total_count == 4
    assert jittered.is_simple

    same = PointConfiguration(box, np.array([[0.5, 0.5], [1.5, 1.5]]), np.array([3, 1]))
    assert config.content_hash() == same.content_hash()
    assert config.content_hash() != shifted.content_hash()


def test_counts_in_balls_match_single_counts():
    """The KD-tree batch counter agrees with the direct per-ball count"""
    rng = np.random.default_rng(3)
    box = TorusBox(10)
    config = PointConfiguration(box, rng.uniform(0, 10, size=(200, 2)), rng.integers(1, 4, 200))
    centers = rng.uniform(0, 10, size=(7, 2))
    radii = [0.5, 1.5, 3.0]
    counts = counts_in_balls(config, centers, radii)
    for i, center in enumerate(centers):
        for j, r in enumerate(radii):
            assert counts[i, j] == count_in_ball(config, center, r)


def test_radius_limit():
    config = PointConfiguration(TorusBox(4), np.array([[1.0, 1.0]]))
    with pytest.raises(RadiusTooLarge):
        count_in_ball(config, (0.0, 0.0), 2.0)


def test_grid_resolution_checks():
    box = TorusBox(4)
    assert check_resolution(box, 16, eta=1.0) == pytest.approx(0.25)
    with pytest.raises(GridTooCoarse):
        check_resolution(box, 4)
    with pytest.raises(GridTooCoarse):
        check_resolution(box, 16, eta=0.5)


def test_divergence_of_gradient_is_five_point_laplacian():
    rng = np.random.default_rng(0)
    h = 0.25
    potential = rng.normal(size=(16, 16))
    field = VectorFieldGrid(TorusBox(4), forward_gradient(potential, h))
    np.testing.assert_allclose(field.divergence(), five_point_laplacian(potential, h), atol=1e-10)
    np.testing.assert_allclose(field.curl(), 0.0, atol=1e-10)


def test_laplacian_symbol_diagonalises_stencil():
    rng = np.random.default_rng(1)
    h = 0.5
    values = rng.normal(size=(12, 12))
    lhs = np.fft.fft2(five_point_laplacian(values, h))
    rhs = -laplacian_symbol(12, h) * np.fft.fft2(values)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_scalar_grid_integrate():
    grid = ScalarFieldGrid(TorusBox(2), np.ones((8, 8)))
    assert grid.integrate() == pytest.approx(4.0)
    with pytest.raises(ValueError):
        ScalarFieldGrid(TorusBox(2), np.ones((8, 9)))


def test_variance_curve():
    curve = VarianceCurve.from_arrays([1.0, 2.0, 4.0], [1.0, 0.5, 0.25])
    assert curve.at(2.0).sigma == 0.5
    assert curve.loglog_slope() == pytest.approx(-1.0)
    with pytest.raises(KeyError):
        curve.at(3.0)
    with pytest.raises(ValueError):
        VarianceCurve.from_arrays([2.0, 1.0], [1.0, 1.0])


def test_configuration_file(tmp_path):
    config = PointConfiguration(TorusBox(3), np.array([[0.25, 1.0], [2.5, 2.75]]), np.array([2, 7]))
    path = write_configuration(config, tmp_path / "config.txt")
    loaded = read_configuration(path)
    assert loaded.box.L == 3
    np.testing.assert_array_equal(loaded.positions, config.positions)
    np.testing.assert_array_equal(loaded.multiplicities, config.multiplicities)


def test_configuration_count_mismatch_rejected():
    with pytest.raises(ValueError):
        parse_configuration("L=2.0 count=5\n0.5 0.5 1\n")


def test_grid_file(tmp_path):
    values = np.arange(2 * 8 * 8, dtype=float).reshape(8, 8, 2)
    path = write_grid(VectorFieldGrid(TorusBox(2), values), tmp_path / "field.bin")
    loaded = read_grid(path)
    assert isinstance(loaded, VectorFieldGrid)
    np.testing.assert_array_equal(loaded.values, values)


def test_coupling_frame_sorted():
    frame = coupling_frame({1: [(3, 0.5)], 0: [(2, 0.25), (1, 0.75)]}, grid_m=2)
    assert frame["point_id"].tolist() == [0, 0, 1]
    assert frame[["cell_i", "cell_j"]].values.tolist() == [[0, 1], [1, 0], [1, 1]]


def test_run_replicas_keeps_order():
    assert run_replicas(pow, [(2, i) for i in range(6)], n_jobs=2) == [1, 2, 4, 8, 16, 32]


def test_error_hierarchy():
    names = [name for name in dir(errors) if name[0].isupper() and name != "HyperlabError"]
    assert names
    for name in names:
        assert issubclass(getattr(errors, name), HyperlabError)


def test_periodic_distance_examples():
    box = TorusBox(8)
    assert periodic_distance((0.0, 0.0), (0.0, 0.0), box) == 0.0
    assert periodic_distance((0.5, 0.0), (7.5, 0.0), box) == pytest.approx(1.0)
    assert periodic_distance((0.0, 0.0), (4.0, 4.0), box) == pytest.approx(4.0 * np.sqrt(2.0))


def test_periodic_distance_is_a_metric():
    box = TorusBox(8)
    rng = np.random.default_rng(11)
    for x, y, z in rng.uniform(0.0, 8.0, size=(1000, 3, 2)):
        xy = periodic_distance(x, y, box)
        assert xy == pytest.approx(periodic_distance(y, x, box), abs=1e-12)
        assert xy <= 8.0 / np.sqrt(2.0) + 1e-12
        assert xy <= periodic_distance(x, z, box) + periodic_distance(z, y, box) + 1e-12


def test_count_in_ball_is_translation_equivariant():
    box = TorusBox(16)
    rng = np.random.default_rng(5)
    config = PointConfiguration(box, rng.uniform(0.0, 16.0, size=(256, 2)), rng.integers(1, 4, size=256))
    for _ in range(50):
        center = rng.uniform(0.0, 16.0, size=2)
        t = rng.uniform(-16.0, 16.0, size=2)
        r = rng.uniform(0.5, 7.5)
        moved = count_in_ball(config.shift(t), np.mod(center + t, 16.0), r)
        assert moved == count_in_ball(config, center, r)
