"""Samplers for the stationary point processes on a periodic box."""

import logging
from typing import Optional, Sequence

import numpy as np

from hyperlab.core.errors import BlockMismatch, EmptyMixture, IntensityOverflow
from hyperlab.core.geometry import PointConfiguration, TorusBox
from hyperlab.core.rng import RngSeed
from hyperlab.generators.specs import (
    BinomialSpec,
    CollapseSpec,
    GaussianLaw,
    LatticeSpec,
    MixtureSpec,
    PerturbedLatticeSpec,
    PoissonSpec,
    PowerTailLaw,
    ProcessSpec,
    ZeroLaw,
)

MAX_EXPECTED_COUNT = 2**31


def _lattice_sites(L: int) -> np.ndarray:
    axis = np.arange(L, dtype=float)
    x, y = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([x.ravel(), y.ravel()])


def _check_blocks(box: TorusBox, N: int) -> int:
    L = box.integer_side()
    if N < 1 or L % N != 0:
        raise BlockMismatch(f"block side N={N} must divide L={L}")
    return L


def gen_poisson(box: TorusBox, intensity: float, seed: RngSeed) -> PointConfiguration:
    expected = intensity * box.area
    if not expected < MAX_EXPECTED_COUNT:
        raise IntensityOverflow(f"expected count {expected:.3g} exceeds {MAX_EXPECTED_COUNT}")
    rng = seed.generator()
    count = int(rng.poisson(expected))
    return PointConfiguration(box, box.uniform_points(rng, count))


def gen_stationary_lattice(box: TorusBox, seed: RngSeed) -> PointConfiguration:
    L = box.integer_side()
    tau = seed.generator().uniform(0.0, 1.0, 2)
    return PointConfiguration.from_unwrapped(box, _lattice_sites(L) + tau)


def sample_displacements(law, rng: np.random.Generator, count: int) -> np.ndarray:
    if isinstance(law, ZeroLaw):
        return np.zeros((count, 2))
    if isinstance(law, GaussianLaw):
        return rng.normal(0.0, law.std, size=(count, 2))
    if isinstance(law, PowerTailLaw):
        radii = law.scale * _invert_power_tail(law, rng.uniform(0.0, 1.0, count))
        angles = rng.uniform(0.0, 2.0 * np.pi, count)
        return np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    raise TypeError(f"unknown displacement law {law!r}")


def _invert_power_tail(law: PowerTailLaw, u: np.ndarray) -> np.ndarray:
    """Solve radial_cdf(1/w - 1) = u for w in (0, 1] by bisection, return s = 1/w - 1."""
    lo = np.zeros_like(u)
    hi = np.ones_like(u)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        cdf = law.radial_cdf(1.0 / mid - 1.0)
        # cdf decreases in w
        above = cdf > u
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    w = np.maximum(0.5 * (lo + hi), 1e-300)
    return 1.0 / w - 1.0


def gen_perturbed_lattice(box: TorusBox, law, seed: RngSeed) -> PointConfiguration:
    """Stationary lattice plus i.i.d. displacements, wrapped mod L.

    tau is drawn first from the same stream, so the zero law reproduces
    gen_stationary_lattice for the same seed.
    """
    L = box.integer_side()
    rng = seed.generator()
    tau = rng.uniform(0.0, 1.0, 2)
    sites = _lattice_sites(L) + tau
    return PointConfiguration.from_unwrapped(box, sites + sample_displacements(law, rng, len(sites)))


def gen_collapse_blocks(
    box: TorusBox,
    N: int,
    seed: RngSeed,
    jitter: float = 0.0,
    offset: Optional[Sequence[float]] = None,
) -> PointConfiguration:
    """Every lattice point of an N x N block sent to the block center.

    The lattice shift tau and a uniform block offset in {0..N-1}^2 together
    make the block centers uniform on [0, N)^2 + N Z^2. Output has (L/N)^2
    atoms of multiplicity N^2.
    """
    if N < 2:
        raise BlockMismatch(f"collapse blocks need N >= 2, got {N}")
    L = _check_blocks(box, N)
    rng = seed.generator()
    tau = rng.uniform(0.0, 1.0, 2)
    block_offset = rng.integers(0, N, size=2)
    if offset is None:
        origin = tau + block_offset + 0.5 * (N - 1)
    else:
        origin = np.asarray(offset, dtype=float)
    blocks = L // N
    centers = N * _lattice_sites(blocks) + origin
    config = PointConfiguration.from_unwrapped(box, centers, np.full(len(centers), N * N, dtype=np.int64))
    if jitter > 0:
        config = config.with_jitter(jitter, seed.child(1))
    return config


def gen_binomial_blocks(
    box: TorusBox,
    N: int,
    seed: RngSeed,
    shift: Optional[Sequence[float]] = None,
) -> PointConfiguration:
    """N^2 i.i.d. uniform points in each N x N block, then a uniform global shift in [0, N)^2."""
    L = _check_blocks(box, N)
    rng = seed.generator()
    blocks = L // N
    corners = np.repeat(N * _lattice_sites(blocks), N * N, axis=0)
    points = corners + rng.uniform(0.0, N, size=corners.shape)
    if shift is None:
        shift = rng.uniform(0.0, N, 2)
    return PointConfiguration.from_unwrapped(box, points + np.asarray(shift, dtype=float))


def gen_mixture(spec: MixtureSpec, box: TorusBox, seed: RngSeed) -> PointConfiguration:
    if not spec.components:
        raise EmptyMixture("mixture has no components")
    weights = spec.normalized_weights()
    index = int(seed.generator().choice(len(weights), p=weights))
    return sample(spec.components[index].spec, box, seed.child(1))


def sample(spec: ProcessSpec, box: TorusBox, seed: RngSeed) -> PointConfiguration:
    """Draw one configuration of `spec` on `box`."""
    if isinstance(spec, PoissonSpec):
        return gen_poisson(box, spec.intensity, seed)
    if isinstance(spec, LatticeSpec):
        return gen_stationary_lattice(box, seed)
    if isinstance(spec, PerturbedLatticeSpec):
        return gen_perturbed_lattice(box, spec.law, seed)
    if isinstance(spec, CollapseSpec):
        return gen_collapse_blocks(box, spec.N, seed, jitter=spec.jitter)
    if isinstance(spec, BinomialSpec):
        return gen_binomial_blocks(box, spec.N, seed)
    if isinstance(spec, MixtureSpec):
        return gen_mixture(spec, box, seed)
    raise TypeError(f"unknown process spec {spec!r}")


def sample_ensemble(spec: ProcessSpec, box: TorusBox, seed: RngSeed, replicas: int):
    logging.debug(f"Sampling {replicas} replicas on L={box.L}")
    return [sample(spec, box, seed.replica(i)) for i in range(replicas)]
