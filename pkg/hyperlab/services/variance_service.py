"""Real-space hyperuniformity diagnostics: number variance, the dyadic HU* series,
and the pair-correlation form of sigma(r)."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from hyperlab.core.curves import VarianceCurve
from hyperlab.core.errors import BadBinning, MissingDyadicRadii, RadiusTooLarge, TooFewReplicas
from hyperlab.core.geometry import PointConfiguration, TorusBox, check_radius, counts_in_balls, minimal_image
from hyperlab.core.parallel import run_replicas, thread_cap
from hyperlab.core.rng import RngSeed
from hyperlab.generators.processes import sample

MIN_REPLICAS = 30
MIN_PAIR_ENSEMBLE = 100

CONVERGING = "converging"
DIVERGING = "diverging"
INCONCLUSIVE = "inconclusive"


def lens_fraction(distance, r: float):
    """Normalised lens overlap |B_r(0) ∩ B_r(v)| / |B_r| as a function of |v|."""
    if r <= 0:
        raise ValueError(f"radius must be positive, got {r}")
    u = np.clip(np.abs(np.asarray(distance, dtype=float)) / (2.0 * r), 0.0, 1.0)
    lens = (2.0 / np.pi) * (np.arccos(u) - u * np.sqrt(1.0 - u * u))
    return float(lens) if np.ndim(lens) == 0 else lens


def jr_real(v, r: float):
    """j_r(v) for a 2D vector, or an array of vectors with trailing axis 2."""
    v = np.asarray(v, dtype=float)
    return lens_fraction(np.hypot(v[..., 0], v[..., 1]), r)


def dyadic_verdict(terms: Sequence[float], exponent_threshold: float = -0.2, floor: float = 0.5, window: int = 3):
    """Classify a nonnegative dyadic series sum_m t_m (t_m at scale 2^m).

    Returns (verdict, fitted tail exponent). The exponent is the slope of
    log2 t_m against m over the upper half of the series (at least `window` terms).
    """
    terms = np.asarray(terms, dtype=float)
    if len(terms) < 2:
        return INCONCLUSIVE, float("nan")
    tail = terms[-max(window, len(terms) // 2):]
    if np.all(tail <= 0.0):
        return CONVERGING, float("-inf")
    m = np.arange(len(tail), dtype=float)
    exponent = float(np.polyfit(m, np.log2(np.maximum(tail, 1e-300)), 1)[0])
    if exponent < exponent_threshold:
        return CONVERGING, exponent
    if np.all(terms[-window:] >= floor):
        return DIVERGING, exponent
    return INCONCLUSIVE, exponent


def _jackknife_variance(samples: np.ndarray):
    """Sample variance along axis 0 and its delete-one jackknife standard error."""
    n = samples.shape[0]
    centered = samples - samples.mean(axis=0)
    s1 = centered.sum(axis=0)
    s2 = (centered**2).sum(axis=0)
    variance = (s2 - s1**2 / n) / (n - 1)
    s1_loo = s1 - centered
    s2_loo = s2 - centered**2
    variance_loo = (s2_loo - s1_loo**2 / (n - 1)) / (n - 2)
    stderr = np.sqrt((n - 1) / n * ((variance_loo - variance_loo.mean(axis=0)) ** 2).sum(axis=0))
    return variance, variance_loo, stderr


def _replica_counts(spec, box: TorusBox, seed: RngSeed, radii: np.ndarray, centers: int) -> np.ndarray:
    config = sample(spec, box, seed)
    positions = box.uniform_points(seed.child(2).generator(), centers)
    return counts_in_balls(config, positions, radii)


def _pair_weights(config: PointConfiguration, reach: float):
    """Distances and multiplicity weights of unordered pairs of distinct atoms closer than `reach`."""
    if len(config) < 2:
        return np.zeros(0), np.zeros(0)
    pairs = config.tree().query_pairs(reach, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros(0), np.zeros(0)
    delta = minimal_image(config.positions[pairs[:, 0]] - config.positions[pairs[:, 1]], config.box)
    distances = np.hypot(delta[:, 0], delta[:, 1])
    weights = config.multiplicities[pairs[:, 0]] * config.multiplicities[pairs[:, 1]]
    return distances, weights.astype(float)


@dataclass
class HuStarReport:
    partial_sums: np.ndarray
    terms: np.ndarray
    radii: np.ndarray
    n_max: int
    verdict: str
    slope: float
    tail_exponent: float
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "radii": self.radii.tolist(),
            "terms": self.terms.tolist(),
            "partial_sums": self.partial_sums.tolist(),
            "n_max": self.n_max,
            "verdict": self.verdict,
            "slope": self.slope,
            "tail_exponent": self.tail_exponent,
            "warnings": list(self.warnings),
        }


@dataclass
class CountMoments:
    r: float
    mean: float
    variance: float
    second_moment: float
    discrepancy: float
    variance_stderr: float
    discrepancy_stderr: float
    replicas: int


@dataclass
class PairCorrelation:
    """Radially binned two-point correlation rho_2, normalised to 1 at large separation."""

    edges: np.ndarray
    rho2: np.ndarray
    intensity: float
    replicas: int

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0) or edges[0] < 0:
            raise BadBinning("bin edges must be a nonnegative increasing sequence")
        if len(self.rho2) != len(edges) - 1:
            raise BadBinning(f"{len(edges) - 1} bins but {len(self.rho2)} values")
        self.edges = edges
        self.rho2 = np.asarray(self.rho2, dtype=float)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def v_max(self) -> float:
        return float(self.edges[-1])


class VarianceService:
    def __init__(self, n_jobs: Optional[int] = None):
        self.n_jobs = n_jobs or thread_cap()

    def _count_samples(self, spec, box, radii, replicas, centers_per_replica, seed) -> np.ndarray:
        arguments = [(spec, box, seed.replica(i), radii, centers_per_replica) for i in range(replicas)]
        return np.asarray(run_replicas(_replica_counts, arguments, self.n_jobs), dtype=float)

    def variance_profile(
        self,
        spec,
        box: TorusBox,
        radii: Sequence[float],
        replicas: int,
        seed: RngSeed,
        centers_per_replica: int = 1,
    ):
        """Var[count in B_r] per radius with jackknife stderr.

        Each center slot is an independent draw of the count law; the
        per-slot variances are averaged.
        """
        radii = np.asarray(radii, dtype=float)
        if replicas < MIN_REPLICAS:
            raise TooFewReplicas(f"need at least {MIN_REPLICAS} replicas, got {replicas}")
        for r in radii:
            check_radius(r, box)
        counts = self._count_samples(spec, box, radii, replicas, centers_per_replica, seed)
        per_slot, variance_loo, _ = _jackknife_variance(counts)
        variance = per_slot.mean(axis=0)
        theta_loo = variance_loo.mean(axis=1)
        stderr = np.sqrt((replicas - 1) / replicas * ((theta_loo - theta_loo.mean(axis=0)) ** 2).sum(axis=0))
        return variance, stderr

    def estimate_sigma(
        self,
        spec,
        box: TorusBox,
        radii: Sequence[float],
        replicas: int,
        seed: RngSeed,
        centers_per_replica: int = 1,
    ) -> VarianceCurve:
        radii = np.asarray(sorted(radii), dtype=float)
        variance, stderr = self.variance_profile(spec, box, radii, replicas, seed, centers_per_replica)
        area = np.pi * radii**2
        logging.info(f"Estimated sigma at {len(radii)} radii from {replicas} replicas on L={box.L:g}")
        return VarianceCurve.from_arrays(radii, variance / area, stderr / area, replicas)

    def count_moments(self, spec, box: TorusBox, r: float, replicas: int, seed: RngSeed) -> CountMoments:
        if replicas < MIN_REPLICAS:
            raise TooFewReplicas(f"need at least {MIN_REPLICAS} replicas, got {replicas}")
        check_radius(r, box)
        counts = self._count_samples(spec, box, np.array([r]), replicas, 1, seed)[:, 0, 0]
        excess = (counts - np.pi * r * r) ** 2
        return CountMoments(
            r=float(r),
            mean=float(counts.mean()),
            variance=float(counts.var(ddof=1)),
            second_moment=float((counts**2).mean()),
            discrepancy=float(excess.mean()),
            variance_stderr=float(_jackknife_variance(counts[:, None])[2][0]),
            discrepancy_stderr=float(excess.std(ddof=1) / np.sqrt(replicas)),
            replicas=replicas,
        )

    def hustar_series(
        self,
        curve: VarianceCurve,
        n_max: int,
        box: Optional[TorusBox] = None,
        exponent_threshold: float = -0.2,
        floor: float = 0.5,
    ) -> HuStarReport:
        warnings = []
        exponents = list(range(n_max + 1))
        if box is not None:
            kept = [m for m in exponents if 2.0**m < box.L / 2.0]
            if len(kept) < len(exponents):
                message = f"dropped dyadic radii {[2 ** m for m in exponents if m not in kept]} (>= L/2 = {box.L / 2:g})"
                logging.warning(message)
                warnings.append(message)
            exponents = kept
        radii = np.array([2.0**m for m in exponents])
        missing = [r for r in radii if not np.any(np.isclose(curve.radii, r))]
        if missing or len(radii) == 0:
            raise MissingDyadicRadii(f"curve lacks dyadic radii {missing or '2^0..2^n_max'}")
        terms = np.array([curve.at(r).sigma for r in radii])
        if np.any(terms < 0):
            message = f"clamped negative sigma estimates at r={radii[terms < 0].tolist()} to 0"
            logging.warning(message)
            warnings.append(message)
            terms = np.maximum(terms, 0.0)
        partial_sums = np.cumsum(terms)
        verdict, exponent = dyadic_verdict(terms, exponent_threshold, floor)
        positive = partial_sums > 0
        slope = (
            float(np.polyfit(np.log(np.arange(1, len(terms) + 1)[positive]), np.log(partial_sums[positive]), 1)[0])
            if positive.sum() >= 2
            else float("nan")
        )
        if verdict == INCONCLUSIVE:
            logging.info(f"HU* verdict inconclusive (tail exponent {exponent:.3f})")
        return HuStarReport(partial_sums, terms, radii, max(exponents), verdict, slope, exponent, warnings)

    def sigma_from_pairs(self, ensemble: Sequence[PointConfiguration], r: float) -> float:
        """sigma(r) = (1/L^2) E[sum_{x,y} j_r(x - y)] - |B_r| (E N / L^2)^2.

        The diagonal (x = y, including coincident copies of one atom) contributes
        the leading 1 at unit intensity; the off-diagonal part is the empirical
        integral of j_r against the correlation measure. Pair separations enter
        j_r exactly.
        """
        if len(ensemble) < MIN_PAIR_ENSEMBLE:
            raise TooFewReplicas(f"need at least {MIN_PAIR_ENSEMBLE} configurations, got {len(ensemble)}")
        box = ensemble[0].box
        if not 0 < r < box.L / 4.0:
            raise RadiusTooLarge(f"radius {r} must lie in (0, L/4 = {box.L / 4:g})")
        pair_sums = []
        counts = []
        for config in ensemble:
            distances, weights = _pair_weights(config, 2.0 * r)
            diagonal = float((config.multiplicities.astype(float) ** 2).sum())
            pair_sums.append(diagonal + 2.0 * float(np.dot(weights, lens_fraction(distances, r))))
            counts.append(config.total_count)
        intensity = np.mean(counts) / box.area
        return float(np.mean(pair_sums) / box.area - np.pi * r * r * intensity**2)

    def pair_correlation(self, ensemble: Sequence[PointConfiguration], bin_width: float, v_max: float) -> PairCorrelation:
        box = ensemble[0].box
        if not (bin_width > 0 and 0 < v_max < box.L / 2.0 and bin_width < v_max):
            raise BadBinning(f"need 0 < bin_width < v_max < L/2, got bin_width={bin_width}, v_max={v_max}")
        edges = np.arange(0.0, v_max + 0.5 * bin_width, bin_width)
        edges[-1] = min(edges[-1], v_max)
        totals = np.zeros(len(edges) - 1)
        counts = []
        for config in ensemble:
            distances, weights = _pair_weights(config, v_max)
            totals += 2.0 * np.histogram(distances, bins=edges, weights=weights)[0]
            m = config.multiplicities.astype(float)
            totals[0] += float((m * (m - 1.0)).sum())
            counts.append(config.total_count)
        intensity = float(np.mean(counts) / box.area)
        annuli = np.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
        rho2 = totals / (len(ensemble) * box.area * annuli * intensity**2)
        return PairCorrelation(edges, rho2, intensity, len(ensemble))

    def sum_rule_diagnostic(self, ensemble: Sequence[PointConfiguration], R: float) -> float:
        """Lens-tapered integral of the correlation measure, sigma(R) - 1; tends to -1 under hyperuniformity."""
        return self.sigma_from_pairs(ensemble, R) - 1.0

    @staticmethod
    def dlog_diagnostic(curve: VarianceCurve) -> dict:
        """sigma(r) log r over the upper half of the radii, and its maximum there."""
        keep = curve.radii > 1.0
        radii = curve.radii[keep]
        values = curve.sigma[keep] * np.log(radii)
        upper = values[len(values) // 2:]
        return {
            "radii": radii.tolist(),
            "sigma_log_r": values.tolist(),
            "tail_sup": float(upper.max()) if len(upper) else float("nan"),
        }
