"""Fourier-side diagnostics on the torus.

Frequencies live on (1/L) Z^2. S(w) is the averaged periodogram |sum_x m_x e^{-2 pi i w.x}|^2 / L^2,
so a unit-intensity Poisson process has S = 1 and every integral against the
spectral measure becomes a (1/L^2)-weighted sum over modes.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
import pandas as pd
from scipy import signal, special

from hyperlab.core.errors import BadBinning, InsufficientFrequencyRange, TooFewReplicas, ZeroFrequency
from hyperlab.core.geometry import PointConfiguration, TorusBox, check_radius
from hyperlab.core.parallel import run_replicas, thread_cap
from hyperlab.core.rng import RngSeed
from hyperlab.generators.processes import sample
from hyperlab.services.variance_service import DIVERGING, PairCorrelation, dyadic_verdict

MIN_SPECTRAL_REPLICAS = 50
KERNEL_TAIL_TOLERANCE = 0.01
TRANSLATION_BOUND_CONSTANT = 50.0
_CHUNK = 4096
# periodograms held in memory per worker between Welford updates
_REPLICA_BATCH = 4


def periodogram(config: PointConfiguration, K: int) -> np.ndarray:
    """|F(k)|^2 / L^2 for integer modes k in [-K, K]^2, F the multiplicity-weighted exponential sum.

    The transform factorises over coordinates, so it is computed as a product
    of two (2K+1) x n phase matrices, chunked over points.
    """
    L = config.box.L
    modes = np.arange(-K, K + 1)
    F = np.zeros((len(modes), len(modes)), dtype=complex)
    for start in range(0, len(config), _CHUNK):
        x = config.positions[start:start + _CHUNK]
        m = config.multiplicities[start:start + _CHUNK].astype(float)
        phase_x = np.exp(-2j * np.pi * np.outer(modes, x[:, 0]) / L)
        phase_y = np.exp(-2j * np.pi * np.outer(modes, x[:, 1]) / L)
        F += (phase_x * m) @ phase_y.T
    power = np.abs(F) ** 2 / (L * L)
    # S(w) = S(-w) holds exactly after symmetrisation
    return 0.5 * (power + power[::-1, ::-1])


def _replica_periodogram(spec, box: TorusBox, seed: RngSeed, K: int):
    config = sample(spec, box, seed)
    return periodogram(config, K), config.total_count


@dataclass
class SpectralEstimate:
    """Averaged periodogram on the dense mode grid [-K, K]^2, K = floor(omega_max * L).

    Entries outside |w| <= omega_max and the zero mode are held at 0 and
    excluded by `mask`.
    """

    box: TorusBox
    omega_max: float
    S: np.ndarray
    stderr: np.ndarray
    replicas: int
    count_variance: float = 0.0
    mean_count: float = 0.0

    @property
    def K(self) -> int:
        return (self.S.shape[0] - 1) // 2

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.K, self.K + 1)

    def frequency_norms(self) -> np.ndarray:
        k = self.modes
        return np.hypot(k[:, None], k[None, :]) / self.box.L

    @property
    def mask(self) -> np.ndarray:
        norms = self.frequency_norms()
        return (norms > 0) & (norms <= self.omega_max + 1e-12)

    def mode_values(self):
        """(|w|, S, number of modes represented) for every retained mode."""
        mask = self.mask
        return self.frequency_norms()[mask], self.S[mask], np.ones(int(mask.sum()))

    def raw(self) -> dict:
        """Mapping (kx, ky) -> S for retained modes; frequency is (kx, ky)/L."""
        k = self.modes
        index = np.argwhere(self.mask)
        return {(int(k[i]), int(k[j])): float(self.S[i, j]) for i, j in index}

    def radial_bins(self) -> pd.DataFrame:
        """Annuli of width 1/L: [b/L, (b+1)/L), centered at (b + 1/2)/L."""
        L = self.box.L
        mask = self.mask
        bins = np.floor(self.frequency_norms()[mask] * L + 1e-9).astype(int)
        frame = pd.DataFrame({"bin": bins, "S": self.S[mask], "var": self.stderr[mask] ** 2})
        grouped = frame.groupby("bin").agg(S_mean=("S", "mean"), var=("var", "sum"), count=("S", "size"))
        grouped["S_stderr"] = np.sqrt(grouped["var"]) / grouped["count"]
        grouped["omega_bin"] = (grouped.index.to_numpy() + 0.5) / L
        return grouped.reset_index(drop=True)[["omega_bin", "S_mean", "S_stderr", "count"]]

    def max_radial_mean(self) -> float:
        bins = self.radial_bins()
        return float(bins["S_mean"].max()) if len(bins) else 0.0

    @classmethod
    def zeros(cls, box: TorusBox, omega_max: float) -> "SpectralEstimate":
        K = int(np.floor(omega_max * box.L + 1e-9))
        grid = np.zeros((2 * K + 1, 2 * K + 1))
        return cls(box, omega_max, grid, grid.copy(), 0)

    @classmethod
    def flat(cls, box: TorusBox, omega_max: float, level: float = 1.0) -> "SpectralEstimate":
        estimate = cls.zeros(box, omega_max)
        estimate.S[estimate.mask] = level
        return estimate


@dataclass
class RadialSpectrum:
    """Radially binned spectrum as written to CSV; supports the shell-based integrals."""

    box: TorusBox
    omega: np.ndarray
    S_mean: np.ndarray
    S_stderr: np.ndarray
    count: np.ndarray

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, L: Optional[float] = None) -> "RadialSpectrum":
        omega = frame["omega_bin"].to_numpy(dtype=float)
        if L is None:
            if len(omega) < 2:
                raise BadBinning("cannot infer L from fewer than two radial bins")
            L = float(np.round(1.0 / np.min(np.diff(omega))))
        return cls(
            TorusBox(L),
            omega,
            frame["S_mean"].to_numpy(dtype=float),
            frame["S_stderr"].to_numpy(dtype=float),
            frame["count"].to_numpy(dtype=float),
        )

    @property
    def omega_max(self) -> float:
        return float(self.omega.max() + 0.5 / self.box.L) if len(self.omega) else 0.0

    def mode_values(self):
        return self.omega, self.S_mean, self.count

    def max_radial_mean(self) -> float:
        return float(self.S_mean.max()) if len(self.S_mean) else 0.0


Spectrum = Union[SpectralEstimate, RadialSpectrum]


@dataclass
class SCResult:
    value: float
    diverging: bool
    verdict: str
    shell_terms: List[float] = field(default_factory=list)
    tail_exponent: float = float("nan")


@dataclass
class TranslationBound:
    ratio: float
    max_window_mass: float
    passed: bool
    constant: float = TRANSLATION_BOUND_CONSTANT


@dataclass
class TailIntegral:
    value: float
    truncation_bound: float


@dataclass
class IntrinsicEnergy:
    """Off-diagonal pair integral and the self-energy of one eta-spread unit charge, kept apart."""

    off_diagonal: float
    diagonal_constant: float
    eta: float
    v_max: float

    @property
    def total(self) -> float:
        return self.off_diagonal + self.diagonal_constant


def jr_fourier(omega_norm, r: float):
    """K_r(w) = J1(2 pi r |w|)^2 / (pi |w|^2); integrates to 1 over the plane for every r."""
    omega = np.asarray(omega_norm, dtype=float)
    if np.any(omega <= 0):
        raise ZeroFrequency("jr_fourier is evaluated at nonzero frequencies only")
    value = special.j1(2.0 * np.pi * r * omega) ** 2 / (np.pi * omega**2)
    return float(value) if np.ndim(value) == 0 else value


def kernel_tail_mass(r: float, omega_max: float) -> float:
    """Mass of K_r outside |w| <= omega_max: J0(X)^2 + J1(X)^2 with X = 2 pi r omega_max."""
    x = 2.0 * np.pi * r * omega_max
    return float(special.j0(x) ** 2 + special.j1(x) ** 2)


def disk_transform(omega_norm, eta: float):
    """Fourier transform of the normalised indicator of B_eta, 2 J1(t)/t with t = 2 pi eta |w|."""
    t = 2.0 * np.pi * eta * np.asarray(omega_norm, dtype=float)
    safe = np.where(t > 0, t, 1.0)
    return np.where(t > 0, 2.0 * special.j1(safe) / safe, 1.0)


def _radial_log_antiderivative(s: np.ndarray, eta: float) -> np.ndarray:
    """G(s) = int_0^s 2 pi u (-log max(u, eta)) du."""
    s = np.asarray(s, dtype=float)
    inner = -np.pi * np.minimum(s, eta) ** 2 * np.log(eta)
    outer_s = np.maximum(s, eta)
    outer = -2.0 * np.pi * (0.5 * outer_s**2 * np.log(outer_s) - 0.25 * outer_s**2)
    outer_eta = -2.0 * np.pi * (0.5 * eta**2 * np.log(eta) - 0.25 * eta**2)
    return inner + np.where(s > eta, outer - outer_eta, 0.0)


class SpectralService:
    def __init__(self, n_jobs: Optional[int] = None):
        self.n_jobs = n_jobs or thread_cap()

    def structure_factor(self, spec, box: TorusBox, replicas: int, omega_max: float, seed: RngSeed) -> SpectralEstimate:
        """Mean periodogram with per-mode stderr, accumulated one batch of replicas at a time."""
        if replicas < MIN_SPECTRAL_REPLICAS:
            raise TooFewReplicas(f"structure factor needs at least {MIN_SPECTRAL_REPLICAS} replicas, got {replicas}")
        box.integer_side()
        K = int(np.floor(omega_max * box.L + 1e-9))
        arguments = [(spec, box, seed.replica(i), K) for i in range(replicas)]
        mean = np.zeros((2 * K + 1, 2 * K + 1))
        m2 = np.zeros_like(mean)
        counts = []
        batch = self.n_jobs * _REPLICA_BATCH
        for start in range(0, replicas, batch):
            for power, count in run_replicas(_replica_periodogram, arguments[start:start + batch], self.n_jobs):
                counts.append(count)
                delta = power - mean
                mean += delta / len(counts)
                m2 += delta * (power - mean)
        counts = np.asarray(counts, dtype=float)
        estimate = SpectralEstimate(
            box=box,
            omega_max=float(omega_max),
            S=mean,
            stderr=np.sqrt(np.maximum(m2, 0.0) / (replicas - 1)) / np.sqrt(replicas),
            replicas=replicas,
            count_variance=float(counts.var(ddof=1)),
            mean_count=float(counts.mean()),
        )
        outside = ~estimate.mask
        estimate.S[outside] = 0.0
        estimate.stderr[outside] = 0.0
        logging.info(f"Structure factor on L={box.L:g}: {int(estimate.mask.sum())} modes, {replicas} replicas")
        return estimate

    def sigma_via_spectrum(self, estimate: SpectralEstimate, r: float) -> float:
        """sigma(r) = (1/L^2) sum_{w != 0} K_r(w) S(w) + pi r^2 Var(N) / L^4.

        The second term is the zero mode, which only a random total count feeds.
        """
        box = estimate.box
        check_radius(r, box)
        if r > box.L / 4.0:
            raise InsufficientFrequencyRange(f"radius {r} exceeds L/4 = {box.L / 4:g}")
        tail = kernel_tail_mass(r, estimate.omega_max)
        if tail > KERNEL_TAIL_TOLERANCE:
            raise InsufficientFrequencyRange(
                f"K_r mass beyond omega_max={estimate.omega_max:g} is {tail:.3%} at r={r}; raise omega_max"
            )
        norms, values, weights = estimate.mode_values()
        if len(norms) == 0:
            return 0.0
        total = float(np.sum(weights * jr_fourier(norms, r) * values)) / box.area
        return total + np.pi * r * r * estimate.count_variance / box.area**2

    def sc_integral(self, estimate: Spectrum, exponent_threshold: float = -0.2, floor: float = 0.5) -> SCResult:
        """(1/L^2) sum over 0 < |w| < 1 of S/|w|^2, with a dyadic-shell divergence verdict.

        Bragg peaks on the unit circle belong to tail_cubed_integral's range.
        Shell m covers (2^-(m+1), 2^-m] and the shells run down to the lowest frequency present.
        """
        L = estimate.box.L
        norms, values, weights = estimate.mode_values()
        inside = (norms > 0) & (norms < 1.0)
        contributions = np.zeros_like(norms)
        contributions[inside] = weights[inside] * values[inside] / norms[inside] ** 2 / (L * L)
        shells = []
        lowest = float(norms[inside].min()) if np.any(inside) else 1.0 / L
        m = 0
        while 2.0**-m >= lowest - 1e-12:
            in_shell = inside & (norms > 2.0 ** -(m + 1)) & (norms <= 2.0**-m + 1e-12)
            shells.append(float(contributions[in_shell].sum()))
            m += 1
        verdict, exponent = dyadic_verdict(shells, exponent_threshold, floor)
        value = float(contributions.sum())
        logging.info(f"SC integral {value:.4g} over {len(shells)} shells: {verdict}")
        return SCResult(value, verdict == DIVERGING, verdict, shells, exponent)

    def translation_bounded_check(
        self, estimate: SpectralEstimate, count_second_moment: float, constant: float = TRANSLATION_BOUND_CONSTANT
    ) -> TranslationBound:
        """Largest spectral mass in a unit frequency disk, relative to E[N(B_1)^2]."""
        L = estimate.box.L
        density = np.where(estimate.mask, estimate.S, 0.0) / (L * L)
        if not np.any(density > 0):
            return TranslationBound(0.0, 0.0, True, constant)
        reach = int(np.floor(L + 1e-9))
        offsets = np.arange(-reach, reach + 1)
        window = (np.hypot(offsets[:, None], offsets[None, :]) <= L + 1e-9).astype(float)
        masses = signal.fftconvolve(density, window, mode="same")
        max_mass = float(masses.max())
        ratio = max_mass / count_second_moment if count_second_moment > 0 else float("inf")
        return TranslationBound(ratio, max_mass, ratio < constant, constant)

    def tail_cubed_integral(self, estimate: Spectrum) -> TailIntegral:
        """(1/L^2) sum over 1 <= |w| <= omega_max of S/|w|^3, plus a bound on the part beyond omega_max."""
        if estimate.omega_max < 4.0:
            raise InsufficientFrequencyRange(f"tail integral needs omega_max >= 4, got {estimate.omega_max:g}")
        L = estimate.box.L
        norms, values, weights = estimate.mode_values()
        keep = norms >= 1.0 - 1e-12
        value = float(np.sum(weights[keep] * values[keep] / norms[keep] ** 3)) / (L * L)
        return TailIntegral(value, estimate.max_radial_mean() * 2.0 * np.pi / estimate.omega_max)

    def coul_via_spectrum(self, estimate: SpectralEstimate, eta: float) -> float:
        """Energy per unit volume of the field solving -div E = 2 pi (X_eta - 1), read off the spectrum."""
        if not 0 < eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {eta}")
        norms, values, weights = estimate.mode_values()
        if len(norms) == 0:
            return 0.0
        spread = disk_transform(norms, eta) ** 2
        return float(np.sum(weights * values * spread / norms**2)) / estimate.box.area

    @staticmethod
    def coul_intrinsic(pair_correlation: PairCorrelation, eta: float, v_max: float) -> IntrinsicEnergy:
        """Integral of -log max(|v|, eta) against (rho_2 - 1) over |v| <= v_max.

        rho_2 is constant on each radial bin, so every bin is integrated exactly.
        """
        if not 0 < eta <= 1:
            raise BadBinning(f"eta must lie in (0, 1], got {eta}")
        edges = pair_correlation.edges
        if v_max > edges[-1] + 1e-12 or v_max <= edges[0]:
            raise BadBinning(f"v_max={v_max} outside the binned range [{edges[0]}, {edges[-1]}]")
        upper = np.minimum(edges[1:], v_max)
        lower = np.minimum(edges[:-1], v_max)
        weights = _radial_log_antiderivative(upper, eta) - _radial_log_antiderivative(lower, eta)
        off_diagonal = float(np.sum((pair_correlation.rho2 - 1.0) * weights))
        return IntrinsicEnergy(off_diagonal, -np.log(eta) + 0.25, eta, v_max)
