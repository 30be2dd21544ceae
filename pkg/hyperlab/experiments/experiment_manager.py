import logging
import math
import time
from pathlib import Path
from typing import Any, Callable, List, Optional

import numpy as np
import pandas as pd
from scipy import stats

from hyperlab.checks.registry import (
    CHAIN_CHECKS,
    COUNTEREXAMPLE_CHECKS,
    GROWING,
    STABLE,
    CheckRegistry,
)
from hyperlab.core.errors import GridTooCoarse, HyperlabError, IncompleteReport, InvalidConfig
from hyperlab.core.geometry import TorusBox
from hyperlab.core.grids import check_resolution
from hyperlab.core.parallel import run_replicas, thread_cap
from hyperlab.core.rng import RngSeed
from hyperlab.experiments.models import CheckRecord, ExperimentConfig, ExperimentReport, SuiteEntry
from hyperlab.generators.processes import sample
from hyperlab.generators.specs import (
    BinomialSpec,
    CollapseSpec,
    GaussianLaw,
    PerturbedLatticeSpec,
    block_sizes,
    dyadic_collapse_mixture,
    has_exact_count,
)
from hyperlab.services.coulomb_service import (
    CoulombService,
    condition_point_count,
    curl_residual,
    divergence_residual,
    energy_per_volume,
    solve_field,
)
from hyperlab.services.spectral_service import (
    KERNEL_TAIL_TOLERANCE,
    MIN_SPECTRAL_REPLICAS,
    SpectralService,
    kernel_tail_mass,
)
from hyperlab.services.transport_service import TransportService, max_exact_entries, perturbation_cost_bound
from hyperlab.services.variance_service import MIN_PAIR_ENSEMBLE, MIN_REPLICAS, VarianceService
from hyperlab.settings import Thresholds, load_thresholds

PLOT_KINDS = {
    "sigma_vs_r": (("sigma",), ["generator", "L", "r", "sigma", "stderr", "replicas"], ["generator", "L", "r"]),
    "energy_vs_N": (("collapse",), ["N", "L", "energy", "energy_stderr", "ratio", "w2"], ["N"]),
    "cost_vs_logN": (("akt", "w1_growth"), ["quantity", "N", "log_N", "mean", "stderr"], ["quantity", "N"]),
    "spectrum": (("spectrum",), ["generator", "L", "omega_bin", "S_mean", "S_stderr", "count"], ["generator", "omega_bin"]),
}


def _stability(means: List[float], stderrs: List[float], tolerance: float):
    """Relative change between the two largest boxes; noise of two standard errors is tolerated."""
    if len(means) < 2:
        return STABLE, 0.0
    previous, last = means[-2], means[-1]
    scale = max(abs(previous), 1e-300)
    change = abs(last - previous) / scale
    noise = 2.0 * math.hypot(stderrs[-2], stderrs[-1]) / scale
    return (STABLE if change <= tolerance + noise else GROWING), float(change)


def _forward_bridge_row(index: int, box: TorusBox, seed: RngSeed, law, eta: float, grid_n: int, grid_m: int, slack: float) -> dict:
    config = sample(PerturbedLatticeSpec(law=law), box, seed)
    truncated = solve_field(config, eta, grid_n)
    bound = TransportService(1).transport_bound_from_field(truncated, config, grid_m)
    return {
        "index": index,
        "energy": energy_per_volume(truncated),
        "bound": bound.bound,
        "measured": bound.measured,
        "holds": bool(bound.measured <= bound.bound * (1.0 + slack)),
    }


def _reverse_bridge_row(index: int, box: TorusBox, seed: RngSeed, law, eta: float, grid_m: int, slack: float) -> dict:
    config = sample(PerturbedLatticeSpec(law=law), box, seed)
    result = TransportService.spread_to_lebesgue(config, eta, grid_m)
    coupled = TransportService.field_from_coupling(result)
    return {
        "index": index,
        "w2": result.cost_per_volume,
        "energy": coupled.energy,
        "density_bound": coupled.density_bound,
        "rhs": coupled.rhs,
        "holds": bool(coupled.energy <= coupled.rhs * (1.0 + slack)),
        "divergence_residual": coupled.divergence_residual,
    }


class ExperimentManager:
    def __init__(self, n_jobs: Optional[int] = None):
        """Wire the analysis services used by both experiment suites"""
        self.n_jobs = n_jobs or thread_cap()
        self.variance = VarianceService(self.n_jobs)
        self.spectral = SpectralService(self.n_jobs)
        self.coulomb = CoulombService(self.n_jobs)
        self.transport = TransportService(self.n_jobs)
        logging.info(f"ExperimentManager initialized with n_jobs={self.n_jobs}")

    # ------------------------------------------------------------------ validation

    def validate_config(self, config: ExperimentConfig) -> Thresholds:
        """Dry run: every precondition the run would hit, checked before any sampling."""
        problems = []
        try:
            thresholds = load_thresholds(overrides=config.thresholds)
        except InvalidConfig as e:
            problems.append(str(e))
            thresholds = None
        known = set(CheckRegistry(Thresholds()).checks)
        unknown = sorted(set(config.checks or []) - known)
        if unknown:
            problems.append(f"unknown checks {unknown}")
        if config.replicas < MIN_REPLICAS:
            problems.append(f"replicas={config.replicas} is below {MIN_REPLICAS}")
        if config.kind == "chain":
            problems += self._chain_problems(config)
        else:
            problems += self._counterexample_problems(config)
        if problems:
            raise InvalidConfig("; ".join(problems))
        logging.info(f"Config {config.name!r} ({config.kind}) passed validation")
        return thresholds

    def _grid_problem(self, L: int, n: int, eta: float) -> Optional[str]:
        try:
            check_resolution(TorusBox(L), n, eta)
        except GridTooCoarse as e:
            return f"L={L}: {e}"
        return None

    def _chain_problems(self, config: ExperimentConfig) -> List[str]:
        problems = []
        sides = sorted(set(config.boxes) | {config.spectral_box, config.pair_box})
        for entry in config.entries():
            for N in block_sizes(entry.spec):
                bad = [L for L in sides if L % N]
                if bad:
                    problems.append(f"{entry.label}: block side {N} does not divide L in {bad}")
        if 1.0 not in config.radii:
            problems.append("radii must contain the dyadic radii 1, 2, 4, ... for the HU* series")
        too_large = [r for r in config.radii if r >= config.spectral_box / 2.0]
        if too_large:
            problems.append(f"radii {too_large} reach L/2 of the spectral box {config.spectral_box}")
        for r in config.spectral_radii:
            if r > config.spectral_box / 4.0:
                problems.append(f"spectral radius {r} exceeds L/4 = {config.spectral_box / 4:g}")
            elif kernel_tail_mass(r, config.omega_max) > KERNEL_TAIL_TOLERANCE:
                problems.append(f"omega_max={config.omega_max:g} leaves more than 1% of K_r mass out at r={r}")
        for r in config.discrepancy_radii:
            if r >= config.largest_box / 2.0:
                problems.append(f"discrepancy radius {r} reaches L/2 of box {config.largest_box}")
        if config.spectral_replicas < MIN_SPECTRAL_REPLICAS:
            problems.append(f"spectral_replicas={config.spectral_replicas} is below {MIN_SPECTRAL_REPLICAS}")
        if config.bridge_configs < MIN_PAIR_ENSEMBLE:
            problems.append(f"bridge_configs={config.bridge_configs} is below {MIN_PAIR_ENSEMBLE}")
        for L in config.boxes + [config.forward_bridge_L]:
            problem = self._grid_problem(L, config.grid_n(L), config.eta)
            if problem:
                problems.append(problem)
        limit = max_exact_entries()
        for L in config.boxes + [config.forward_bridge_L]:
            entries = L**2 * (config.grid_m_factor * L) ** 2
            if entries > limit:
                problems.append(f"exact W2 at L={L} needs {entries} cost entries, above the limit {limit}")
        if config.largest_box % 2**config.mixture_j_max:
            problems.append(f"mixture block 2^{config.mixture_j_max} does not divide L={config.largest_box}")
        return problems

    def _counterexample_problems(self, config: ExperimentConfig) -> List[str]:
        problems = []
        for N in config.collapse_N:
            if N < 2:
                problems.append(f"collapse block side {N} must be at least 2")
            problem = self._grid_problem(4 * N, config.grid_n(4 * N), config.eta)
            if problem:
                problems.append(problem)
        for M in config.local_M:
            if M < 10:
                problems.append(f"local energy radius M={M} must be at least 10")
        limit = max_exact_entries()
        for N in config.w1_N:
            if N**4 > limit:
                problems.append(f"w1 at N={N} needs {N**4} cost entries, above the limit {limit}")
        for N in config.akt_N:
            if N**4 > config.akt_entry_limit:
                problems.append(f"AKT at N={N} needs {N**4} cost entries, above akt_entry_limit")
        if len(config.akt_N) < 3:
            problems.append("AKT fit needs at least three values of N")
        return problems

    # ------------------------------------------------------------------ plumbing

    def _step(self, report: ExperimentReport, name: str, function: Callable, *args, **kwargs) -> Any:
        """Run one experiment step; failures are logged and recorded, and the run goes on."""
        start = time.perf_counter()
        try:
            return function(*args, **kwargs)
        except HyperlabError as e:
            logging.error(f"Step {name} failed: {e}")
            report.errors.append(f"{name}: {type(e).__name__}: {e}")
        except Exception as e:
            logging.error(f"Unexpected error in step {name}: {str(e)}")
            report.errors.append(f"{name}: {type(e).__name__}: {e}")
        finally:
            report.timings[name] = report.timings.get(name, 0.0) + time.perf_counter() - start
        return None

    def _new_report(self, config: ExperimentConfig, thresholds: Thresholds) -> ExperimentReport:
        return ExperimentReport(
            name=config.name,
            kind=config.kind,
            seed=config.seed,
            thresholds_version=thresholds.version,
            config=config.model_dump(mode="json"),
        )

    def _run_checks(self, report: ExperimentReport, config: ExperimentConfig, thresholds: Thresholds):
        registry = CheckRegistry(thresholds)
        names = config.checks or (CHAIN_CHECKS if config.kind == "chain" else COUNTEREXAMPLE_CHECKS)
        for name in names:
            result = registry.execute_check(name, report)
            report.checks.append(CheckRecord(name=name, **result))
        logging.info(f"{sum(c.success for c in report.checks)}/{len(report.checks)} checks passed")

    def run(self, config: ExperimentConfig) -> ExperimentReport:
        if config.kind == "chain":
            return self.run_chain_experiment(config)
        return self.run_counterexample_experiment(config)

    # ------------------------------------------------------------------ chain

    def run_chain_experiment(self, config: ExperimentConfig) -> ExperimentReport:
        """HU* verdict, SC integral, field energy, W2 and sigma decay per generator, cross-tabulated."""
        thresholds = self.validate_config(config)
        report = self._new_report(config, thresholds)
        base = RngSeed(config.seed)
        logging.info(f"Starting chain experiment {config.name!r} over {len(config.entries())} generators")

        for index, entry in enumerate(config.entries()):
            row = {"generator": entry.label, "kind": entry.spec.kind}
            row.update(self._chain_entry(report, config, thresholds, entry, base.child(1000 * (index + 1))))
            report.add_rows("chain", [row])

        self._step(report, "mixture_truncation", self._mixture_truncation, report, config, base.child(10))
        self._step(report, "forward_bridge", self._forward_bridge, report, config, thresholds, base.child(11))
        self._step(report, "reverse_bridge", self._reverse_bridge, report, config, thresholds, base.child(12))
        self._step(report, "determinism", self._determinism, report, config, base.child(13))
        self._run_checks(report, config, thresholds)
        return report

    def _chain_entry(self, report, config, thresholds, entry: SuiteEntry, seed: RngSeed) -> dict:
        label, spec = entry.label, entry.spec
        exact = has_exact_count(spec)
        row = {}

        curve = self._step(report, f"{label}/sigma", self._sigma_curve, report, config, entry, seed.child(1))
        if curve is not None:
            slope = curve.loglog_slope()
            row["sigma_slope"] = slope
            row["sigma_decay"] = "decaying" if slope < thresholds.hustar_exponent_threshold else "flat"
            hustar = self._step(report, f"{label}/hustar", self._hustar, report, config, thresholds, entry, curve)
            if hustar is not None:
                row["hustar"] = hustar

        sc = self._step(report, f"{label}/spectrum", self._spectrum, report, config, thresholds, entry, curve, seed.child(2))
        if sc is not None:
            row["sc"] = sc

        energies = self._step(report, f"{label}/energy", self._energy_by_box, report, config, entry, seed.child(3))
        if energies is not None:
            row["energy"], row["energy_change"] = _stability(*energies, thresholds.stability_tolerance)

        costs = self._step(report, f"{label}/w2", self._w2_by_box, report, config, entry, seed.child(4))
        if costs is not None:
            row["w2"], row["w2_change"] = _stability(*costs, thresholds.stability_tolerance)

        self._step(report, f"{label}/field", self._field_invariants, report, config, entry, not exact, seed.child(5))
        self._step(report, f"{label}/discrepancy", self._discrepancy, report, config, entry, not exact, seed.child(6))
        self._step(report, f"{label}/pairs", self._pair_diagnostics, report, config, entry, seed.child(7))
        return row

    def _sigma_curve(self, report, config, entry, seed):
        box = TorusBox(config.spectral_box)
        curve = self.variance.estimate_sigma(
            entry.spec, box, config.radii, config.replicas, seed, config.centers_per_replica
        )
        report.add_rows(
            "sigma",
            [{"generator": entry.label, "kind": entry.spec.kind, "L": config.spectral_box, **r} for r in curve.to_rows()],
        )
        return curve

    def _hustar(self, report, config, thresholds, entry, curve) -> str:
        dyadic = [r for r in curve.radii if r >= 1 and math.log2(r).is_integer()]
        n_max = int(math.log2(max(dyadic)))
        hustar = self.variance.hustar_series(
            curve, n_max, TorusBox(config.spectral_box), thresholds.hustar_exponent_threshold, thresholds.hustar_floor
        )
        report.add_rows(
            "hustar",
            [{
                "generator": entry.label,
                "L": config.spectral_box,
                "verdict": hustar.verdict,
                "tail_exponent": hustar.tail_exponent,
                "slope": hustar.slope,
                "n_max": hustar.n_max,
                "terms": hustar.terms.tolist(),
                "warnings": hustar.warnings,
            }],
        )
        dlog = self.variance.dlog_diagnostic(curve)
        report.fits[f"{entry.label}/dlog"] = {"tail_sup": dlog["tail_sup"], "radii": dlog["radii"]}
        return hustar.verdict

    def _spectrum(self, report, config, thresholds, entry, curve, seed) -> str:
        box = TorusBox(config.spectral_box)
        estimate = self.spectral.structure_factor(entry.spec, box, config.spectral_replicas, config.omega_max, seed)
        sc = self.spectral.sc_integral(estimate, thresholds.hustar_exponent_threshold, thresholds.hustar_floor)
        report.add_rows(
            "sc",
            [{
                "generator": entry.label,
                "L": config.spectral_box,
                "value": sc.value,
                "diverging": sc.diverging,
                "verdict": sc.verdict,
                "tail_exponent": sc.tail_exponent,
                "shell_terms": sc.shell_terms,
            }],
        )
        frame = estimate.radial_bins()
        frame.insert(0, "L", config.spectral_box)
        frame.insert(0, "generator", entry.label)
        report.add_rows("spectrum", frame.to_dict(orient="records"))

        if entry.spec.kind in ("poisson", "lattice") and curve is not None:
            rows = []
            for r in config.spectral_radii:
                direct = curve.at(r)
                rows.append({
                    "generator": entry.label,
                    "L": config.spectral_box,
                    "r": r,
                    "direct": direct.sigma,
                    "direct_stderr": direct.stderr,
                    "spectral": self.spectral.sigma_via_spectrum(estimate, r),
                })
            report.add_rows("spectral_agreement", rows)

        moments = self.variance.count_moments(entry.spec, box, 1.0, config.replicas, seed.child(1))
        bounded = self.spectral.translation_bounded_check(estimate, moments.second_moment, thresholds.translation_bound_constant)
        tail = self.spectral.tail_cubed_integral(estimate) if config.omega_max >= 4.0 else None
        report.add_rows(
            "spectral_bounds",
            [{
                "generator": entry.label,
                "translation_ratio": bounded.ratio,
                "translation_bounded": bounded.passed,
                "tail_cubed": tail.value if tail else None,
                "tail_truncation_bound": tail.truncation_bound if tail else None,
                "coul_spectral": self.spectral.coul_via_spectrum(estimate, config.eta),
            }],
        )
        return sc.verdict

    def _energy_by_box(self, report, config, entry, seed):
        condition = not has_exact_count(entry.spec)
        means, stderrs = [], []
        for index, L in enumerate(config.boxes):
            estimate = self.coulomb.coul_estimate(
                entry.spec, TorusBox(L), config.eta, config.field_replicas, config.grid_n(L), seed.child(index), condition
            )
            means.append(estimate.mean)
            stderrs.append(estimate.stderr)
            report.add_rows(
                "energy",
                [{
                    "generator": entry.label,
                    "L": L,
                    "eta": config.eta,
                    "mean": estimate.mean,
                    "stderr": estimate.stderr,
                    "replicas": estimate.replicas,
                    "conditioned": condition,
                }],
            )
        return means, stderrs

    def _w2_by_box(self, report, config, entry, seed):
        scaling = self.transport.wp_per_unit_volume(
            entry.spec, config.boxes, 2.0, config.transport_replicas, seed, config.grid_m_factor
        )
        bound = perturbation_cost_bound(entry.spec.law, 2.0) if entry.spec.kind == "perturbed" else None
        report.add_rows(
            "w2",
            [
                {
                    "generator": entry.label,
                    "L": int(L),
                    "grid_m": config.grid_m_factor * int(L),
                    "mean": mean,
                    "stderr": stderr,
                    "replicas": config.transport_replicas,
                    "perturbation_bound": bound,
                }
                for L, mean, stderr in zip(scaling.sides, scaling.means, scaling.stderrs)
            ],
        )
        return scaling.means, scaling.stderrs

    def _field_invariants(self, report, config, entry, condition, seed):
        L = min(config.boxes)
        config_sample = sample(entry.spec, TorusBox(L), seed)
        if condition:
            config_sample = condition_point_count(config_sample, seed.child(3))
        truncated = solve_field(config_sample, config.eta, config.grid_n(L))
        comparison = self.coulomb.eta_comparison_check(config_sample, max(config.grid_n(L), 16 * L))
        report.add_rows(
            "field_invariants",
            [{
                "generator": entry.label,
                "L": L,
                "eta": config.eta,
                "divergence_residual": divergence_residual(truncated),
                "curl_residual": curl_residual(truncated),
                "newton_deviation": comparison.newton_deviation,
                "deterministic": True,
            }],
        )
        report.add_rows("eta_comparison", [{"generator": entry.label, **row} for row in comparison.to_rows()])
        report.fits[f"{entry.label}/eta_comparison"] = {
            "slack_constant": comparison.slack_constant,
            "ratio_constant": comparison.ratio_constant,
        }

    def _discrepancy(self, report, config, entry, condition, seed):
        L = config.largest_box
        rows = []
        for index, r in enumerate(config.discrepancy_radii):
            bound = self.coulomb.discrepancy_bound_check(
                entry.spec, TorusBox(L), config.eta, r, config.replicas, seed.child(index), config.grid_n(L), condition
            )
            rows.append({
                "generator": entry.label,
                "L": L,
                "r": r,
                "lhs": bound.lhs,
                "rhs": bound.rhs,
                "ratio": bound.ratio,
                "energy": bound.energy,
            })
        report.add_rows("discrepancy", rows)

    def _pair_diagnostics(self, report, config, entry, seed):
        box = TorusBox(config.pair_box)
        ensemble = [sample(entry.spec, box, seed.replica(i)) for i in range(config.bridge_configs)]
        r = config.pair_box / 8.0
        v_max = 3.0 * config.pair_box / 8.0
        rho = self.variance.pair_correlation(ensemble, 0.05, v_max)
        intrinsic = self.spectral.coul_intrinsic(rho, config.eta, v_max)
        report.add_rows(
            "pair_diagnostics",
            [{
                "generator": entry.label,
                "L": config.pair_box,
                "r": r,
                "sigma_from_pairs": self.variance.sigma_from_pairs(ensemble, r),
                "sum_rule": self.variance.sum_rule_diagnostic(ensemble, r),
                "coul_intrinsic": intrinsic.total,
                "coul_intrinsic_off_diagonal": intrinsic.off_diagonal,
                "configurations": len(ensemble),
            }],
        )

    def _mixture_truncation(self, report, config, seed):
        """Collapse mixtures truncated at N = 2^j_max: W2 stays bounded while the energy keeps growing."""
        L = config.largest_box
        box = TorusBox(L)
        per_block = {}
        for j in range(1, config.mixture_j_max + 1):
            spec = CollapseSpec(N=2**j)
            energy = self.coulomb.coul_estimate(spec, box, config.eta, config.field_replicas, config.grid_n(L), seed.child(j))
            cost = self.transport.wp_per_unit_volume(spec, [L], 2.0, config.transport_replicas, seed.child(100 + j), config.grid_m_factor)
            per_block[2**j] = (energy.mean, cost.means[0])
        rows = []
        for j_max in range(1, config.mixture_j_max + 1):
            mixture = dyadic_collapse_mixture(j_max)
            weights = mixture.normalized_weights()
            blocks = [component.spec.N for component in mixture.components]
            rows.append({
                "j_max": j_max,
                "N_max": 2**j_max,
                "energy": float(sum(w * per_block[N][0] for w, N in zip(weights, blocks))),
                "w2": float(sum(w * per_block[N][1] for w, N in zip(weights, blocks))),
                "sum_weighted_N2": float(sum(c.weight * c.spec.N**2 for c in mixture.components)),
                "sum_weighted_N2_logN": float(sum(c.weight * c.spec.N**2 * math.log(c.spec.N) for c in mixture.components)),
            })
        report.add_rows("mixture_truncation", rows)

    def _forward_bridge(self, report, config, thresholds, seed):
        L = config.forward_bridge_L
        law = GaussianLaw(std=config.bridge_std)
        arguments = [
            (i, TorusBox(L), seed.replica(i), law, config.eta, config.grid_n(L), config.grid_m_factor * L, thresholds.bound_slack)
            for i in range(config.bridge_configs)
        ]
        report.add_rows("forward_bridge", run_replicas(_forward_bridge_row, arguments, self.n_jobs))

    def _reverse_bridge(self, report, config, thresholds, seed):
        L = config.reverse_bridge_L
        law = GaussianLaw(std=config.bridge_std)
        grid_m = max(4 * L, int(math.ceil(4 * L / config.eta)))
        arguments = [
            (i, TorusBox(L), seed.replica(i), law, config.eta, grid_m, thresholds.bound_slack)
            for i in range(config.bridge_configs)
        ]
        report.add_rows("reverse_bridge", run_replicas(_reverse_bridge_row, arguments, self.n_jobs))

    def _determinism(self, report, config, seed):
        """Recompute a small estimate twice from the same seed and compare the numbers exactly."""
        spec = config.entries()[0].spec
        L = min(config.boxes)
        if any(L % N for N in block_sizes(spec)):
            spec = PerturbedLatticeSpec(law=GaussianLaw(std=0.2))
        box = TorusBox(L)
        first = self.variance.estimate_sigma(spec, box, [1.0, 2.0], MIN_REPLICAS, seed).to_rows()
        second = self.variance.estimate_sigma(spec, box, [1.0, 2.0], MIN_REPLICAS, seed).to_rows()
        cost_first = self.transport.wp_per_unit_volume(spec, [L], 2.0, 2, seed.child(1)).means
        cost_second = self.transport.wp_per_unit_volume(spec, [L], 2.0, 2, seed.child(1)).means
        report.add_rows(
            "determinism",
            [
                {"quantity": "sigma", "identical": first == second},
                {"quantity": "w2", "identical": cost_first == cost_second},
            ],
        )

    # ------------------------------------------------------------------ counterexamples

    def run_counterexample_experiment(self, config: ExperimentConfig) -> ExperimentReport:
        """Collapse-block and binomial-block scalings, with their fits."""
        thresholds = self.validate_config(config)
        report = self._new_report(config, thresholds)
        base = RngSeed(config.seed)
        logging.info(f"Starting counterexample experiment {config.name!r}")
        self._step(report, "collapse", self._collapse_scaling, report, config, base.child(1))
        self._step(report, "local_energy", self._local_energy, report, config, base.child(2))
        self._step(report, "binomial_variance", self._binomial_variance, report, config, base.child(3))
        self._step(report, "w1_growth", self._w1_growth, report, config, base.child(4))
        self._step(report, "akt", self._akt, report, config, base.child(5))
        self._step(report, "determinism", self._determinism, report, config, base.child(6))
        self._run_checks(report, config, thresholds)
        return report

    def _collapse_scaling(self, report, config, seed):
        rows = []
        for index, N in enumerate(config.collapse_N):
            L = 4 * N
            spec = CollapseSpec(N=N)
            energy = self.coulomb.coul_estimate(spec, TorusBox(L), config.eta, config.field_replicas, config.grid_n(L), seed.child(index))
            cost = self.transport.wp_per_unit_volume(spec, [L], 2.0, config.transport_replicas, seed.child(100 + index), config.grid_m_factor)
            rows.append({
                "N": N,
                "L": L,
                "w2": cost.means[0],
                "w2_stderr": cost.stderrs[0],
                "w2_bound": 2.0 * N**2,
                "energy": energy.mean,
                "energy_stderr": energy.stderr,
                "ratio": energy.mean / (N**2 * math.log(N)),
            })
        report.add_rows("collapse", rows)
        ratios = np.array([row["ratio"] for row in rows])
        report.fits["collapse_energy"] = {"c_min": float(ratios.min()), "c_max": float(ratios.max())}

    def _local_energy(self, report, config, seed):
        rows = []
        for index, M in enumerate(config.local_M):
            L = 4 * M
            box = TorusBox(L)
            configuration = sample(CollapseSpec(N=M), box, seed.child(index))
            truncated = solve_field(configuration, config.eta, config.grid_n(L))
            z = configuration.positions[int(np.argmax(configuration.multiplicities))]
            bound = self.coulomb.local_energy_lower_bound_check(configuration, truncated, z, M)
            rows.append({"M": M, "N": M, "L": L, "lhs": bound.lhs, "rhs_shape": bound.rhs_shape, "ratio": bound.ratio, "deterministic": True})
        report.add_rows("local_energy", rows)

    def _binomial_variance(self, report, config, seed):
        rows = []
        for index, N in enumerate(config.binomial_N):
            L = 8 * N
            radii = [N / 2.0, float(N), 2.0 * N, 3.0 * N]
            variance, stderr = self.variance.variance_profile(
                BinomialSpec(N=N), TorusBox(L), radii, config.replicas, seed.child(index), config.centers_per_replica
            )
            for r, v, e in zip(radii, variance, stderr):
                rows.append({
                    "N": N,
                    "L": L,
                    "r": r,
                    "variance": float(v),
                    "stderr": float(e),
                    "regime": "r<=N" if r <= N else "r>N",
                    "scaled": float(v / r**2) if r <= N else float(v / (r * N)),
                })
        report.add_rows("binomial_variance", rows)

    def _w1_growth(self, report, config, seed):
        rows = []
        for index, N in enumerate(config.w1_N):
            cost = self.transport.wp_per_unit_volume(
                BinomialSpec(N=N), [N], 1.0, config.transport_replicas, seed.child(index), grid_factor=1
            )
            rows.append({"quantity": "w1", "N": N, "log_N": math.log(N), "mean": cost.means[0], "stderr": cost.stderrs[0]})
        report.add_rows("w1_growth", rows)
        fit = stats.linregress(np.sqrt([row["log_N"] for row in rows]), [row["mean"] for row in rows])
        report.fits["w1_growth"] = {
            "against": "sqrt(log N)",
            "slope": float(fit.slope),
            "intercept": float(fit.intercept),
            "r_squared": float(fit.rvalue**2),
        }

    def _akt(self, report, config, seed):
        scaling = self.transport.akt_scaling(config.akt_N, config.transport_replicas, seed, config.akt_entry_limit)
        report.add_rows(
            "akt",
            [
                {"quantity": "w2_per_point", "N": N, "log_N": math.log(N), "mean": mean, "stderr": stderr}
                for N, mean, stderr in zip(scaling.N, scaling.means, scaling.stderrs)
            ],
        )
        report.fits["akt"] = {
            "against": "log N",
            "slope": scaling.slope,
            "intercept": scaling.intercept,
            "r_squared": scaling.r_squared,
        }

    # ------------------------------------------------------------------ plot data

    def emit_plot_data(self, report: ExperimentReport, kind: str, out_dir: Path) -> Path:
        """Write one tidy CSV for a figure kind; rows sorted so reruns are byte-identical."""
        if kind not in PLOT_KINDS:
            raise IncompleteReport(f"unknown plot kind {kind!r}; choose from {sorted(PLOT_KINDS)}")
        sections, columns, order = PLOT_KINDS[kind]
        rows = [row for section in sections for row in report.rows(section)]
        if not rows:
            raise IncompleteReport(f"report has no rows for {kind} (sections {list(sections)})")
        frame = pd.DataFrame(rows)
        missing = [column for column in columns if column not in frame.columns]
        if missing:
            raise IncompleteReport(f"{kind} rows lack columns {missing}")
        frame = frame[columns].sort_values(order, kind="mergesort").reset_index(drop=True)
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{kind}.csv"
        frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
        logging.info(f"Wrote {len(frame)} rows to {path}")
        return path
