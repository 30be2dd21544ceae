"""Acceptance checks, each evaluated from the sections of an ExperimentReport."""

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from hyperlab.core.errors import IncompleteReport
from hyperlab.experiments.models import ExperimentReport, plain
from hyperlab.services.variance_service import CONVERGING, DIVERGING, INCONCLUSIVE
from hyperlab.settings import Thresholds

STABLE = "stable"
GROWING = "growing"


@dataclass
class CheckResult:
    """Outcome of one acceptance check"""
    success: bool
    data: Optional[Dict[str, Any]] = None
    error: Optional[str] = None


@dataclass
class Check:
    name: str
    number: int
    description: str
    sections: tuple
    evaluate: Callable[[ExperimentReport, Thresholds], CheckResult]


def _rows(report: ExperimentReport, section: str, **match) -> List[dict]:
    return [row for row in report.rows(section) if all(row.get(k) == v for k, v in match.items())]


def _band(values) -> float:
    values = np.asarray(values, dtype=float)
    if len(values) == 0 or np.any(values <= 0):
        return float("inf")
    return float(values.max() / values.min())


def poisson_baseline(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    rows = _rows(report, "sigma", kind="poisson")
    rows = [row for row in rows if row["r"] >= 4]
    if not rows:
        return CheckResult(False, error="no Poisson sigma rows at r >= 4")
    deviations = [
        {"r": row["r"], "sigma": row["sigma"], "allowed": thresholds.poisson_sigma_tolerance + 2.0 * row["stderr"]}
        for row in rows
    ]
    success = all(abs(d["sigma"] - 1.0) <= d["allowed"] for d in deviations)
    return CheckResult(success, {"rows": deviations})


def lattice_class_one(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    rows = [row for row in _rows(report, "sigma", kind="lattice") if row["r"] >= 2 and row["sigma"] > 0]
    if len(rows) < 3:
        return CheckResult(False, error="need lattice sigma at three or more radii r >= 2")
    slope = float(np.polyfit(np.log([row["r"] for row in rows]), np.log([row["sigma"] for row in rows]), 1)[0])
    success = thresholds.lattice_slope_min <= slope <= thresholds.lattice_slope_max
    return CheckResult(success, {"slope": slope, "radii": [row["r"] for row in rows]})


def spectral_agreement(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    rows = report.rows("spectral_agreement")
    if not rows:
        return CheckResult(False, error="no spectral agreement rows")
    table = []
    for row in rows:
        allowed = max(thresholds.spectral_agreement_abs, thresholds.spectral_agreement_rel * abs(row["direct"]))
        table.append({**row, "allowed": allowed, "ok": abs(row["direct"] - row["spectral"]) <= allowed})
    return CheckResult(all(row["ok"] for row in table), {"rows": table})


def sc_hustar_coherence(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    hustar = {row["generator"]: row["verdict"] for row in report.rows("hustar")}
    sc = {row["generator"]: row["verdict"] for row in report.rows("sc")}
    shared = sorted(set(hustar) & set(sc))
    if not shared:
        return CheckResult(False, error="no generator carries both a HU* and an SC verdict")
    compared, mismatched = [], []
    for generator in shared:
        if INCONCLUSIVE in (hustar[generator], sc[generator]):
            continue
        compared.append(generator)
        if hustar[generator] != sc[generator]:
            mismatched.append(generator)
    data = {"compared": compared, "mismatched": mismatched, "hustar": hustar, "sc": sc}
    return CheckResult(not mismatched, data)


def collapse_scaling(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    rows = report.rows("collapse")
    if not rows:
        return CheckResult(False, error="no collapse rows")
    w2_ok = all(row["w2"] <= thresholds.collapse_w2_factor * row["N"] ** 2 for row in rows)
    band = _band([row["ratio"] for row in rows])
    data = {"w2_within_bound": w2_ok, "ratio_band": band, "ratios": [row["ratio"] for row in rows]}
    return CheckResult(w2_ok and band <= thresholds.collapse_energy_band, data)


def local_energy_bound(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    rows = report.rows("local_energy")
    if not rows:
        return CheckResult(False, error="no local energy rows")
    ratios = [row["ratio"] for row in rows]
    fitted = min(ratios)
    band = _band(ratios)
    success = fitted >= thresholds.local_energy_min_ratio and band <= thresholds.collapse_energy_band
    return CheckResult(success, {"fitted_constant": fitted, "ratio_band": band, "ratios": ratios})


def binomial_crossover(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    rows = report.rows("binomial_variance")
    growth = report.rows("w1_growth")
    if not rows or not growth:
        return CheckResult(False, error="binomial variance and w1 growth rows are both required")
    bands = {}
    for N in sorted({row["N"] for row in rows}):
        small = [row["variance"] / row["r"] ** 2 for row in rows if row["N"] == N and row["r"] <= N]
        large = [row["variance"] / (row["r"] * N) for row in rows if row["N"] == N and row["r"] >= N]
        bands[str(N)] = {"small_r": _band(small), "large_r": _band(large)}
    bands_ok = all(
        b["small_r"] <= thresholds.binomial_variance_band and b["large_r"] <= thresholds.binomial_variance_band
        for b in bands.values()
    )
    growth = sorted(growth, key=lambda row: row["N"])
    means = [row["mean"] for row in growth]
    increasing = all(b > a for a, b in zip(means, means[1:]))
    fit = report.fits.get("w1_growth", {})
    slope = fit.get("slope", float("nan"))
    success = bands_ok and increasing and slope > 0
    return CheckResult(success, {"bands": bands, "w1_means": means, "w1_increasing": increasing, "w1_slope": slope})


def akt_scaling(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    fit = report.fits.get("akt")
    if not fit:
        return CheckResult(False, error="no AKT fit")
    success = fit["slope"] > 0 and fit["r_squared"] >= thresholds.akt_min_r_squared
    return CheckResult(success, dict(fit))


def _bridge(report: ExperimentReport, section: str, minimum: float) -> CheckResult:
    rows = report.rows(section)
    if not rows:
        return CheckResult(False, error=f"no {section} rows")
    fraction = sum(bool(row["holds"]) for row in rows) / len(rows)
    return CheckResult(fraction >= minimum, {"fraction": fraction, "configurations": len(rows)})


def forward_bridge(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    return _bridge(report, "forward_bridge", thresholds.forward_bridge_min_fraction)


def reverse_bridge(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    return _bridge(report, "reverse_bridge", thresholds.reverse_bridge_min_fraction)


def field_invariants(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    rows = report.rows("field_invariants")
    if not rows:
        return CheckResult(False, error="no field invariant rows")
    worst_div = max(row["divergence_residual"] for row in rows)
    worst_curl = max(row["curl_residual"] for row in rows)
    newton = [row["newton_deviation"] for row in rows if row.get("newton_deviation") is not None]
    worst_newton = max(newton) if newton else 0.0
    success = worst_div <= thresholds.tol_div and worst_curl <= thresholds.tol_div and worst_newton <= thresholds.newton_tolerance
    return CheckResult(success, {"divergence": worst_div, "curl": worst_curl, "newton": worst_newton})


def discrepancy_bound(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    rows = report.rows("discrepancy")
    if not rows:
        return CheckResult(False, error="no discrepancy rows")
    fitted = max(row["ratio"] for row in rows)
    return CheckResult(fitted <= thresholds.discrepancy_max_constant, {"fitted_constant": fitted})


def determinism(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    rows = report.rows("determinism")
    if not rows:
        return CheckResult(False, error="no determinism rows")
    return CheckResult(all(row["identical"] for row in rows), {"rows": rows})


def chain_coherence(report: ExperimentReport, thresholds: Thresholds) -> CheckResult:
    """HU*-converging rows need stable energy and W2; Poisson rows need everything diverging or growing."""
    rows = report.rows("chain")
    if not rows:
        return CheckResult(False, error="no chain rows")
    failures = defaultdict(list)
    for row in rows:
        if row["hustar"] == CONVERGING:
            for column in ("energy", "w2"):
                if row.get(column) != STABLE:
                    failures[row["generator"]].append(f"{column}={row.get(column)}")
        if row["kind"] == "poisson":
            expected = {"hustar": DIVERGING, "sc": DIVERGING, "energy": GROWING, "w2": GROWING}
            for column, value in expected.items():
                if row.get(column) != value:
                    failures[row["generator"]].append(f"{column}={row.get(column)}")
    return CheckResult(not failures, {"failures": dict(failures)})


class CheckRegistry:
    """Registry of named acceptance checks"""

    def __init__(self, thresholds: Thresholds):
        self.thresholds = thresholds
        self.checks = {
            check.name: check
            for check in [
                Check("poisson_baseline", 1, "Poisson sigma(r) = 1 at r >= 4", ("sigma",), poisson_baseline),
                Check("lattice_class_one", 2, "lattice sigma(r) decays like 1/r", ("sigma",), lattice_class_one),
                Check("spectral_agreement", 3, "spectral and direct sigma agree", ("spectral_agreement",), spectral_agreement),
                Check("sc_hustar_coherence", 4, "SC divergence flag matches the HU* verdict", ("hustar", "sc"), sc_hustar_coherence),
                Check("collapse_scaling", 5, "collapse W2 <= 2N^2 and energy ~ N^2 log N", ("collapse",), collapse_scaling),
                Check("local_energy_bound", 6, "local energy >= c M^4 log M", ("local_energy",), local_energy_bound),
                Check("binomial_crossover", 7, "binomial variance crossover and w1 growth", ("binomial_variance", "w1_growth"), binomial_crossover),
                Check("akt_scaling", 8, "per-point W2^2 grows like log N", ("akt",), akt_scaling),
                Check("forward_bridge", 9, "W2 bounded by field energy", ("forward_bridge",), forward_bridge),
                Check("reverse_bridge", 10, "coupling field energy bounded by W2", ("reverse_bridge",), reverse_bridge),
                Check("field_invariants", 11, "divergence, curl and Newton invariants", ("field_invariants",), field_invariants),
                Check("discrepancy_bound", 12, "discrepancy bounded by (Coul + 1) r^2", ("discrepancy",), discrepancy_bound),
                Check("determinism", 13, "identical inputs give identical numbers", ("determinism",), determinism),
                Check("chain_coherence", 14, "cross-tabulated implication chain", ("chain",), chain_coherence),
            ]
        }

    def get_check(self, name: str) -> Optional[Check]:
        return self.checks.get(name)

    def list_checks(self) -> List[Dict[str, Any]]:
        return [
            {"name": check.name, "number": check.number, "description": check.description}
            for check in sorted(self.checks.values(), key=lambda check: check.number)
        ]

    def execute_check(self, name: str, report: ExperimentReport) -> Dict[str, Any]:
        """Evaluate a check by name against the report"""
        check = self.get_check(name)
        if check is None:
            return {"success": False, "data": None, "error": f"Check {name} not found"}
        missing = [section for section in check.sections if not report.rows(section) and section not in report.fits]
        if missing:
            return {"success": False, "data": None, "error": f"report lacks section(s) {missing}"}
        try:
            result = check.evaluate(report, self.thresholds)
        except (KeyError, ValueError, IncompleteReport) as e:
            logging.error(f"Check {name} could not be evaluated: {e}")
            return {"success": False, "data": None, "error": str(e)}
        if not result.success:
            logging.warning(f"Check {name} failed: {result.error or result.data}")
        return {"success": result.success, "data": plain(result.data), "error": result.error}


CHAIN_CHECKS = [
    "poisson_baseline",
    "lattice_class_one",
    "spectral_agreement",
    "sc_hustar_coherence",
    "forward_bridge",
    "reverse_bridge",
    "field_invariants",
    "discrepancy_bound",
    "determinism",
    "chain_coherence",
]
COUNTEREXAMPLE_CHECKS = ["collapse_scaling", "local_energy_bound", "binomial_crossover", "akt_scaling", "determinism"]
