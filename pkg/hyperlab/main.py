import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError

from hyperlab.core.errors import HyperlabError, InvalidConfig
from hyperlab.core.geometry import TorusBox
from hyperlab.core.io import read_configuration, write_configuration, write_coupling_csv, write_grid
from hyperlab.core.rng import RngSeed
from hyperlab.database.results_store import ResultStore
from hyperlab.experiments.experiment_manager import PLOT_KINDS, ExperimentManager
from hyperlab.experiments.models import ExperimentConfig
from hyperlab.generators.processes import sample
from hyperlab.generators.specs import has_exact_count, parse_process_spec, spec_label
from hyperlab.services.coulomb_service import (
    CoulombService,
    condition_point_count,
    curl_residual,
    divergence_residual,
    energy_per_volume,
    solve_field,
)
from hyperlab.services.report_service import ReportService
from hyperlab.services.spectral_service import RadialSpectrum, SpectralService
from hyperlab.services.transport_service import ENTROPIC, EXACT, TransportService
from hyperlab.services.variance_service import VarianceService
from hyperlab.settings import Settings

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_ERROR = 2
EXIT_IO_ERROR = 4

TRANSPORT_METHODS = {"exact": EXACT, EXACT: EXACT, ENTROPIC: ENTROPIC}


def _read_spec(text: str):
    """--spec takes inline JSON, a path to a spec file, or @path"""
    if text.startswith("@"):
        text = text[1:]
    if not text.lstrip().startswith("{"):
        try:
            text = Path(text).read_text()
        except OSError as e:
            raise InvalidConfig(f"cannot read process spec {text!r}: {e}") from e
    return parse_process_spec(text)


def _floats(text: str) -> List[float]:
    return [float(value) for value in text.split(",") if value.strip()]


def _add_sampling_arguments(parser: argparse.ArgumentParser, replicas: int = 100):
    parser.add_argument("--spec", required=True, help='process spec file, inline JSON such as \'{"kind": "poisson"}\', or @file.json')
    parser.add_argument("--L", type=float, required=True, help="torus side length")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--replicas", type=int, default=replicas)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperlab", description="Hyperuniformity, Coulomb energy and transport estimators")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="sample one configuration and write it to a file")
    generate.add_argument("--spec", required=True)
    generate.add_argument("--L", type=float, required=True)
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--stream", type=int, default=0)
    generate.add_argument("--out", type=Path, required=True)

    variance = commands.add_parser("variance", help="number variance sigma(r) and the HU* series")
    _add_sampling_arguments(variance)
    variance.add_argument("--radii", type=_floats, required=True, help="comma separated radii")
    variance.add_argument("--centers", type=int, default=1, help="ball centers per replica")
    variance.add_argument("--hustar", type=int, default=None, metavar="N_MAX", help="also evaluate sum_{m<=N_MAX} sigma(2^m)")
    variance.add_argument("--out", type=Path, default=None, help="CSV for the sigma curve")

    spectrum = commands.add_parser("spectrum", help="structure factor, radially binned")
    _add_sampling_arguments(spectrum, replicas=50)
    spectrum.add_argument("--omega-max", type=float, default=4.0)
    spectrum.add_argument("--sigma", type=_floats, default=[], help="radii at which to evaluate sigma from the spectrum")
    spectrum.add_argument("--out", type=Path, default=None, help="CSV of radial bins")

    sc = commands.add_parser("sc", help="spectral condition integral and its divergence verdict")
    sc.add_argument("--in", "--spectrum-csv", dest="spectrum_csv", type=Path, default=None, help="radial CSV written by `spectrum`")
    sc.add_argument("--spec", default=None)
    sc.add_argument("--L", type=float, default=None)
    sc.add_argument("--seed", type=int, default=0)
    sc.add_argument("--replicas", type=int, default=50)
    sc.add_argument("--omega-max", type=float, default=4.0)

    coulomb = commands.add_parser("coulomb", help="truncated field energy per unit volume")
    _add_sampling_arguments(coulomb, replicas=4)
    coulomb.add_argument("--eta", type=float, default=1.0)
    coulomb.add_argument("--grid", "--grid-n", dest="grid_n", type=int, default=None, help="grid points per side (default 8 L)")
    coulomb.add_argument("--condition", action="store_true", help="condition the point count to L^2")
    coulomb.add_argument("--save-grid", type=Path, default=None, help="write the first replica's field grid")
    coulomb.add_argument("--out", type=Path, default=None, help="CSV of per-replica energies")

    transport = commands.add_parser("transport", help="W_p cost per unit volume to Lebesgue")
    transport.add_argument("--configuration", type=Path, default=None, help="configuration file from `generate`")
    transport.add_argument("--spec", default=None)
    transport.add_argument("--L", type=float, default=None)
    transport.add_argument("--seed", type=int, default=0)
    transport.add_argument("--replicas", type=int, default=1, help="configurations sampled from --spec")
    transport.add_argument("--p", type=float, default=2.0)
    transport.add_argument("--grid-m", type=int, default=None, help="cells per side (default 2 L)")
    transport.add_argument("--method", choices=list(TRANSPORT_METHODS), default="exact")
    transport.add_argument("--epsilon", type=float, default=0.0)
    transport.add_argument("--coupling-out", type=Path, default=None, help="coupling of the first configuration")
    transport.add_argument("--out", type=Path, default=None, help="CSV of per-replica costs")

    for name, help_text in (("chain", "implication-chain experiment"), ("counterexamples", "counterexample experiment")):
        experiment = commands.add_parser(name, help=help_text)
        experiment.add_argument("--config", type=Path, default=None, help="ExperimentConfig JSON")
        experiment.add_argument("--output-dir", type=Path, default=None)
        experiment.add_argument("--dry-run", action="store_true", help="validate the config and stop")
        experiment.add_argument("--plots", default=",".join(PLOT_KINDS), help="comma separated plot CSV kinds")
    return parser


def _load_config(path: Optional[Path], kind: str) -> ExperimentConfig:
    try:
        document = json.loads(path.read_text()) if path else {}
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidConfig(f"cannot read config {path}: {e}") from e
    document.setdefault("kind", kind)
    if document["kind"] != kind:
        raise InvalidConfig(f"config kind {document['kind']!r} does not match command {kind!r}")
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as e:
        raise InvalidConfig(f"invalid experiment config: {e}") from e


def cmd_generate(args, settings: Settings) -> int:
    spec = _read_spec(args.spec)
    config = sample(spec, TorusBox(args.L), RngSeed(args.seed, args.stream))
    write_configuration(config, args.out)
    print(f"{spec_label(spec)}: {config.total_count} points ({len(config)} sites) on L={args.L:g} -> {args.out}")
    return EXIT_OK


def cmd_variance(args, settings: Settings) -> int:
    spec = _read_spec(args.spec)
    service = VarianceService(settings.threads)
    box = TorusBox(args.L)
    curve = service.estimate_sigma(spec, box, args.radii, args.replicas, RngSeed(args.seed), args.centers)
    frame = pd.DataFrame(curve.to_rows())
    print(frame.to_string(index=False))
    if args.hustar is not None:
        report = service.hustar_series(curve, args.hustar, box)
        print(f"HU* partial sums {report.partial_sums.round(4).tolist()}: {report.verdict} (tail exponent {report.tail_exponent:.3f})")
    if args.out:
        frame.to_csv(args.out, index=False, float_format="%.12g")
    return EXIT_OK


def cmd_spectrum(args, settings: Settings) -> int:
    spec = _read_spec(args.spec)
    service = SpectralService(settings.threads)
    estimate = service.structure_factor(spec, TorusBox(args.L), args.replicas, args.omega_max, RngSeed(args.seed))
    frame = estimate.radial_bins()
    if args.out:
        frame.to_csv(args.out, index=False, float_format="%.12g")
        print(f"{len(frame)} radial bins -> {args.out}")
    else:
        print(frame.to_string(index=False))
    for r in args.sigma:
        print(f"sigma({r:g}) from spectrum: {service.sigma_via_spectrum(estimate, r):.5g}")
    return EXIT_OK


def _first_replica(spec, box: TorusBox, seed: RngSeed, condition: bool):
    """The configuration replica 0 of an estimator sees."""
    config = sample(spec, box, seed.replica(0))
    return condition_point_count(config, seed.replica(0).child(3)) if condition else config


def cmd_sc(args, settings: Settings) -> int:
    service = SpectralService(settings.threads)
    if args.spectrum_csv:
        estimate = RadialSpectrum.from_frame(pd.read_csv(args.spectrum_csv), args.L)
    elif args.spec and args.L:
        estimate = service.structure_factor(
            _read_spec(args.spec), TorusBox(args.L), args.replicas, args.omega_max, RngSeed(args.seed)
        )
    else:
        raise InvalidConfig("sc needs --in, or --spec together with --L")
    result = service.sc_integral(estimate)
    print(f"SC integral {result.value:.5g}: {result.verdict} (tail exponent {result.tail_exponent:.3f})")
    print(f"shell terms {[round(term, 5) for term in result.shell_terms]}")
    return EXIT_OK


def cmd_coulomb(args, settings: Settings) -> int:
    spec = _read_spec(args.spec)
    box = TorusBox(args.L)
    grid_n = args.grid_n or 8 * box.integer_side()
    condition = args.condition or not has_exact_count(spec)
    estimate = CoulombService(settings.threads).coul_estimate(
        spec, box, args.eta, args.replicas, grid_n, RngSeed(args.seed), condition
    )
    print(f"Coul_eta (eta={args.eta:g}, L={args.L:g}): {estimate.mean:.6g} +/- {estimate.stderr:.2g} over {estimate.replicas} replicas")
    if args.out:
        frame = pd.DataFrame({
            "replica": range(estimate.replicas),
            "L": args.L,
            "eta": args.eta,
            "grid_n": grid_n,
            "energy": estimate.energies,
        })
        frame.to_csv(args.out, index=False, float_format="%.12g")
        print(f"{estimate.replicas} energies -> {args.out}")
    if args.save_grid:
        truncated = solve_field(_first_replica(spec, box, RngSeed(args.seed), condition), args.eta, grid_n)
        write_grid(truncated.grid, args.save_grid)
        print(
            f"field grid -> {args.save_grid} (energy {energy_per_volume(truncated):.6g}, "
            f"div residual {divergence_residual(truncated):.2e}, curl residual {curl_residual(truncated):.2e})"
        )
    return EXIT_OK


def cmd_transport(args, settings: Settings) -> int:
    method = TRANSPORT_METHODS[args.method]
    service = TransportService(settings.threads)
    if args.configuration:
        config = read_configuration(args.configuration)
        grid_m = args.grid_m or 2 * config.box.integer_side()
        result = service.wp_to_lebesgue(config, grid_m, args.p, method, args.epsilon, settings.max_exact_entries)
        costs = np.array([result.cost_per_volume])
    elif args.spec and args.L:
        spec = _read_spec(args.spec)
        box = TorusBox(args.L)
        grid_m = args.grid_m or 2 * box.integer_side()
        seed = RngSeed(args.seed)
        costs = service.replica_costs(spec, box, args.replicas, seed, grid_m, args.p, method, args.epsilon)
        if args.coupling_out:
            config = _first_replica(spec, box, seed, not has_exact_count(spec))
            result = service.wp_to_lebesgue(config, grid_m, args.p, method, args.epsilon, settings.max_exact_entries)
    else:
        raise InvalidConfig("transport needs --configuration, or --spec together with --L")

    if args.coupling_out:
        write_coupling_csv(result.coupling, grid_m, args.coupling_out)
        print(f"coupling -> {args.coupling_out}")
    stderr = costs.std(ddof=1) / np.sqrt(len(costs)) if len(costs) > 1 else 0.0
    print(f"w_{args.p:g} per unit volume ({method}, grid {grid_m}): {costs.mean():.6g} +/- {stderr:.2g} over {len(costs)} configurations")
    if args.out:
        frame = pd.DataFrame({
            "replica": range(len(costs)),
            "grid_m": grid_m,
            "method": method,
            "p": args.p,
            "cost_per_volume": costs,
        })
        frame.to_csv(args.out, index=False, float_format="%.12g")
        print(f"{len(costs)} costs -> {args.out}")
    return EXIT_OK


def cmd_experiment(args, settings: Settings) -> int:
    config = _load_config(args.config, args.command)
    manager = ExperimentManager(settings.threads)
    if args.dry_run:
        manager.validate_config(config)
        print(f"Config {config.name!r} is valid")
        return EXIT_OK

    report = manager.run(config)
    output_dir = args.output_dir or Path(config.output_dir or settings.output_dir)
    store = ResultStore(output_dir)
    run_dir = store.connect(config.name)
    renderer = ReportService()
    if not store.save_report(report, renderer.render_markdown(report)):
        store.close()
        logging.error(f"Report {config.name!r} was not written; fix {output_dir} and rerun")
        return EXIT_IO_ERROR
    for kind in [kind for kind in args.plots.split(",") if kind]:
        try:
            manager.emit_plot_data(report, kind, run_dir)
        except HyperlabError as e:
            logging.info(f"Skipping plot data {kind}: {e}")
    store.close()
    print(renderer.render_summary(report))
    print(f"Results in {run_dir}")
    return EXIT_OK if report.passed else EXIT_CHECKS_FAILED


COMMANDS = {
    "generate": cmd_generate,
    "variance": cmd_variance,
    "spectrum": cmd_spectrum,
    "sc": cmd_sc,
    "coulomb": cmd_coulomb,
    "transport": cmd_transport,
    "chain": cmd_experiment,
    "counterexamples": cmd_experiment,
}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    settings = Settings()
    logging.basicConfig(level=settings.log_level, format="%(asctime)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, settings)
    except HyperlabError as e:
        logging.error(f"{type(e).__name__}: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        logging.error(f"I/O error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
