"""
Command Line - match, shoot, probe and check
Flags mirror the run configuration keys; exceptions become exit codes here
and nowhere else
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from src.app import io_files
from src.app.check_suite import run_checks
from src.app.report import check_lines, match_lines, match_report, shoot_lines, shoot_report
from src.config import Config, RunConfig, SCHEMES, STEP_POLICIES
from src.core.errors import ConfigError, RegistrationError, StagnationError
from src.core.hamiltonian import Fault, PhasePoint
from src.core.integrator import Scheme, shoot
from src.core.momentum import ProbeSet, advect_probes, probe_grid
from src.core.shooting import MatchStatus, optimize
from src.core.state import RegistrationProblem

logger = logging.getLogger(__name__)

ICONS = Config.STATUS_ICONS

# flag destination -> RunConfig key
OVERRIDE_KEYS = {
    'sigmas': 'scales.sigmas',
    'scheme': 'integrator.scheme',
    'n_steps': 'integrator.n_steps',
    'project_rotation': 'integrator.project_rotation',
    'max_iters': 'optimizer.max_iters',
    'grad_tol': 'optimizer.grad_tol',
    'armijo_c': 'optimizer.armijo_c',
    'initial_step': 'optimizer.initial_step',
    'step_policy': 'optimizer.step_policy',
    'max_halvings': 'optimizer.max_halvings',
    'multi_start': 'optimizer.multi_start',
    'multi_start_scale': 'optimizer.multi_start_scale',
    'grid_resolution': 'probes.resolution',
    'probe_scale': 'probes.scale',
    'data_weight': 'data_weight',
    'data_scales': 'data_scales',
    'sim_enabled': 'sim_enabled',
    'output_dir': 'output_dir',
    'seed': 'seed',
    'threads': 'threads',
}


def parse_grid_spec(text: str) -> Dict[str, Any]:
    """
    'lo:hi,lo:hi[/resolution]' -> {'probes.bounds': [...], 'probes.resolution': n}
    """
    spec, _, resolution = text.partition('/')
    try:
        bounds = [[float(v) for v in pair.split(':')] for pair in spec.split(',')]
        overrides: Dict[str, Any] = {'probes.bounds': bounds}
        if resolution:
            overrides['probes.resolution'] = int(resolution)
    except ValueError as e:
        raise ConfigError(f"Grid spec must look like 'lo:hi,lo:hi[/resolution]', got {text!r}") from e
    if any(len(pair) != 2 for pair in bounds):
        raise ConfigError(f"Grid spec must give lo:hi for every dimension, got {text!r}")
    return overrides


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {key: getattr(args, dest, None) for dest, key in OVERRIDE_KEYS.items()}
    if getattr(args, 'grid', None):
        overrides.update(parse_grid_spec(args.grid))
    return overrides


def _load(args: argparse.Namespace):
    problem, config = io_files.load_problem(args.points, args.config, collect_overrides(args))
    print(f"{ICONS['success']} Loaded {args.points}: d={problem.cfg.d}, L={problem.cfg.L}, "
          f"counts={list(problem.source.counts)}")
    return problem, config


# ============== COMMANDS ==============

def run_match(args: argparse.Namespace) -> int:
    problem, config = _load(args)
    scheme = Scheme(config.integrator.scheme)
    print(f"{ICONS['target']} Matching with {config.integrator.n_steps} {scheme.value} steps "
          f"(sim {'on' if problem.sim_enabled else 'off'})")
    result = optimize(problem, config.integrator.n_steps, config.optimizer_options(), scheme)

    report = match_report(result, problem, config)
    written = io_files.write_result_bundle(
        config.output_dir, result.trajectory, report, result.p0, result.pa0, result=result,
        plot=args.plot,
    )
    for line in match_lines(result):
        print(line)
    print(f"{ICONS['stats']} Results written to {Path(config.output_dir)} ({len(written)} files)")
    if result.status is not MatchStatus.CONVERGED:
        raise StagnationError(f"Optimizer stopped with status '{result.status.value}'",
                              iterations=result.iterations)
    return Config.EXIT_CODES['success']


def _shoot_from_files(args: argparse.Namespace, problem: RegistrationProblem, config: RunConfig):
    p0, pa0 = io_files.load_momenta(args.p0, problem.source, args.pa0)
    x0 = PhasePoint.initial(problem.source, p0, pa0)
    traj = shoot(problem.cfg, x0, config.integrator.n_steps, Scheme(config.integrator.scheme))
    return traj, p0, pa0


def _final_element(traj, config: RunConfig) -> Dict[str, Any]:
    return {'final_element': traj.final(config.integrator.project_rotation).a.to_dict()}


def run_shoot(args: argparse.Namespace) -> int:
    problem, config = _load(args)
    traj, p0, pa0 = _shoot_from_files(args, problem, config)
    report = shoot_report(traj, problem, config, extra=_final_element(traj, config))
    io_files.write_result_bundle(config.output_dir, traj, report, p0, pa0, plot=args.plot)
    for line in shoot_lines(report):
        print(line)
    return Config.EXIT_CODES['success']


def default_bounds(problem: RegistrationProblem, padding: float) -> List[List[float]]:
    points = np.vstack([problem.source.stacked(), problem.target.stacked()])
    low, high = points.min(axis=0) - padding, points.max(axis=0) + padding
    return [[float(a), float(b)] for a, b in zip(low, high)]


def run_probe(args: argparse.Namespace) -> int:
    problem, config = _load(args)
    traj, p0, pa0 = _shoot_from_files(args, problem, config)
    bounds = config.probes.bounds or default_bounds(problem, problem.cfg.sigma(1))
    scale = config.probes.scale or problem.cfg.L
    probes = ProbeSet(scale, probe_grid(bounds, config.probes.resolution))
    print(f"{ICONS['search']} Advecting {probes.n_probes} probes on scale {scale}")
    paths = advect_probes(traj, probes, n_jobs=config.threads)

    extra = _final_element(traj, config)
    extra['probes'] = {
        'scale': scale,
        'bounds': bounds,
        'resolution': config.probes.resolution,
        'count': probes.n_probes,
        'max_displacement': float(np.max(np.linalg.norm(paths[-1] - paths[0], axis=1), initial=0.0)),
    }
    report = shoot_report(traj, problem, config, command='probe', extra=extra)
    io_files.write_result_bundle(config.output_dir, traj, report, p0, pa0,
                                 probe_paths=paths, probe_scale=scale, plot=args.plot)
    for line in shoot_lines(report):
        print(line)
    return Config.EXIT_CODES['success']


def run_check(args: argparse.Namespace) -> int:
    fault = Fault(args.inject_fault) if args.inject_fault else None
    report = run_checks(seed=args.seed, suites=args.filter, fault=fault, n_jobs=args.threads)
    for line in check_lines(report):
        print(line)
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        io_files.write_csv(report.to_frame(), out / Config.RESULT_FILES['check'])
    if report.passed:
        return Config.EXIT_CODES['success']
    return Config.EXIT_CODES['invariant_failure']


# ============== PARSER ==============

def _run_flags() -> argparse.ArgumentParser:
    """Flags shared by match, shoot and probe; each mirrors a RunConfig key"""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('points', help='points file (JSON)')
    parent.add_argument('config', nargs='?', default=None, help='run configuration file (JSON)')
    parent.add_argument('-o', '--output-dir', dest='output_dir', help='result directory')
    parent.add_argument('--sigmas', type=float, nargs='+', help='kernel widths, coarse to fine')
    parent.add_argument('--scheme', choices=SCHEMES)
    parent.add_argument('--n-steps', dest='n_steps', type=int)
    parent.add_argument('--project-rotation', dest='project_rotation', action='store_true', default=None,
                        help='report R(1) projected onto the rotations')
    parent.add_argument('--max-iters', dest='max_iters', type=int)
    parent.add_argument('--grad-tol', dest='grad_tol', type=float)
    parent.add_argument('--armijo-c', dest='armijo_c', type=float)
    parent.add_argument('--initial-step', dest='initial_step', type=float)
    parent.add_argument('--step-policy', dest='step_policy', choices=STEP_POLICIES)
    parent.add_argument('--max-halvings', dest='max_halvings', type=int)
    parent.add_argument('--multi-start', dest='multi_start', type=int)
    parent.add_argument('--multi-start-scale', dest='multi_start_scale', type=float)
    parent.add_argument('--data-weight', dest='data_weight', type=float)
    parent.add_argument('--data-scales', dest='data_scales', type=int, nargs='+',
                        help='scales compared by the data term (default: all)')
    parent.add_argument('--sim-enabled', dest='sim_enabled', action=argparse.BooleanOptionalAction,
                        default=None)
    parent.add_argument('--grid-resolution', dest='grid_resolution', type=int)
    parent.add_argument('--probe-scale', dest='probe_scale', type=int)
    parent.add_argument('--seed', type=int)
    parent.add_argument('--threads', type=int)
    parent.add_argument('--plot', action='store_true', help='also write an interactive HTML figure')
    parent.add_argument('-v', '--verbose', action='store_true')
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='registration',
        description='Multiscale diffeomorphic landmark registration with a similarity layer',
    )
    commands = parser.add_subparsers(dest='command', required=True)
    run_flags = _run_flags()

    match = commands.add_parser('match', parents=[run_flags], help='optimize initial momenta')
    match.set_defaults(handler=run_match)

    shoot_cmd = commands.add_parser('shoot', parents=[run_flags], help='forward geodesic from given momenta')
    shoot_cmd.add_argument('--p0', required=True, help='momentum file')
    shoot_cmd.add_argument('--pa0', help='similarity momentum file')
    shoot_cmd.set_defaults(handler=run_shoot)

    probe = commands.add_parser('probe', parents=[run_flags], help='advect a probe grid')
    probe.add_argument('--p0', required=True, help='momentum file')
    probe.add_argument('--pa0', help='similarity momentum file')
    probe.add_argument('--grid', help="probe box 'lo:hi,lo:hi[/resolution]' (use --grid=... for negative bounds)")
    probe.set_defaults(handler=run_probe)

    check = commands.add_parser('check', help='run the invariant suites')
    check.add_argument('--filter', nargs='+', choices=Config.CHECK_SUITES, help='suites to run')
    check.add_argument('--seed', type=int, default=Config.DEFAULT_SEED)
    check.add_argument('--inject-fault', dest='inject_fault', choices=[f.value for f in Fault])
    check.add_argument('--threads', type=int, default=1)
    check.add_argument('-o', '--output-dir', dest='output_dir', help='also write check_report.csv here')
    check.add_argument('-v', '--verbose', action='store_true')
    check.set_defaults(handler=run_check)
    return parser


def configure_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except StagnationError as e:
        print(f"{ICONS['warning']} {e.message} (exit {e.exit_code})")
        return e.exit_code
    except RegistrationError as e:
        print(f"{ICONS['failure']} [{e.code}] {e.message}")
        logger.debug("Failure details: %s", e.to_dict())
        return e.exit_code
