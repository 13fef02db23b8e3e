"""
Reports - Diagnostic dictionaries and terminal summaries for each command
"""

from typing import Any, Dict, List, Optional

import numpy as np

from src.app.check_suite import CheckReport
from src.config import Config, RunConfig
from src.core.integrator import Trajectory
from src.core.shooting import MatchResult, conserved_drift, endpoint_cost, transversality_residuals
from src.core.simgroup import orthogonality_defect
from src.core.state import RegistrationProblem

ICONS = Config.STATUS_ICONS


def format_value(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, (float, np.floating)):
        return f"{value:.3e}"
    return str(value)


# ============== REPORT DICTIONARIES ==============

def problem_summary(prob: RegistrationProblem) -> Dict[str, Any]:
    return {
        'd': prob.cfg.d,
        'L': prob.cfg.L,
        'sigmas': list(prob.cfg.sigmas),
        'counts': list(prob.source.counts),
        'data_weight': prob.data_weight,
        'data_scales': list(prob.scored_scales),
        'sim_enabled': prob.sim_enabled,
    }


def trajectory_diagnostics(traj: Trajectory) -> Dict[str, Any]:
    """Energy drift, Sim⁺ conserved-quantity drift and the orthogonality defect of R(1)"""
    energies = traj.energies()
    return {
        'n_steps': traj.n_steps,
        'scheme': traj.scheme.value,
        'initial_energy': float(energies[0]),
        'energy_drift': traj.energy_drift(),
        'conserved_drift': conserved_drift(traj),
        'orthogonality_defect': orthogonality_defect(traj.final().a.R),
    }


def match_report(result: MatchResult, prob: RegistrationProblem, config: RunConfig) -> Dict[str, Any]:
    return {
        'command': 'match',
        'problem': problem_summary(prob),
        'config': config.to_dict(),
        'result': result.to_dict(),
        'trajectory': trajectory_diagnostics(result.trajectory),
    }


def shoot_report(traj: Trajectory, prob: RegistrationProblem, config: RunConfig,
                 command: str = 'shoot', extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    final = traj.final()
    report = {
        'command': command,
        'problem': problem_summary(prob),
        'config': config.to_dict(),
        'endpoint_cost': endpoint_cost(final.q, final.a, prob),
        'transversality': transversality_residuals(traj, prob),
        'trajectory': trajectory_diagnostics(traj),
    }
    if extra:
        report.update(extra)
    return report


# ============== TERMINAL OUTPUT ==============

def check_table(report: CheckReport) -> str:
    """Pass/fail table with measured residuals against their tolerances"""
    frame = report.to_frame()
    if frame.empty:
        return "(no rules selected)"
    shown = frame[['suite', 'rule_id', 'measured', 'operator', 'tolerance', 'status']].copy()
    shown['measured'] = shown['measured'].map(format_value)
    shown['tolerance'] = shown['tolerance'].map(format_value)
    return shown.to_string(index=False)


def check_lines(report: CheckReport) -> List[str]:
    lines = [f"{ICONS['search']} Invariant check (seed {report.seed}, suites: {', '.join(report.suites)})"]
    if report.fault:
        lines.append(f"{ICONS['warning']} Fault injected: {report.fault}")
    lines.append(check_table(report))
    for suite, message in report.errors.items():
        lines.append(f"{ICONS['failure']} Suite {suite} aborted: {message}")
    if report.passed:
        lines.append(f"{ICONS['success']} All {len(report.outcomes)} invariants hold")
    else:
        failed = ", ".join(o.rule_id for o in report.failed) or "none"
        lines.append(f"{ICONS['failure']} {len(report.failed)} invariant(s) failed: {failed}")
    return lines


def match_lines(result: MatchResult) -> List[str]:
    icon = ICONS['success'] if result.converged else ICONS['warning']
    ratio = (result.final_endpoint_cost / result.initial_endpoint_cost
             if result.initial_endpoint_cost > 0 else 0.0)
    lines = [
        f"{icon} Optimization {result.status.value} after {result.iterations} iterations "
        f"({result.processing_time:.1f}s)",
        f"{ICONS['target']} Objective {result.history[0]:.6e} -> {result.objective:.6e}, "
        f"g(1)/g(0) = {ratio:.3e}",
        f"{ICONS['stats']} |grad J| = {format_value(result.grad_norms[-1])}, "
        f"energy drift = {format_value(result.max_energy_drift)}, "
        f"transversality = {format_value(result.transversality['max'])}",
    ]
    lines.extend(f"{ICONS['warning']} {note}" for note in result.notes)
    return lines


def shoot_lines(report: Dict[str, Any]) -> List[str]:
    traj = report['trajectory']
    return [
        f"{ICONS['success']} Shot {traj['n_steps']} {traj['scheme']} steps",
        f"{ICONS['stats']} energy drift = {format_value(traj['energy_drift'])}, "
        f"orthogonality defect = {format_value(traj['orthogonality_defect'])}, "
        f"endpoint cost = {format_value(report['endpoint_cost'])}",
    ]
