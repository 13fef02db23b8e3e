"""
File I/O - Problems, momenta and result bundles
Points and momenta are JSON; trajectories, histories and probe paths are flat
CSV tables written with 17 significant digits
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.config import Config, RunConfig, load_run_config
from src.core.errors import ParseError, ShapeError
from src.core.integrator import Trajectory
from src.core.shooting import MatchResult
from src.core.simgroup import SimMomentum
from src.core.state import MultiscaleConfiguration, MultiscaleMomentum, RegistrationProblem

logger = logging.getLogger(__name__)


# ============== JSON HELPERS ==============

def _read_json(path) -> Any:
    path = Path(path)
    if not path.exists():
        raise ParseError("file not found", path=str(path))
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path=str(path), line=e.lineno) from e


def _require(data: Dict[str, Any], key: str, path) -> Any:
    if not isinstance(data, dict) or key not in data:
        raise ParseError("missing required field", path=str(path), field=key)
    return data[key]


def _scales(value: Any, key: str, path, d: int) -> Tuple[np.ndarray, ...]:
    if not isinstance(value, list) or not value:
        raise ParseError("expected a non-empty list of scales", path=str(path), field=key)
    scales = []
    for ell, points in enumerate(value, start=1):
        if not isinstance(points, list):
            raise ParseError(f"scale {ell} must be a list of points", path=str(path), field=key)
        if any(not isinstance(pt, list) or len(pt) != d for pt in points):
            raise ShapeError(f"Every point of {key} scale {ell} must have {d} coordinates")
        try:
            arr = np.array(points, dtype=float).reshape(-1, d) if points else np.zeros((0, d))
        except (TypeError, ValueError) as e:
            raise ParseError(f"scale {ell} must hold numbers", path=str(path), field=key) from e
        scales.append(arr)
    return tuple(scales)


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps_canonical(data: Any) -> str:
    """Canonical JSON text: two-space indent, shortest round-trip floats, trailing newline"""
    return json.dumps(data, indent=Config.JSON_INDENT, default=_to_builtin) + "\n"


# ============== PROBLEMS ==============

def load_points(points_file) -> Tuple[MultiscaleConfiguration, MultiscaleConfiguration]:
    """
    Load source and target configurations from a points file

    Returns:
        (source, target); both checked for nested cardinalities
    """
    data = _read_json(points_file)
    d = _require(data, 'd', points_file)
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise ParseError("dimension must be a positive integer", path=str(points_file), field='d')
    source = MultiscaleConfiguration(_scales(_require(data, 'source', points_file), 'source', points_file, d))
    target = MultiscaleConfiguration(_scales(_require(data, 'target', points_file), 'target', points_file, d))
    if source.L != target.L:
        raise ShapeError(f"Source has {source.L} scales but target has {target.L}")
    source.check_nested()
    target.check_nested()
    return source, target


def load_problem(points_file, config_file=None,
                 overrides: Optional[Dict[str, Any]] = None) -> Tuple[RegistrationProblem, RunConfig]:
    """Structured problem plus its validated run configuration"""
    config = load_run_config(config_file)
    if overrides:
        config = config.with_overrides(overrides)
    source, target = load_points(points_file)
    cfg = config.scale_config(source.d)
    data_scales = tuple(config.data_scales) if config.data_scales is not None else None
    problem = RegistrationProblem(source, target, cfg, config.data_weight, config.sim_enabled, data_scales)
    logger.info("Loaded problem: d=%d, L=%d, counts=%s", source.d, source.L, source.counts)
    return problem, config


def points_to_dict(source: MultiscaleConfiguration, target: MultiscaleConfiguration) -> Dict[str, Any]:
    return {'d': source.d, 'source': source.to_lists(), 'target': target.to_lists()}


def dump_points(source: MultiscaleConfiguration, target: MultiscaleConfiguration) -> str:
    return dumps_canonical(points_to_dict(source, target))


def write_points(path, source: MultiscaleConfiguration, target: MultiscaleConfiguration) -> Path:
    path = Path(path)
    path.write_text(dump_points(source, target))
    return path


# ============== MOMENTA ==============

def _sim_momentum(data: Dict[str, Any], path, d: int) -> SimMomentum:
    try:
        pa = SimMomentum(
            float(_require(data, 'p_rho', path)),
            np.array(_require(data, 'p_R', path), dtype=float).reshape(d, d),
            np.array(_require(data, 'p_tau', path), dtype=float).reshape(d),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ShapeError):
            raise
        raise ShapeError(f"Similarity momentum in {path} does not fit d={d}") from e
    return pa


def load_momenta(path, q: MultiscaleConfiguration,
                 pa_path=None) -> Tuple[MultiscaleMomentum, Optional[SimMomentum]]:
    """
    Initial momenta for `q` from a momentum file

    The similarity part comes from the "pa" entry, or from a separate file
    holding either {"pa": {...}} or the bare {"p_rho", "p_R", "p_tau"} object.
    """
    data = _read_json(path)
    p = MultiscaleMomentum(_scales(_require(data, 'p', path), 'p', path, q.d))
    p.check_compatible(q)
    pa = _sim_momentum(data['pa'], path, q.d) if data.get('pa') is not None else None
    if pa_path is not None:
        extra = _read_json(pa_path)
        block = extra.get('pa', extra) if isinstance(extra, dict) else extra
        pa = _sim_momentum(block, pa_path, q.d)
    return p, pa


def momenta_to_dict(p: MultiscaleMomentum, pa: Optional[SimMomentum]) -> Dict[str, Any]:
    return {'p': p.to_lists(), 'pa': pa.to_dict() if pa is not None else None}


def write_momenta(path, p: MultiscaleMomentum, pa: Optional[SimMomentum]) -> Path:
    path = Path(path)
    path.write_text(dumps_canonical(momenta_to_dict(p, pa)))
    return path


# ============== TABLES ==============

def _columns(names: List[str], values: np.ndarray) -> Dict[str, np.ndarray]:
    values = np.asarray(values).reshape(-1, len(names))
    return {name: values[:, j] for j, name in enumerate(names)}


def _coordinate_columns(prefix: str, d: int) -> List[str]:
    return [f"{prefix}{j}" for j in range(d)]


def _matrix_columns(prefix: str, d: int) -> List[str]:
    return [f"{prefix}{i}{j}" for i in range(d) for j in range(d)]


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    """One row per (step, landmark): positions and momenta"""
    layout = traj.layout
    n, d = layout.n, layout.d
    steps = np.repeat(np.arange(traj.n_steps + 1), n)
    q = traj.states[:, layout.slices['q']].reshape(-1, d)
    p = traj.states[:, layout.slices['p']].reshape(-1, d)
    within_scale = np.concatenate([np.arange(c) for c in layout.counts])

    return pd.DataFrame({
        'step': steps,
        't': traj.times[steps],
        'scale': np.tile(layout.scale_index + 1, traj.n_steps + 1),
        'index': np.tile(within_scale, traj.n_steps + 1),
        **_columns(_coordinate_columns('x', d), q),
        **_columns(_coordinate_columns('p', d), p),
    })


def sim_trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    """One row per step: ρ, R, τ, their momenta and the energy"""
    d = traj.layout.d
    s = traj.layout.slices
    states = traj.states
    return pd.DataFrame({
        'step': np.arange(traj.n_steps + 1),
        't': traj.times,
        'rho': states[:, s['rho']][:, 0],
        **_columns(_matrix_columns('R', d), states[:, s['R']]),
        **_columns(_coordinate_columns('tau', d), states[:, s['tau']]),
        'p_rho': states[:, s['p_rho']][:, 0],
        **_columns(_matrix_columns('p_R', d), states[:, s['p_R']]),
        **_columns(_coordinate_columns('p_tau', d), states[:, s['p_tau']]),
        'energy': traj.energies(),
    })


def history_frame(result: MatchResult) -> pd.DataFrame:
    return pd.DataFrame({
        'iteration': np.arange(len(result.history)),
        'objective': result.history,
        'grad_norm': result.grad_norms,
        'step': [np.nan] + list(result.step_sizes),
    })


def probes_frame(paths: np.ndarray, times: np.ndarray, scale: int) -> pd.DataFrame:
    """One row per (step, probe) from an (N+1, m, d) array of probe positions"""
    n_steps, m, d = paths.shape[0] - 1, paths.shape[1], paths.shape[2]
    steps = np.repeat(np.arange(n_steps + 1), m)
    return pd.DataFrame({
        'step': steps,
        't': np.asarray(times)[steps],
        'scale': np.full(steps.size, scale),
        'probe': np.tile(np.arange(m), n_steps + 1),
        **_columns(_coordinate_columns('x', d), paths.reshape(-1, d)),
    })


def write_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format=Config.FLOAT_FORMAT)
    return path


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision='round_trip')


# ============== PLOT ==============

def write_trajectory_plot(traj: Trajectory, path, probe_paths: Optional[np.ndarray] = None,
                          title: str = "Landmark trajectories") -> Path:
    """Interactive HTML figure of landmark (and probe) paths; d = 2 or 3"""
    import plotly.graph_objects as go

    layout = traj.layout
    d = layout.d
    if d not in (2, 3):
        raise ShapeError(f"Trajectory plots need d = 2 or 3, got d={d}")
    q = traj.states[:, layout.slices['q']].reshape(traj.n_steps + 1, layout.n, d)
    fig = go.Figure()

    def add_path(points: np.ndarray, name: str, group: str, width: float):
        if d == 2:
            fig.add_trace(go.Scatter(x=points[:, 0], y=points[:, 1], mode='lines', name=name,
                                     legendgroup=group, line={'width': width}))
        else:
            fig.add_trace(go.Scatter3d(x=points[:, 0], y=points[:, 1], z=points[:, 2], mode='lines',
                                       name=name, legendgroup=group, line={'width': width}))

    for a in range(layout.n):
        add_path(q[:, a], f"scale {layout.scale_index[a] + 1} / {a}", f"scale {layout.scale_index[a] + 1}", 3)
    if probe_paths is not None:
        for j in range(probe_paths.shape[1]):
            add_path(probe_paths[:, j], f"probe {j}", "probes", 1)
    fig.update_layout(title=title, showlegend=False)
    path = Path(path)
    fig.write_html(str(path), include_plotlyjs='cdn')
    return path


# ============== RESULT BUNDLE ==============

def write_result_bundle(output_dir, traj: Trajectory, report: Dict[str, Any],
                        p0: MultiscaleMomentum, pa0: Optional[SimMomentum],
                        result: Optional[MatchResult] = None,
                        probe_paths: Optional[np.ndarray] = None, probe_scale: Optional[int] = None,
                        plot: bool = False) -> Dict[str, Path]:
    """
    Write every artifact of one run into output_dir

    Returns:
        Mapping artifact name -> written path
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = Config.RESULT_FILES
    written = {
        'momenta': write_momenta(out / names['momenta'], p0, pa0),
        'trajectory': write_csv(trajectory_frame(traj), out / names['trajectory']),
        'sim_trajectory': write_csv(sim_trajectory_frame(traj), out / names['sim_trajectory']),
    }
    if result is not None:
        written['history'] = write_csv(history_frame(result), out / names['history'])
    if probe_paths is not None:
        written['probes'] = write_csv(probes_frame(probe_paths, traj.times, probe_scale or 1), out / names['probes'])
    if plot:
        written['plot'] = write_trajectory_plot(traj, out / names['plot'], probe_paths)

    report_path = out / names['report']
    report_path.write_text(dumps_canonical(report))
    written['report'] = report_path
    logger.info("Wrote %d artifacts to %s", len(written), out)
    return written
