"""
Momentum Module - Momentum-map diagnostics of the multiscale flow
Passive probes slaved to one scale's velocity field, pointwise momentum
transport Jᵀp = p(0), and lift uniqueness across landmark re-representations
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from src.core.errors import ConfigError, ContractError, DivergenceError, ShapeError
from src.core.hamiltonian import PhasePoint
from src.core.integrator import Scheme, Trajectory, RK4_OFFSETS, RK4_WEIGHTS, shoot, variational_transport
from src.core.kernels import ScaleConfig, check_scale_index, velocity_and_jacobian_at
from src.core.state import MultiscaleConfiguration, MultiscaleMomentum

logger = logging.getLogger(__name__)

SPLIT_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ProbeSet:
    """Zero-momentum points carried by the scale-`scale` velocity field"""
    scale: int
    points: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if points.ndim != 2:
            raise ShapeError(f"Probe points must be an (m, d) array, got shape {points.shape}")
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'scale', int(self.scale))

    @property
    def n_probes(self) -> int:
        return self.points.shape[0]


# ============== PROBE ADVECTION ==============

def _probe_velocity(traj: Trajectory, z: np.ndarray, x: np.ndarray, ell: int) -> np.ndarray:
    b = traj.layout.blocks(z)
    return velocity_and_jacobian_at(traj.cfg, b['q'], traj.layout.scale_index, b['p'], x, ell,
                                    with_jacobian=False)


def _advect_chunk(traj: Trajectory, points: np.ndarray, ell: int) -> np.ndarray:
    x = np.array(points, dtype=float)
    out = np.empty((traj.n_steps + 1,) + x.shape)
    out[0] = x
    h = traj.step_size
    for k in range(traj.n_steps):
        if traj.scheme is Scheme.EULER:
            x = x + h * _probe_velocity(traj, traj.stages[k, 0], x, ell)
        else:
            slope = np.zeros_like(x)
            increment = np.zeros_like(x)
            for s, (offset, weight) in enumerate(zip(RK4_OFFSETS, RK4_WEIGHTS)):
                slope = _probe_velocity(traj, traj.stages[k, s], x + (offset * h) * slope, ell)
                increment += weight * slope
            x = x + h * increment
        if not np.all(np.isfinite(x)):
            raise DivergenceError("Non-finite probe position", step=k + 1)
        out[k + 1] = x
    return out


def advect_probes(traj: Trajectory, probes: ProbeSet, n_jobs: int = 1) -> np.ndarray:
    """
    Integrate ẋ = u^ℓ(x) for every probe along a stored trajectory

    The field at each stage is rebuilt from the trajectory's own stage states,
    so the probes follow the discrete lifted flow exactly.

    Args:
        traj: trajectory produced by shoot
        probes: probe positions and the scale they are slaved to
        n_jobs: worker count for independent probe chunks

    Returns:
        (N+1, m, d) probe positions
    """
    check_scale_index(traj.cfg, probes.scale)
    if probes.n_probes and probes.points.shape[1] != traj.layout.d:
        raise ShapeError(f"Probes have dimension {probes.points.shape[1]}, trajectory {traj.layout.d}")
    if probes.n_probes == 0:
        return np.empty((traj.n_steps + 1, 0, traj.layout.d))

    n_chunks = max(1, min(int(n_jobs), probes.n_probes))
    if n_chunks == 1:
        return _advect_chunk(traj, probes.points, probes.scale)
    chunks = np.array_split(probes.points, n_chunks)
    paths = Parallel(n_jobs=n_chunks, prefer="threads")(
        delayed(_advect_chunk)(traj, chunk, probes.scale) for chunk in chunks
    )
    logger.debug("Advected %d probes in %d chunks", probes.n_probes, n_chunks)
    return np.concatenate(paths, axis=1)


def probe_grid(bounds: Sequence[Sequence[float]], resolution: Union[int, Sequence[int]]) -> np.ndarray:
    """Regular grid over the box `bounds` = [(lo, hi), ...], one row per point"""
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ConfigError(f"Grid bounds must be a list of (low, high) pairs, got shape {bounds.shape}")
    if np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ConfigError("Grid bounds must satisfy low < high in every dimension")
    d = bounds.shape[0]
    counts = [int(resolution)] * d if np.isscalar(resolution) else [int(r) for r in resolution]
    if len(counts) != d or any(c < 1 for c in counts):
        raise ConfigError(f"Grid resolution must give a positive count for each of the {d} dimensions")
    axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(bounds, counts)]
    mesh = np.meshgrid(*axes, indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=1)


# ============== MOMENTUM TRANSPORT ==============

def momentum_transport_residuals(traj: Trajectory, ell: int) -> np.ndarray:
    """|J_i(1)ᵀ p_i(1) − p_i(0)|_∞ for each scale-ℓ landmark, with J_i(0) = Id"""
    jacobians = variational_transport(traj, ell)
    start, final = traj.initial(), traj.final()
    p0, p1 = start.p.scale(ell), final.p.scale(ell)
    transported = np.einsum('iab,ia->ib', jacobians[-1], p1)
    return np.max(np.abs(transported - p0), axis=1, initial=0.0)


def momentum_transport_residual(traj: Trajectory, ell: int) -> float:
    """max_i |J_i(1)ᵀ p_i(1) − p_i(0)|"""
    return float(np.max(momentum_transport_residuals(traj, ell), initial=0.0))


# ============== LIFT UNIQUENESS ==============

@dataclass(frozen=True)
class SplitSpec:
    """Replace landmark `index` of scale `scale` by copies carrying fractions of its momentum"""
    scale: int
    index: int
    fractions: Tuple[float, ...]

    def __post_init__(self):
        fractions = tuple(float(f) for f in self.fractions)
        object.__setattr__(self, 'fractions', fractions)
        if not fractions:
            raise ContractError("A split needs at least one fraction")
        if abs(sum(fractions) - 1.0) > SPLIT_SUM_TOL:
            raise ContractError(f"Split fractions must sum to 1, got {sum(fractions)!r}")


def split_representation(q: MultiscaleConfiguration, p: MultiscaleMomentum,
                         spec: SplitSpec) -> Tuple[MultiscaleConfiguration, MultiscaleMomentum]:
    """
    Re-represent the same initial momentum map with one landmark split

    The landmark keeps the first fraction; the other copies sit at the same
    position and are appended at the end of the scale.
    """
    p.check_compatible(q)
    points, covectors = q.scale(spec.scale), p.scale(spec.scale)
    if not 0 <= spec.index < points.shape[0]:
        raise IndexError(f"Landmark {spec.index} out of range for scale {spec.scale} ({points.shape[0]} points)")
    point, covector = points[spec.index], covectors[spec.index]

    new_points = np.vstack([points] + [point[None, :]] * (len(spec.fractions) - 1))
    new_covectors = np.vstack([covectors] + [f * covector[None, :] for f in spec.fractions[1:]])
    new_covectors[spec.index] = spec.fractions[0] * covector

    q_scales, p_scales = list(q.scales), list(p.scales)
    q_scales[spec.scale - 1] = new_points
    p_scales[spec.scale - 1] = new_covectors
    return MultiscaleConfiguration(tuple(q_scales)), MultiscaleMomentum(tuple(p_scales))


def lift_uniqueness_check(cfg: ScaleConfig, q: MultiscaleConfiguration, p: MultiscaleMomentum,
                          spec: SplitSpec, probes: ProbeSet, n_steps: int,
                          scheme: Scheme = Scheme.RK4, n_jobs: int = 1) -> float:
    """
    Shoot the original and the split representation and compare where an
    identical probe set ends up at t = 1

    Returns:
        max probe-position discrepancy at t = 1
    """
    q_split, p_split = split_representation(q, p, spec)
    original = shoot(cfg, PhasePoint.initial(q, p), n_steps, scheme)
    split = shoot(cfg, PhasePoint.initial(q_split, p_split), n_steps, scheme)
    paths_original = advect_probes(original, probes, n_jobs)
    paths_split = advect_probes(split, probes, n_jobs)
    return float(np.max(np.abs(paths_original[-1] - paths_split[-1]), initial=0.0))
