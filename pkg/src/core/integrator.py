"""
Integrator Module - Fixed-step shooting of phase trajectories
Explicit Euler and classical RK4 on [0, 1], dense storage of steps and stage
inputs, variational transport of landmark Jacobians and the exact discrete
adjoint of the shooting map
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple, Union

import numpy as np

from src.core.errors import ContractError, DivergenceError
from src.core.hamiltonian import Fault, HamiltonianSystem, PhasePoint, PhaseTangent
from src.core.kernels import ScaleConfig, velocity_and_jacobian_at
from src.core.simgroup import project_element

logger = logging.getLogger(__name__)


class Scheme(Enum):
    """Explicit fixed-step schemes"""
    EULER = "euler"
    RK4 = "rk4"

    @property
    def n_stages(self) -> int:
        return 1 if self is Scheme.EULER else 4


# RK4 stage input offsets (fraction of h applied to the previous stage slope)
RK4_OFFSETS = (0.0, 0.5, 0.5, 1.0)
RK4_WEIGHTS = (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0)


@dataclass(eq=False)
class Trajectory:
    """Samples x(t_k), t_k = k/N, plus the stage inputs of every step"""
    states: np.ndarray          # (N+1, size)
    stages: np.ndarray          # (N, n_stages, size)
    n_steps: int
    scheme: Scheme
    system: HamiltonianSystem

    @property
    def layout(self):
        return self.system.layout

    @property
    def cfg(self) -> ScaleConfig:
        return self.system.cfg

    @property
    def step_size(self) -> float:
        return 1.0 / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_steps + 1)

    def point(self, k: int) -> PhasePoint:
        return self.layout.unpack(self.states[k])

    def initial(self) -> PhasePoint:
        return self.point(0)

    def final(self, project_rotation: bool = False) -> PhasePoint:
        """x(1); optionally with R replaced by its nearest rotation"""
        x = self.point(self.n_steps)
        if project_rotation:
            x = PhasePoint(x.q, x.p, project_element(x.a), x.pa)
        return x

    def energies(self) -> np.ndarray:
        return np.array([self.system.energy(z) for z in self.states])

    def energy_drift(self) -> float:
        """max_k |h(x_k) − h(x_0)| / max(h(x_0), 1e-12)"""
        h = self.energies()
        return float(np.max(np.abs(h - h[0])) / max(h[0], 1e-12))


def integrate(f: Callable[[np.ndarray], np.ndarray], z0: np.ndarray, n_steps: int,
              scheme: Scheme = Scheme.RK4, direction: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Fixed-step integration of ż = direction·f(z) on [0, 1]

    Returns:
        (states (N+1, size), stage inputs (N, n_stages, size))
    """
    if n_steps < 1:
        raise ContractError(f"Step count must be >= 1, got {n_steps}")
    h = direction / n_steps
    z0 = np.asarray(z0, dtype=float)
    states = np.empty((n_steps + 1, z0.size))
    stages = np.empty((n_steps, scheme.n_stages, z0.size))
    states[0] = z0
    z = z0.copy()
    for k in range(n_steps):
        if scheme is Scheme.EULER:
            stages[k, 0] = z
            z = z + h * f(z)
        else:
            slope = np.zeros_like(z)
            increment = np.zeros_like(z)
            for s, (offset, weight) in enumerate(zip(RK4_OFFSETS, RK4_WEIGHTS)):
                y = z + (offset * h) * slope
                stages[k, s] = y
                slope = f(y)
                increment += weight * slope
            z = z + h * increment
        if not np.all(np.isfinite(z)):
            raise DivergenceError("Non-finite state during integration", step=k + 1)
        states[k + 1] = z
    return states, stages


def shoot(cfg: ScaleConfig, x0: PhasePoint, n_steps: int, scheme: Scheme = Scheme.RK4,
          fault: Optional[Fault] = None) -> Trajectory:
    """Integrate the Hamiltonian flow from x0 over [0, 1]"""
    system = HamiltonianSystem.for_state(cfg, x0, fault)
    z0 = system.layout.pack(x0)
    states, stages = integrate(system.rhs, z0, n_steps, scheme)
    # stage inputs may leave ρ > 0, stored steps may not
    left_group = np.flatnonzero(states[:, system.layout.slices['rho']].ravel() <= 0.0)
    if left_group.size:
        raise DivergenceError("Scaling ρ left the positive half-line", step=int(left_group[0]))
    logger.debug("Shot %d landmarks over %d %s steps", system.layout.n, n_steps, scheme.value)
    return Trajectory(states, stages, n_steps, scheme, system)


def shoot_backward(traj: Trajectory) -> np.ndarray:
    """Integrate the negated field from x(1) with the trajectory's scheme and steps"""
    states, _ = integrate(traj.system.rhs, traj.states[-1], traj.n_steps, traj.scheme, direction=-1.0)
    return states


def time_reversal_error(traj: Trajectory) -> float:
    """max |x̃(0) − x(0)| after shooting back from x(1)"""
    return float(np.max(np.abs(shoot_backward(traj)[-1] - traj.states[0])))


# ============== VARIATIONAL TRANSPORT ==============

def _scale_rows(traj: Trajectory, ell: int) -> slice:
    counts = traj.layout.counts
    if not 1 <= ell <= len(counts):
        raise IndexError(f"Scale index {ell} out of range 1..{len(counts)}")
    start = sum(counts[:ell - 1])
    return slice(start, start + counts[ell - 1])


def _landmark_jacobians(traj: Trajectory, z: np.ndarray, rows: slice, ell: int) -> np.ndarray:
    b = traj.layout.blocks(z)
    _, jac = velocity_and_jacobian_at(traj.cfg, b['q'], traj.layout.scale_index, b['p'],
                                      b['q'][rows], ell)
    return jac


def variational_transport(traj: Trajectory, ell: int, J0: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Integrate J̇_i = du^ℓ(q_i(t)) J_i for the scale-ℓ landmarks along a stored trajectory

    Uses the trajectory's own scheme and stage states, so J_i is the exact
    derivative of the discrete lifted flow at q_i(0).

    Returns:
        (N+1, n_ℓ, d, d) array of Jacobians
    """
    rows = _scale_rows(traj, ell)
    n_ell = rows.stop - rows.start
    d = traj.layout.d
    if J0 is None:
        J0 = np.broadcast_to(np.eye(d), (n_ell, d, d))
    J = np.array(J0, dtype=float)
    out = np.empty((traj.n_steps + 1, n_ell, d, d))
    out[0] = J
    h = traj.step_size
    for k in range(traj.n_steps):
        if traj.scheme is Scheme.EULER:
            A = _landmark_jacobians(traj, traj.stages[k, 0], rows, ell)
            J = J + h * A @ J
        else:
            slope = np.zeros_like(J)
            increment = np.zeros_like(J)
            for s, (offset, weight) in enumerate(zip(RK4_OFFSETS, RK4_WEIGHTS)):
                A = _landmark_jacobians(traj, traj.stages[k, s], rows, ell)
                slope = A @ (J + (offset * h) * slope)
                increment += weight * slope
            J = J + h * increment
        if not np.all(np.isfinite(J)):
            raise DivergenceError("Non-finite Jacobian during variational transport", step=k + 1)
        out[k + 1] = J
    return out


# ============== DISCRETE ADJOINT ==============

def adjoint_sweep(traj: Trajectory, terminal_costate: Union[np.ndarray, PhaseTangent],
                  scheme: Optional[Scheme] = None) -> np.ndarray:
    """
    Reverse-mode derivative of the discrete flow map x0 ↦ x_N

    Args:
        traj: trajectory produced by shoot
        terminal_costate: ∂cost/∂x_N, flat or as a PhaseTangent
        scheme: scheme the caller expects the trajectory to use

    Returns:
        ∂(cost ∘ flow)/∂x0 as a flat vector
    """
    if scheme is not None and scheme is not traj.scheme:
        raise ContractError(
            f"Adjoint requested for {scheme.value} but the trajectory was shot with {traj.scheme.value}"
        )
    if isinstance(terminal_costate, PhaseTangent):
        terminal_costate = traj.layout.pack_tangent(terminal_costate)
    lam = np.array(terminal_costate, dtype=float)
    if lam.shape != (traj.layout.size,):
        raise ContractError(f"Terminal costate must have size {traj.layout.size}, got {lam.shape}")

    h = traj.step_size
    vjp = traj.system.vjp
    for k in reversed(range(traj.n_steps)):
        if traj.scheme is Scheme.EULER:
            lam = lam + h * vjp(traj.stages[k, 0], lam)
            continue
        # x' = x + h Σ w_s k_s, k_s = f(x + c_s h k_{s−1})
        slope_bar = [h * w * lam for w in RK4_WEIGHTS]
        grad = lam.copy()
        for s in (3, 2, 1, 0):
            v = vjp(traj.stages[k, s], slope_bar[s])
            grad += v
            if s > 0:
                slope_bar[s - 1] = slope_bar[s - 1] + (RK4_OFFSETS[s] * h) * v
        lam = grad
    return lam
