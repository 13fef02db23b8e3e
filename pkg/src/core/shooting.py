"""
Shooting Module - Inexact matching by optimizing initial momenta
Objective J = h(x0) + g(q(1), a(1)), its exact discrete gradient through the
adjoint sweep, an Armijo gradient-descent optimizer and the transversality
diagnostic at t = 1
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from src.core.errors import DivergenceError, ShapeError
from src.core.hamiltonian import PhaseLayout, PhasePoint, HamiltonianSystem
from src.core.integrator import Scheme, Trajectory, adjoint_sweep, shoot
from src.core.simgroup import (
    SimElement, SimMomentum, orthogonality_defect, sim_act, sim_conserved_quantities,
)
from src.core.state import MultiscaleConfiguration, MultiscaleMomentum, RegistrationProblem

logger = logging.getLogger(__name__)


class StepPolicy(Enum):
    """How the trial step of each Armijo search is chosen"""
    FIXED = "fixed"        # constant initial step
    GROW = "grow"          # last accepted step, doubled
    BB = "bb"              # Barzilai–Borwein step


class MatchStatus(Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    STAGNATED = "stagnated"


@dataclass
class OptimizerOptions:
    """Gradient descent settings"""
    max_iters: int = 500
    grad_tol: float = 1e-6
    armijo_c: float = 1e-4
    initial_step: float = 1.0
    step_policy: StepPolicy = StepPolicy.BB
    max_halvings: int = 40
    multi_start: int = 1
    multi_start_scale: float = 0.1
    seed: int = 0
    n_jobs: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            'max_iters': self.max_iters,
            'grad_tol': self.grad_tol,
            'armijo_c': self.armijo_c,
            'initial_step': self.initial_step,
            'step_policy': self.step_policy.value,
            'max_halvings': self.max_halvings,
            'multi_start': self.multi_start,
            'multi_start_scale': self.multi_start_scale,
        }


# ============== DATA TERM ==============

def _target_layout(q1: MultiscaleConfiguration, prob: RegistrationProblem) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked target points and the center of mass attached to each row"""
    if not q1.same_shape(prob.target):
        raise ShapeError(f"Endpoint shape {q1.counts} differs from target shape {prob.target.counts}")
    centers = prob.target_centers()
    return prob.target.stacked(), centers[prob.target.scale_index()]


def endpoint_residuals(q1: MultiscaleConfiguration, a1: SimElement, prob: RegistrationProblem) -> np.ndarray:
    """
    q_i^ℓ − a·q_{T,i}^ℓ for every stacked landmark

    Rows of scales left out of prob.data_scales are zero, so the cost and the
    costate see only the scored scales.
    """
    _target_layout(q1, prob)
    moved = sim_act(a1, prob.target, prob.target_centers())
    res = q1.stacked() - moved.stacked()
    if prob.data_scales is not None:
        res[~prob.data_mask()] = 0.0
    return res


def endpoint_cost(q1: MultiscaleConfiguration, a1: SimElement, prob: RegistrationProblem) -> float:
    """g(q, a) = λ/2 Σ_ℓ Σ_i |q_i^ℓ − ρR(q_{T,i}^ℓ − q_{T,c}^ℓ) − q_{T,c}^ℓ − τ|², ℓ over the scored scales"""
    res = endpoint_residuals(q1, a1, prob)
    return 0.5 * prob.data_weight * float(np.sum(res * res))


def endpoint_costate(q1: MultiscaleConfiguration, a1: SimElement,
                     prob: RegistrationProblem) -> Tuple[MultiscaleMomentum, SimMomentum]:
    """(p(1), p_a(1)) = −dg(q(1), a(1))"""
    target, centers = _target_layout(q1, prob)
    offsets = target - centers
    p1 = -prob.data_weight * endpoint_residuals(q1, a1, prob)
    p_rho = -float(np.sum(p1 * (offsets @ a1.R.T)))
    p_R = -a1.rho * p1.T @ offsets
    p_tau = -p1.sum(axis=0)
    return MultiscaleMomentum.from_stacked(p1, q1.counts), SimMomentum(p_rho, p_R, p_tau)


def p_rho_readings(q1: MultiscaleConfiguration, a1: SimElement, prob: RegistrationProblem) -> Dict[str, float]:
    """
    Both readings of the terminal p_ρ formula

    The scalar reading −Σ⟨p_i, R(q_{T,i} − q_{T,c})⟩ is the one used; the
    literal reading −Σ p_i (q_{T,i} − q_{T,c})ᵀRᵀ is a matrix whose trace
    must coincide with it.
    """
    target, centers = _target_layout(q1, prob)
    offsets = target - centers
    p1 = -prob.data_weight * endpoint_residuals(q1, a1, prob)
    scalar = -float(np.sum(p1 * (offsets @ a1.R.T)))
    literal = -(p1.T @ offsets) @ a1.R.T
    trace = float(np.trace(literal))
    return {'scalar': scalar, 'literal_trace': trace, 'divergence': abs(scalar - trace)}


# ============== OBJECTIVE AND GRADIENT ==============

class ShootingObjective:
    """
    J(θ) for the flat vector θ of initial momenta (p0 and, with the similarity
    layer enabled, p_a0); every evaluation owns its trajectory
    """

    def __init__(self, prob: RegistrationProblem, n_steps: int, scheme: Scheme = Scheme.RK4):
        self.prob = prob
        self.n_steps = n_steps
        self.scheme = scheme
        self.layout = PhaseLayout.for_state(prob.source)
        self.system = HamiltonianSystem(prob.cfg, self.layout)
        self.mask = self.layout.momentum_mask(prob.sim_enabled)
        self.base = self.layout.pack(PhasePoint.initial(prob.source, MultiscaleMomentum.zeros_like(prob.source)))

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def initial_state(self, theta: np.ndarray) -> np.ndarray:
        z0 = self.base.copy()
        z0[self.mask] = theta
        return z0

    def params_from(self, p0: MultiscaleMomentum, pa0: Optional[SimMomentum] = None) -> np.ndarray:
        p0.check_compatible(self.prob.source)
        z0 = self.base.copy()
        z0[self.layout.slices['p']] = p0.stacked().ravel()
        if self.prob.sim_enabled and pa0 is not None:
            z0[self.layout.slices['p_rho']] = pa0.p_rho
            z0[self.layout.slices['p_R']] = pa0.p_R.ravel()
            z0[self.layout.slices['p_tau']] = pa0.p_tau
        return z0[self.mask]

    def momenta_from(self, theta: np.ndarray) -> Tuple[MultiscaleMomentum, SimMomentum]:
        x0 = self.layout.unpack(self.initial_state(theta))
        return x0.p, x0.pa

    def shoot(self, theta: np.ndarray) -> Trajectory:
        return shoot(self.prob.cfg, self.layout.unpack(self.initial_state(theta)), self.n_steps, self.scheme)

    def value(self, traj: Trajectory) -> float:
        final = traj.final()
        return self.system.energy(traj.states[0]) + endpoint_cost(final.q, final.a, self.prob)

    def evaluate(self, theta: np.ndarray) -> Tuple[float, Trajectory]:
        traj = self.shoot(theta)
        return self.value(traj), traj

    def terminal_gradient(self, traj: Trajectory) -> np.ndarray:
        """∂g/∂x_N as a flat vector (zero on the momentum slots)"""
        final = traj.final()
        p1, pa1 = endpoint_costate(final.q, final.a, self.prob)
        lam = np.zeros(self.layout.size)
        s = self.layout.slices
        lam[s['q']] = -p1.stacked().ravel()
        lam[s['rho']] = -pa1.p_rho
        lam[s['R']] = -pa1.p_R.ravel()
        lam[s['tau']] = -pa1.p_tau
        return lam

    def gradient(self, traj: Trajectory) -> np.ndarray:
        """Exact gradient of the discrete objective with respect to θ"""
        grad = adjoint_sweep(traj, self.terminal_gradient(traj), self.scheme)
        # ∂h/∂p and ∂h/∂p_a are the position parts of the vector field
        field_at_start = self.system.rhs(traj.states[0])
        s = self.layout.slices
        for momentum_slot, position_slot in (('p', 'q'), ('p_rho', 'rho'), ('p_R', 'R'), ('p_tau', 'tau')):
            grad[s[momentum_slot]] += field_at_start[s[position_slot]]
        return grad[self.mask]


def objective(p0: MultiscaleMomentum, pa0: Optional[SimMomentum], prob: RegistrationProblem,
              n_steps: int, scheme: Scheme = Scheme.RK4) -> float:
    """J(p0, p_a0) = h(x0) + g(shoot(x0).last)"""
    obj = ShootingObjective(prob, n_steps, scheme)
    value, _ = obj.evaluate(obj.params_from(p0, pa0))
    return value


def gradient(p0: MultiscaleMomentum, pa0: Optional[SimMomentum], prob: RegistrationProblem,
             n_steps: int, scheme: Scheme = Scheme.RK4) -> Tuple[MultiscaleMomentum, Optional[SimMomentum]]:
    """
    Gradient of the discrete objective over (p0, p_a0)

    Returns:
        (∂J/∂p0, ∂J/∂p_a0); the second entry is None when the similarity layer is off
    """
    obj = ShootingObjective(prob, n_steps, scheme)
    _, traj = obj.evaluate(obj.params_from(p0, pa0))
    grad = np.zeros(obj.layout.size)
    grad[obj.mask] = obj.gradient(traj)
    tangent = obj.layout.unpack_tangent(grad)
    return tangent.dp, (tangent.dpa if prob.sim_enabled else None)


# ============== OPTIMIZER ==============

@dataclass(eq=False)
class MatchResult:
    """Optimized initial momenta with the trajectory and diagnostics"""
    p0: MultiscaleMomentum
    pa0: SimMomentum
    trajectory: Trajectory
    history: List[float]
    grad_norms: List[float]
    step_sizes: List[float]
    status: MatchStatus
    iterations: int
    initial_endpoint_cost: float
    final_endpoint_cost: float
    transversality: Dict[str, Optional[float]]
    max_energy_drift: float
    conserved_drift: Dict[str, float]
    orthogonality_defect: float
    p_rho_readings: Dict[str, float]
    processing_time: float = 0.0
    start_index: int = 0
    notes: List[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status is MatchStatus.CONVERGED

    @property
    def objective(self) -> float:
        return self.history[-1]

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization (trajectory excluded)"""
        return {
            'status': self.status.value,
            'iterations': self.iterations,
            'objective': self.objective,
            'initial_objective': self.history[0],
            'initial_endpoint_cost': self.initial_endpoint_cost,
            'final_endpoint_cost': self.final_endpoint_cost,
            'endpoint_cost_ratio': (self.final_endpoint_cost / self.initial_endpoint_cost
                                    if self.initial_endpoint_cost > 0 else 0.0),
            'final_grad_norm': self.grad_norms[-1] if self.grad_norms else None,
            'transversality': self.transversality,
            'max_energy_drift': self.max_energy_drift,
            'conserved_drift': self.conserved_drift,
            'orthogonality_defect': self.orthogonality_defect,
            'p_rho_readings': self.p_rho_readings,
            'start_index': self.start_index,
            'notes': self.notes,
        }


def transversality_residuals(traj: Trajectory, prob: RegistrationProblem) -> Dict[str, Optional[float]]:
    """Max |shot costate − endpoint formula| per block at t = 1"""
    final = traj.final()
    p1, pa1 = endpoint_costate(final.q, final.a, prob)
    landmarks = float(np.max(np.abs(final.p.stacked() - p1.stacked()), initial=0.0))
    if not prob.sim_enabled:
        return {'landmarks': landmarks, 'p_rho': None, 'p_R': None, 'p_tau': None, 'max': landmarks}
    blocks = {
        'landmarks': landmarks,
        'p_rho': abs(final.pa.p_rho - pa1.p_rho),
        'p_R': float(np.max(np.abs(final.pa.p_R - pa1.p_R))),
        'p_tau': float(np.max(np.abs(final.pa.p_tau - pa1.p_tau))),
    }
    blocks['max'] = max(blocks.values())
    return blocks


def conserved_drift(traj: Trajectory) -> Dict[str, float]:
    """Max deviation of ρp_ρ, Rᵀp_R and p_τ from their initial values"""
    reference = None
    drift = {'rho_p_rho': 0.0, 'Rt_p_R': 0.0, 'p_tau': 0.0}
    for k in range(traj.n_steps + 1):
        x = traj.point(k)
        values = sim_conserved_quantities(x.a, x.pa)
        if reference is None:
            reference = values
            continue
        drift['rho_p_rho'] = max(drift['rho_p_rho'], abs(values['rho_p_rho'] - reference['rho_p_rho']))
        drift['Rt_p_R'] = max(drift['Rt_p_R'], float(np.linalg.norm(values['Rt_p_R'] - reference['Rt_p_R'])))
        drift['p_tau'] = max(drift['p_tau'], float(np.max(np.abs(values['p_tau'] - reference['p_tau']))))
    return drift


def _trial_step(opts: OptimizerOptions, last_step: Optional[float], bb_step: Optional[float]) -> float:
    if opts.step_policy is StepPolicy.FIXED or last_step is None:
        return opts.initial_step
    if opts.step_policy is StepPolicy.GROW:
        return 2.0 * last_step
    if bb_step is None:
        return 2.0 * last_step
    return float(np.clip(bb_step, 1e-10, 1e10))


def _descend(obj: ShootingObjective, theta0: np.ndarray, opts: OptimizerOptions):
    """Armijo gradient descent from theta0"""
    theta = np.array(theta0, dtype=float)
    value, traj = obj.evaluate(theta)
    grad = obj.gradient(traj)
    history, grad_norms, steps = [value], [float(np.linalg.norm(grad))], []
    max_drift = traj.energy_drift()
    status = MatchStatus.MAX_ITERS
    last_step, bb_step = None, None
    iterations = 0

    for iterations in range(opts.max_iters + 1):
        gnorm = grad_norms[-1]
        if gnorm <= opts.grad_tol:
            status = MatchStatus.CONVERGED
            break
        if iterations == opts.max_iters:
            break
        step = _trial_step(opts, last_step, bb_step)
        accepted = False
        for _ in range(opts.max_halvings + 1):
            candidate = theta - step * grad
            try:
                new_value, new_traj = obj.evaluate(candidate)
            except DivergenceError:
                step *= 0.5
                continue
            max_drift = max(max_drift, new_traj.energy_drift())
            if new_value < value and new_value <= value - opts.armijo_c * step * gnorm * gnorm:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            status = MatchStatus.STAGNATED
            logger.warning("Line search failed after %d halvings at iteration %d (|∇J| = %.3e)",
                           opts.max_halvings, iterations, gnorm)
            break

        new_grad = obj.gradient(new_traj)
        s_vec, y_vec = candidate - theta, new_grad - grad
        sy = float(s_vec @ y_vec)
        bb_step = float(s_vec @ s_vec) / sy if sy > 0 else None
        theta, value, traj, grad, last_step = candidate, new_value, new_traj, new_grad, step
        history.append(value)
        grad_norms.append(float(np.linalg.norm(grad)))
        steps.append(step)
        logger.debug("iter %d: J = %.10e |∇J| = %.3e step = %.3e", iterations + 1, value, grad_norms[-1], step)

    return theta, traj, history, grad_norms, steps, status, iterations, max_drift


def optimize(prob: RegistrationProblem, n_steps: int, opts: Optional[OptimizerOptions] = None,
             scheme: Scheme = Scheme.RK4) -> MatchResult:
    """
    Minimize J over the initial momenta, starting from zero

    With opts.multi_start > 1, extra starts from seeded random momenta run on a
    worker pool and the lowest final objective wins.
    """
    opts = opts or OptimizerOptions()
    start_time = time.perf_counter()
    obj = ShootingObjective(prob, n_steps, scheme)

    starts = [np.zeros(obj.size)]
    if opts.multi_start > 1:
        rng = np.random.default_rng(opts.seed)
        starts += [opts.multi_start_scale * rng.normal(size=obj.size) for _ in range(opts.multi_start - 1)]

    if len(starts) == 1:
        runs = [_descend(obj, starts[0], opts)]
    else:
        runs = Parallel(n_jobs=opts.n_jobs, prefer="threads")(
            delayed(_descend)(obj, theta0, opts) for theta0 in starts
        )
    best_index = int(np.argmin([run[2][-1] for run in runs]))
    theta, traj, history, grad_norms, steps, status, iterations, max_drift = runs[best_index]

    x0, final = traj.initial(), traj.final()
    p0, pa0 = obj.momenta_from(theta)
    result = MatchResult(
        p0=p0,
        pa0=pa0,
        trajectory=traj,
        history=history,
        grad_norms=grad_norms,
        step_sizes=steps,
        status=status,
        iterations=iterations,
        initial_endpoint_cost=endpoint_cost(prob.source, x0.a, prob),
        final_endpoint_cost=endpoint_cost(final.q, final.a, prob),
        transversality=transversality_residuals(traj, prob),
        max_energy_drift=max_drift,
        conserved_drift=conserved_drift(traj),
        orthogonality_defect=orthogonality_defect(final.a.R),
        p_rho_readings=p_rho_readings(final.q, final.a, prob),
        processing_time=time.perf_counter() - start_time,
        start_index=best_index,
    )
    if result.max_energy_drift > 1e-6:
        result.notes.append(f"energy drift {result.max_energy_drift:.3e} exceeds 1e-6; consider more steps")
        logger.warning("Geodesic energy drift %.3e above 1e-6", result.max_energy_drift)
    if result.p_rho_readings['divergence'] > 1e-12:
        result.notes.append("p_rho readings diverge")
    logger.info("Optimization %s after %d iterations: J = %.6e, g(1)/g(0) = %.3e",
                status.value, iterations, result.objective,
                result.final_endpoint_cost / result.initial_endpoint_cost if result.initial_endpoint_cost else 0.0)
    return result
