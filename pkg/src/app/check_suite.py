"""
Invariant Suite - Seeded measurements of every certified property
Each suite measures residuals on random desk-scale instances; the verdicts
come from the invariant rules, tagged by suite name
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.config import Config
from src.core.errors import ConfigError, RegistrationError
from src.core.hamiltonian import (
    Fault, HamiltonianSystem, PhaseLayout, PhasePoint, finest_scale_reduction_check,
    reduced_hamiltonian,
)
from src.core.integrator import Scheme, shoot, time_reversal_error
from src.core.kernels import (
    ScaleConfig, velocity_and_jacobian_at, velocity_at, velocity_jacobian_at,
)
from src.core.momentum import (
    ProbeSet, SplitSpec, advect_probes, lift_uniqueness_check, momentum_transport_residual,
    probe_grid,
)
from src.core.rules_engine import RuleOutcome, RulesEngine
from src.core.shooting import (
    ShootingObjective, conserved_drift, endpoint_cost, endpoint_costate, p_rho_readings,
)
from src.core.simgroup import (
    SimElement, SimMomentum, orthogonality_defect, random_rotation, sim_act, sim_closed_form,
    sim_compose, sim_identity, sim_inverse,
)
from src.core.state import MultiscaleConfiguration, MultiscaleMomentum, RegistrationProblem, bands_from

logger = logging.getLogger(__name__)


# ============== NUMERICAL HELPERS ==============

def central_difference(f: Callable[[np.ndarray], float], z: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function"""
    z = np.array(z, dtype=float)
    grad = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = eps
        grad[i] = (f(z + e) - f(z - e)) / (2.0 * eps)
    return grad


def relative_error(actual: np.ndarray, expected: np.ndarray, floor: float = 1e-3) -> float:
    """max_i |a_i − e_i| / (|e_i| + floor·max|e|)"""
    actual, expected = np.ravel(actual), np.ravel(expected)
    scale = float(np.max(np.abs(expected), initial=0.0))
    if scale == 0.0:
        return float(np.max(np.abs(actual), initial=0.0))
    return float(np.max(np.abs(actual - expected) / (np.abs(expected) + floor * scale)))


def symplectic_gradient(layout: PhaseLayout, grad: np.ndarray) -> np.ndarray:
    """(∂h/∂p, −∂h/∂q, ∂h/∂p_a, −∂h/∂a) from a flat gradient of h"""
    s = layout.slices
    out = np.empty_like(grad)
    for position, momentum in (('q', 'p'), ('rho', 'p_rho'), ('R', 'p_R'), ('tau', 'p_tau')):
        out[s[position]] = grad[s[momentum]]
        out[s[momentum]] = -grad[s[position]]
    return out


# ============== RANDOM INSTANCES ==============

def random_configuration(rng: np.random.Generator, d: int, counts: Sequence[int],
                         spread: float = 1.0) -> MultiscaleConfiguration:
    return MultiscaleConfiguration(tuple(rng.uniform(-spread, spread, size=(n, d)) for n in counts))


def random_momentum(rng: np.random.Generator, q: MultiscaleConfiguration, scale: float) -> MultiscaleMomentum:
    return MultiscaleMomentum(tuple(scale * rng.normal(size=s.shape) for s in q.scales))


def random_sim_momentum(rng: np.random.Generator, d: int, scale: float) -> SimMomentum:
    return SimMomentum(scale * rng.normal(), scale * rng.normal(size=(d, d)), scale * rng.normal(size=d))


def random_element(rng: np.random.Generator, d: int, max_angle: float = 1.0) -> SimElement:
    return SimElement(math.exp(0.2 * rng.normal()), random_rotation(d, rng, max_angle),
                      0.3 * rng.normal(size=d))


def random_phase_point(rng: np.random.Generator, d: int, counts: Sequence[int],
                       momentum_scale: float = 0.5, sim_scale: float = 0.5) -> PhasePoint:
    q = random_configuration(rng, d, counts)
    return PhasePoint(q, random_momentum(rng, q, momentum_scale), random_element(rng, d),
                      random_sim_momentum(rng, d, sim_scale))


# ============== SUITES ==============

def kernels_suite(rng: np.random.Generator, fault: Optional[Fault] = None, n_jobs: int = 1) -> Dict[str, float]:
    """Band path against pair path, and the finest-scale reduction"""
    cfg = ScaleConfig(2, (1.0, 0.6, 0.35))
    q = random_configuration(rng, 2, (2, 3, 4))
    p = random_momentum(rng, q, 0.5)
    probes = rng.uniform(-1.5, 1.5, size=(10, 2))

    finest_only = MultiscaleMomentum(tuple(np.zeros_like(s) for s in p.scales[:-1]) + (p.scales[-1],))
    reduction = finest_scale_reduction_check(cfg, q, finest_only, probes)

    x = PhasePoint.initial(q, p)
    system = HamiltonianSystem.for_state(cfg, x)
    band_energy = reduced_hamiltonian(cfg, x)
    pair_energy = system.energy(system.layout.pack(x))

    bands = bands_from(q, p)
    velocity_gap, jacobian_gap = 0.0, 0.0
    for ell in range(1, cfg.L + 1):
        velocities, jacobians = velocity_and_jacobian_at(cfg, q.stacked(), q.scale_index(), p.stacked(),
                                                         probes, ell)
        for point, v, jac in zip(probes, velocities, jacobians):
            velocity_gap = max(velocity_gap, float(np.max(np.abs(v - velocity_at(cfg, bands, ell, point)))))
            jacobian_gap = max(jacobian_gap, float(np.max(np.abs(
                jac - velocity_jacobian_at(cfg, bands, ell, point)))))

    return {
        'reduction_discrepancy': reduction['discrepancy'],
        'telescoping_error': reduction['telescoping'],
        'pair_band_energy_gap': abs(pair_energy - band_energy) / max(abs(band_energy), 1e-12),
        'pair_band_velocity_gap': velocity_gap,
        'pair_band_jacobian_gap': jacobian_gap,
    }


def sim_suite(rng: np.random.Generator, fault: Optional[Fault] = None, n_jobs: int = 1) -> Dict[str, float]:
    """Noether quantities, ṗ_τ ≡ 0, closed-form flow and the group law"""
    drift = {'rho_p_rho': 0.0, 'Rt_p_R': 0.0, 'p_tau': 0.0}
    p_tau_rate, defect, closed_form_error = 0.0, 0.0, 0.0

    for d in (2, 3):
        cfg = ScaleConfig(d, (1.0,))
        q = MultiscaleConfiguration((np.zeros((1, d)),))
        p = MultiscaleMomentum.zeros_like(q)
        for trial in range(20):
            pa0 = random_sim_momentum(rng, d, 0.5)
            x0 = PhasePoint.initial(q, p, pa0)
            if trial < 5:
                traj = shoot(cfg, x0, 100, Scheme.RK4, fault)
                for key, value in conserved_drift(traj).items():
                    drift[key] = max(drift[key], value)
                defect = max(defect, orthogonality_defect(traj.final().a.R))

            traj = shoot(cfg, x0, 200, Scheme.RK4, fault)
            final = traj.final()
            a_t, pa_t = sim_closed_form(pa0, 1.0)
            closed_form_error = max(
                closed_form_error,
                abs(final.a.rho - a_t.rho),
                float(np.max(np.abs(final.a.R - a_t.R))),
                float(np.max(np.abs(final.a.tau - a_t.tau))),
                abs(final.pa.p_rho - pa_t.p_rho),
                float(np.max(np.abs(final.pa.p_R - pa_t.p_R))),
                float(np.max(np.abs(final.pa.p_tau - pa_t.p_tau))),
            )

            system = HamiltonianSystem.for_state(cfg, x0, fault)
            state = PhasePoint(q, p, random_element(rng, d), random_sim_momentum(rng, d, 0.5))
            rate = system.rhs(system.layout.pack(state))[system.layout.slices['p_tau']]
            p_tau_rate = max(p_tau_rate, float(np.max(np.abs(rate))))

    inverse_error = 0.0
    for d in (2, 3):
        a = random_element(rng, d)
        e = sim_compose(a, sim_inverse(a))
        identity = sim_identity(d)
        inverse_error = max(inverse_error, abs(e.rho - 1.0), float(np.max(np.abs(e.R - identity.R))),
                            float(np.max(np.abs(e.tau))))

    associativity_error = 0.0
    for d in (2, 3):
        a, b, c = (random_element(rng, d) for _ in range(3))
        left = sim_compose(sim_compose(a, b), c)
        right = sim_compose(a, sim_compose(b, c))
        associativity_error = max(associativity_error, abs(left.rho - right.rho),
                                  float(np.max(np.abs(left.R - right.R))),
                                  float(np.max(np.abs(left.tau - right.tau))))

    return {
        'rho_p_rho_drift': drift['rho_p_rho'],
        'Rt_p_R_drift': drift['Rt_p_R'],
        'p_tau_drift': drift['p_tau'],
        'p_tau_rate': p_tau_rate,
        'closed_form_error': closed_form_error,
        'orthogonality_defect': defect,
        'group_inverse_error': inverse_error,
        'group_associativity_error': associativity_error,
    }


def hamiltonian_suite(rng: np.random.Generator, fault: Optional[Fault] = None, n_jobs: int = 1,
                      n_instances: int = 20) -> Dict[str, float]:
    """Vector field against −/+ finite differences of h; VJP against finite differences"""
    rhs_error, vjp_error = 0.0, 0.0
    for trial in range(n_instances):
        d = 2 if trial % 2 == 0 else 3
        cfg = ScaleConfig(d, (1.0, 0.5))
        x = random_phase_point(rng, d, (2, 3))
        system = HamiltonianSystem.for_state(cfg, x, fault)
        layout = system.layout
        z = layout.pack(x)

        grad_h = central_difference(lambda w: reduced_hamiltonian(cfg, layout.unpack(w)), z)
        rhs_error = max(rhs_error, relative_error(system.rhs(z), symplectic_gradient(layout, grad_h)))

        c = rng.normal(size=layout.size)
        fd = central_difference(lambda w: float(c @ system.rhs(w)), z)
        vjp_error = max(vjp_error, relative_error(system.vjp(z, c), fd))

    return {'rhs_fd_error': rhs_error, 'vjp_fd_error': vjp_error}


def integrator_suite(rng: np.random.Generator, fault: Optional[Fault] = None, n_jobs: int = 1) -> Dict[str, float]:
    """Energy constancy, fourth-order drift decay, closed form and time symmetry"""
    cfg = ScaleConfig(2, (1.0, 0.5))
    x0 = random_phase_point(rng, 2, (3, 5), momentum_scale=0.3, sim_scale=0.3)
    x0 = PhasePoint.initial(x0.q, x0.p, x0.pa)

    traj = shoot(cfg, x0, 100, Scheme.RK4, fault)
    coarse = shoot(cfg, x0, 20, Scheme.RK4, fault).energy_drift()
    fine = shoot(cfg, x0, 40, Scheme.RK4, fault).energy_drift()

    single_cfg = ScaleConfig(2, (1.0,))
    q = random_configuration(rng, 2, (1,))
    p = random_momentum(rng, q, 1.0)
    single = shoot(single_cfg, PhasePoint.initial(q, p), 10, Scheme.RK4, fault).final()
    single_error = max(float(np.max(np.abs(single.q.stacked() - (q.stacked() + p.stacked())))),
                       float(np.max(np.abs(single.p.stacked() - p.stacked()))))

    return {
        'energy_drift': traj.energy_drift(),
        'energy_drift_ratio': coarse / fine if fine > 0 else math.inf,
        'single_landmark_error': single_error,
        'time_reversal_error': time_reversal_error(traj),
    }


def momentum_suite(rng: np.random.Generator, fault: Optional[Fault] = None, n_jobs: int = 1) -> Dict[str, float]:
    """Momentum transport, probe consistency and lift uniqueness"""
    cfg = ScaleConfig(2, (1.0, 0.5))
    q = random_configuration(rng, 2, (2, 2))
    p = random_momentum(rng, q, 0.5)
    x0 = PhasePoint.initial(q, p)

    traj = shoot(cfg, x0, 100)
    transport = max(momentum_transport_residual(traj, ell) for ell in range(1, cfg.L + 1))
    residual_coarse = max(momentum_transport_residual(shoot(cfg, x0, 20), ell) for ell in (1, 2))
    residual_fine = max(momentum_transport_residual(shoot(cfg, x0, 40), ell) for ell in (1, 2))

    landmark_gap = 0.0
    start = 0
    for ell in range(1, cfg.L + 1):
        n_ell = q.counts[ell - 1]
        paths = advect_probes(traj, ProbeSet(ell, q.scale(ell)), n_jobs)
        landmarks = traj.states[:, traj.layout.slices['q']].reshape(traj.n_steps + 1, -1, 2)
        landmark_gap = max(landmark_gap, float(np.max(np.abs(paths - landmarks[:, start:start + n_ell]))))
        start += n_ell

    far_point = q.stacked().max(axis=0) + 20.0 * cfg.sigma(1)
    far = advect_probes(traj, ProbeSet(cfg.L, far_point[None, :]))
    far_displacement = float(np.max(np.abs(far[-1] - far[0])))

    grid = ProbeSet(cfg.L, probe_grid([[-1.5, 1.5], [-1.5, 1.5]], 5))
    lift = {
        name: lift_uniqueness_check(cfg, q, p, spec, grid, 100, n_jobs=n_jobs)
        for name, spec in (
            ('lift_trivial', SplitSpec(1, 0, (1.0,))),
            ('lift_half', SplitSpec(1, 0, (0.5, 0.5))),
            ('lift_three', SplitSpec(2, 1, (0.5, 0.3, 0.2))),
        )
    }

    return {
        'transport_residual': transport,
        'transport_ratio': residual_coarse / residual_fine if residual_fine > 0 else math.inf,
        'probe_landmark_gap': landmark_gap,
        'far_probe_displacement': far_displacement,
        **lift,
    }


def shooting_suite(rng: np.random.Generator, fault: Optional[Fault] = None, n_jobs: int = 1) -> Dict[str, float]:
    """Adjoint gradient and endpoint costate against finite differences"""
    cfg = ScaleConfig(2, (1.0, 0.5))
    source = random_configuration(rng, 2, (2, 3))
    element = SimElement(1.1, random_rotation(2, rng, 0.3), 0.1 * rng.normal(size=2))
    centers = np.stack([s.mean(axis=0) for s in source.scales])
    moved = sim_act(element, source, centers)
    target = MultiscaleConfiguration(tuple(s + 0.05 * rng.normal(size=s.shape) for s in moved.scales))
    prob = RegistrationProblem(source, target, cfg, data_weight=1.0, sim_enabled=True)

    gradient_error = 0.0
    for scheme in (Scheme.RK4, Scheme.EULER):
        obj = ShootingObjective(prob, 10, scheme)
        theta = 0.2 * rng.normal(size=obj.size)
        _, traj = obj.evaluate(theta)
        fd = central_difference(lambda t: obj.evaluate(t)[0], theta)
        gradient_error = max(gradient_error, relative_error(obj.gradient(traj), fd))

    q1 = MultiscaleConfiguration(tuple(s + 0.2 * rng.normal(size=s.shape) for s in target.scales))
    a1 = random_element(rng, 2)
    p1, pa1 = endpoint_costate(q1, a1, prob)
    n = q1.n_total * 2

    def cost(w: np.ndarray) -> float:
        q = MultiscaleConfiguration.from_stacked(w[:n].reshape(-1, 2), q1.counts)
        a = SimElement(w[n], w[n + 1:n + 5].reshape(2, 2), w[n + 5:n + 7])
        return endpoint_cost(q, a, prob)

    w1 = np.concatenate([q1.stacked().ravel(), [a1.rho], a1.R.ravel(), a1.tau])
    costate = np.concatenate([p1.stacked().ravel(), [pa1.p_rho], pa1.p_R.ravel(), pa1.p_tau])
    costate_error = relative_error(costate, -central_difference(cost, w1))

    return {
        'gradient_fd_error': gradient_error,
        'costate_fd_error': costate_error,
        'p_rho_divergence': p_rho_readings(q1, a1, prob)['divergence'],
    }


SUITES: Dict[str, Callable[..., Dict[str, float]]] = {
    'kernels': kernels_suite,
    'sim': sim_suite,
    'hamiltonian': hamiltonian_suite,
    'integrator': integrator_suite,
    'momentum': momentum_suite,
    'shooting': shooting_suite,
}


# ============== RUNNER ==============

@dataclass
class CheckReport:
    """Measurements and rule verdicts of one `check` run"""
    seed: int
    suites: List[str]
    fault: Optional[str]
    measurements: Dict[str, Dict[str, Any]]
    outcomes: List[RuleOutcome]
    errors: Dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.outcomes) and all(o.passed for o in self.outcomes) and not self.errors

    @property
    def failed(self) -> List[RuleOutcome]:
        return [o for o in self.outcomes if not o.passed]

    def to_frame(self) -> pd.DataFrame:
        """One row per rule condition"""
        rows = []
        for outcome in self.outcomes:
            for cond in outcome.conditions:
                rows.append({
                    'suite': outcome.tags[0] if outcome.tags else '',
                    'rule_id': outcome.rule_id,
                    'name': outcome.name,
                    'field': cond.get('field'),
                    'measured': outcome.measured.get(cond.get('field')),
                    'operator': cond.get('operator'),
                    'tolerance': cond.get('value'),
                    'status': 'pass' if outcome.passed else 'FAIL',
                })
        return pd.DataFrame(rows, columns=['suite', 'rule_id', 'name', 'field', 'measured',
                                           'operator', 'tolerance', 'status'])

    def to_dict(self) -> Dict[str, Any]:
        return {
            'seed': self.seed,
            'suites': self.suites,
            'fault': self.fault,
            'passed': self.passed,
            'measurements': self.measurements,
            'outcomes': [o.to_dict() for o in self.outcomes],
            'errors': self.errors,
        }


def run_checks(seed: int = Config.DEFAULT_SEED, suites: Optional[Sequence[str]] = None,
               fault: Optional[Fault] = None, n_jobs: int = 1,
               engine: Optional[RulesEngine] = None) -> CheckReport:
    """
    Run the selected invariant suites and judge them with the invariant rules

    Every suite draws from its own generator seeded by (seed, suite position),
    so filtering suites never changes the measured values.
    """
    selected = list(suites) if suites else list(Config.CHECK_SUITES)
    unknown = [s for s in selected if s not in SUITES]
    if unknown:
        raise ConfigError(f"Unknown check suites {unknown}; available: {list(SUITES)}")
    engine = engine or Config.load_rules_engine('invariants')

    measurements: Dict[str, Dict[str, Any]] = {}
    errors: Dict[str, str] = {}
    for name in selected:
        rng = np.random.default_rng([seed, Config.CHECK_SUITES.index(name)])
        logger.info("Running %s suite", name)
        try:
            measurements[name] = SUITES[name](rng, fault=fault, n_jobs=n_jobs)
        except RegistrationError as e:
            logger.warning("Suite %s aborted: %s", name, e)
            errors[name] = str(e)
            measurements[name] = {}

    outcomes = engine.evaluate(measurements, tags=selected)
    return CheckReport(seed, selected, fault.value if fault else None, measurements, outcomes, errors)
