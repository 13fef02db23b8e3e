"""Package initialization - numerical engine of the multiscale registration"""

from .errors import (
    RegistrationError, ParseError, ShapeError, ConfigError, ContractError,
    DivergenceError, StagnationError,
)
from .kernels import ScaleConfig, BandField, ControlField, kernel_eval, kernel_jacobian, velocity_at, rkhs_energy
from .state import MultiscaleConfiguration, MultiscaleMomentum, RegistrationProblem, bands_from, center_of_mass
from .simgroup import (
    SimElement, SimMomentum, SimAlgebra, sim_act, sim_compose, sim_identity, sim_inverse,
    sim_optimal_control, sim_rhs, sim_closed_form,
)
from .hamiltonian import PhasePoint, PhaseTangent, PhaseLayout, HamiltonianSystem, Fault, reduced_hamiltonian, phase_rhs
from .integrator import Scheme, Trajectory, shoot, variational_transport, adjoint_sweep
from .shooting import (
    OptimizerOptions, StepPolicy, MatchStatus, MatchResult, endpoint_cost, endpoint_costate,
    objective, gradient, optimize,
)
from .momentum import (
    ProbeSet, SplitSpec, advect_probes, momentum_transport_residual, lift_uniqueness_check,
    split_representation, probe_grid,
)
from .rules_engine import RulesEngine, Rule, RuleOperator, RuleOutcome

__all__ = [
    'RegistrationError', 'ParseError', 'ShapeError', 'ConfigError', 'ContractError',
    'DivergenceError', 'StagnationError',
    'ScaleConfig', 'BandField', 'ControlField', 'kernel_eval', 'kernel_jacobian', 'velocity_at', 'rkhs_energy',
    'MultiscaleConfiguration', 'MultiscaleMomentum', 'RegistrationProblem', 'bands_from', 'center_of_mass',
    'SimElement', 'SimMomentum', 'SimAlgebra', 'sim_act', 'sim_compose', 'sim_identity', 'sim_inverse',
    'sim_optimal_control', 'sim_rhs', 'sim_closed_form',
    'PhasePoint', 'PhaseTangent', 'PhaseLayout', 'HamiltonianSystem', 'Fault', 'reduced_hamiltonian', 'phase_rhs',
    'Scheme', 'Trajectory', 'shoot', 'variational_transport', 'adjoint_sweep',
    'OptimizerOptions', 'StepPolicy', 'MatchStatus', 'MatchResult', 'endpoint_cost', 'endpoint_costate',
    'objective', 'gradient', 'optimize',
    'ProbeSet', 'SplitSpec', 'advect_probes', 'momentum_transport_residual', 'lift_uniqueness_check',
    'split_representation', 'probe_grid',
    'RulesEngine', 'Rule', 'RuleOperator', 'RuleOutcome',
]
