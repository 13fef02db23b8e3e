"""
Integrator tests: fixed-step schemes, energy behavior, time reversal,
variational transport and the discrete adjoint
"""

import math

import numpy as np
import pytest

from src.app.check_suite import random_sim_momentum
from src.core.errors import ContractError, DivergenceError
from src.core.hamiltonian import PhasePoint
from src.core.integrator import (
    Scheme, adjoint_sweep, integrate, shoot, time_reversal_error, variational_transport,
)
from src.core.kernels import ScaleConfig
from src.core.momentum import ProbeSet, advect_probes
from src.core.simgroup import SimMomentum
from src.core.state import MultiscaleConfiguration, MultiscaleMomentum


# ============== integrate ==============

def test_rk4_on_linear_decay():
    states, stages = integrate(lambda z: -z, np.array([1.0]), 10, Scheme.RK4)
    assert states.shape == (11, 1)
    assert stages.shape == (10, 4, 1)
    assert states[-1, 0] == pytest.approx(math.exp(-1.0), abs=1e-6)


def test_euler_on_linear_decay():
    states, stages = integrate(lambda z: -z, np.array([1.0]), 10, Scheme.EULER)
    assert stages.shape == (10, 1, 1)
    assert states[-1, 0] == pytest.approx(0.9 ** 10, rel=1e-14)


def test_backward_direction_inverts_rk4():
    forward, _ = integrate(lambda z: -z, np.array([2.0]), 20, Scheme.RK4)
    backward, _ = integrate(lambda z: -z, forward[-1], 20, Scheme.RK4, direction=-1.0)
    assert backward[-1, 0] == pytest.approx(2.0, abs=1e-7)


def test_zero_steps_is_a_contract_error():
    with pytest.raises(ContractError):
        integrate(lambda z: z, np.zeros(2), 0)


def test_non_finite_state_is_divergence():
    with pytest.raises(DivergenceError) as info:
        integrate(lambda z: np.full_like(z, np.inf), np.zeros(2), 5, Scheme.EULER)
    assert info.value.exit_code == 5
    assert info.value.details['step'] == 1


# ============== shoot ==============

def test_zero_momentum_is_stationary(rng, two_scale_cfg):
    q = MultiscaleConfiguration((rng.normal(size=(2, 2)), rng.normal(size=(3, 2))))
    traj = shoot(two_scale_cfg, PhasePoint.initial(q, MultiscaleMomentum.zeros_like(q)), 10)
    np.testing.assert_array_equal(traj.states[-1], traj.states[0])
    assert traj.energy_drift() == 0.0


def test_trajectory_samples_and_times(two_scale_cfg, initial_state):
    traj = shoot(two_scale_cfg, initial_state, 8)
    assert traj.states.shape == (9, traj.layout.size)
    np.testing.assert_allclose(traj.times, np.arange(9) / 8)
    assert traj.step_size == 0.125
    np.testing.assert_array_equal(traj.initial().q.stacked(), initial_state.q.stacked())
    assert traj.initial().a.rho == 1.0


def test_shooting_is_deterministic(two_scale_cfg, initial_state):
    first = shoot(two_scale_cfg, initial_state, 12)
    second = shoot(two_scale_cfg, initial_state, 12)
    np.testing.assert_array_equal(first.states, second.states)


def test_negative_scaling_is_divergence():
    cfg = ScaleConfig(2, (1.0,))
    q = MultiscaleConfiguration((np.zeros((1, 2)),))
    # one Euler step of ρ̇ = ρ²p_ρ from ρ = 1 lands at 1 + p_ρ = −4
    x0 = PhasePoint.initial(q, MultiscaleMomentum.zeros_like(q), SimMomentum(-5.0, np.zeros((2, 2)), np.zeros(2)))
    with pytest.raises(DivergenceError) as info:
        shoot(cfg, x0, 1, Scheme.EULER)
    assert info.value.details['step'] == 1
    assert shoot(cfg, x0, 10, Scheme.RK4).final().a.rho > 0


def test_rk4_conserves_energy_far_better_than_euler(two_scale_cfg, initial_state):
    rk4 = shoot(two_scale_cfg, initial_state, 100, Scheme.RK4).energy_drift()
    euler = shoot(two_scale_cfg, initial_state, 100, Scheme.EULER).energy_drift()
    assert rk4 <= 1e-7
    assert euler > 1e3 * rk4


def test_time_reversal(two_scale_cfg, initial_state):
    traj = shoot(two_scale_cfg, initial_state, 100)
    assert time_reversal_error(traj) <= 1e-6


def test_projected_final_rotation(two_scale_cfg, initial_state):
    final = shoot(two_scale_cfg, initial_state, 5, Scheme.EULER).final(project_rotation=True)
    np.testing.assert_allclose(final.a.R.T @ final.a.R, np.eye(2), rtol=0, atol=1e-14)


# ============== variational transport ==============

@pytest.mark.parametrize("scheme", [Scheme.EULER, Scheme.RK4])
def test_variational_transport_matches_perturbed_probes(two_scale_cfg, initial_state, scheme):
    traj = shoot(two_scale_cfg, initial_state, 20, scheme)
    h = 1e-6
    for ell in (1, 2):
        J = variational_transport(traj, ell)
        assert J.shape == (21, initial_state.q.counts[ell - 1], 2, 2)
        np.testing.assert_array_equal(J[0], np.broadcast_to(np.eye(2), J[0].shape))
        for i, point in enumerate(initial_state.q.scale(ell)):
            columns = []
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                paths = advect_probes(traj, ProbeSet(ell, np.array([point + e, point - e])))
                columns.append((paths[-1, 0] - paths[-1, 1]) / (2.0 * h))
            np.testing.assert_allclose(J[-1, i], np.stack(columns, axis=1), rtol=1e-6, atol=1e-8)


def test_variational_transport_scale_out_of_range(two_scale_cfg, initial_state):
    traj = shoot(two_scale_cfg, initial_state, 4)
    with pytest.raises(IndexError):
        variational_transport(traj, 3)


# ============== discrete adjoint ==============

def test_zero_costate_gives_zero_gradient(two_scale_cfg, initial_state):
    traj = shoot(two_scale_cfg, initial_state, 6)
    np.testing.assert_array_equal(adjoint_sweep(traj, np.zeros(traj.layout.size)), np.zeros(traj.layout.size))


def test_adjoint_rejects_mismatches(two_scale_cfg, initial_state):
    traj = shoot(two_scale_cfg, initial_state, 6, Scheme.RK4)
    with pytest.raises(ContractError):
        adjoint_sweep(traj, np.zeros(traj.layout.size), scheme=Scheme.EULER)
    with pytest.raises(ContractError):
        adjoint_sweep(traj, np.zeros(traj.layout.size + 1))


def test_single_euler_step_adjoint(rng, two_scale_cfg, initial_state):
    traj = shoot(two_scale_cfg, initial_state, 1, Scheme.EULER)
    lam = rng.normal(size=traj.layout.size)
    expected = lam + traj.system.vjp(traj.states[0], lam)
    np.testing.assert_array_equal(adjoint_sweep(traj, lam), expected)


@pytest.mark.parametrize("scheme", [Scheme.EULER, Scheme.RK4])
def test_adjoint_matches_finite_differences(rng, scheme, central_difference):
    cfg = ScaleConfig(2, (1.0, 0.5))
    q = MultiscaleConfiguration((rng.uniform(-1, 1, size=(1, 2)), rng.uniform(-1, 1, size=(2, 2))))
    p = MultiscaleMomentum(tuple(0.4 * rng.normal(size=s.shape) for s in q.scales))
    x0 = PhasePoint.initial(q, p, random_sim_momentum(rng, 2, 0.4))
    traj = shoot(cfg, x0, 6, scheme)
    weights = rng.normal(size=traj.layout.size)

    def endpoint(z0):
        states, _ = integrate(traj.system.rhs, z0, 6, scheme)
        return float(weights @ states[-1])

    fd = central_difference(endpoint, traj.states[0])
    np.testing.assert_allclose(adjoint_sweep(traj, weights, scheme), fd, rtol=1e-5, atol=1e-7)
