"""
Shooting tests: data term, endpoint costate, exact gradients and the optimizer
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from src.app.check_suite import random_configuration, random_element
from src.core.errors import ConfigError, ShapeError
from src.core.integrator import Scheme
from src.core.kernels import ScaleConfig
from src.core.shooting import (
    MatchStatus, OptimizerOptions, ShootingObjective, StepPolicy, endpoint_cost, endpoint_costate,
    endpoint_residuals, gradient, objective, optimize, p_rho_readings,
)
from src.core.simgroup import SimElement, SimMomentum, planar_generator, sim_act, sim_identity, so_exponential
from src.core.state import MultiscaleConfiguration, MultiscaleMomentum, RegistrationProblem


def similarity_problem(rng, counts=(2, 3), sim_enabled=True, data_weight=1.0, noise=0.05):
    cfg = ScaleConfig(2, tuple([1.0, 0.5][:len(counts)]))
    source = random_configuration(rng, 2, counts)
    element = SimElement(1.1, so_exponential(planar_generator(0.2)), [0.1, -0.05])
    centers = np.stack([s.mean(axis=0) for s in source.scales])
    moved = sim_act(element, source, centers)
    target = MultiscaleConfiguration(tuple(s + noise * rng.normal(size=s.shape) for s in moved.scales))
    return RegistrationProblem(source, target, cfg, data_weight=data_weight, sim_enabled=sim_enabled)


# ============== data term ==============

def test_cost_vanishes_on_target(rng):
    prob = similarity_problem(rng)
    assert endpoint_cost(prob.target, sim_identity(2), prob) <= 1e-28


def test_cost_vanishes_on_moved_target(rng):
    prob = similarity_problem(rng)
    a = random_element(rng, 2)
    moved = sim_act(a, prob.target, prob.target_centers())
    np.testing.assert_allclose(endpoint_residuals(moved, a, prob), 0.0, atol=1e-14)


def test_cost_hand_value():
    cfg = ScaleConfig(2, (1.0,))
    source = MultiscaleConfiguration((np.array([[0.0, 0.0]]),))
    target = MultiscaleConfiguration((np.array([[0.5, 0.25]]),))
    prob = RegistrationProblem(source, target, cfg, data_weight=2.0)
    # a single point is its own center, so only τ moves it
    shifted = SimElement(3.0, so_exponential(planar_generator(1.0)), [0.1, 0.0])
    assert endpoint_cost(source, sim_identity(2), prob) == pytest.approx(0.3125, rel=1e-15)
    assert endpoint_cost(source, shifted, prob) == pytest.approx(0.36 + 0.0625, rel=1e-14)


def test_endpoint_shape_mismatch(rng):
    prob = similarity_problem(rng)
    with pytest.raises(ShapeError):
        endpoint_cost(random_configuration(rng, 2, (2, 4)), sim_identity(2), prob)


def test_endpoint_costate_is_negative_cost_gradient(rng, central_difference):
    prob = similarity_problem(rng, data_weight=3.0)
    q1 = MultiscaleConfiguration(tuple(s + 0.2 * rng.normal(size=s.shape) for s in prob.target.scales))
    a1 = random_element(rng, 2)
    n = q1.n_total * 2

    def cost(w):
        q = MultiscaleConfiguration.from_stacked(w[:n].reshape(-1, 2), q1.counts)
        return endpoint_cost(q, SimElement(w[n], w[n + 1:n + 5].reshape(2, 2), w[n + 5:n + 7]), prob)

    w1 = np.concatenate([q1.stacked().ravel(), [a1.rho], a1.R.ravel(), a1.tau])
    p1, pa1 = endpoint_costate(q1, a1, prob)
    costate = np.concatenate([p1.stacked().ravel(), [pa1.p_rho], pa1.p_R.ravel(), pa1.p_tau])
    np.testing.assert_allclose(costate, -central_difference(cost, w1), rtol=1e-6, atol=1e-7)


def test_p_rho_readings_agree(rng):
    prob = similarity_problem(rng)
    q1 = MultiscaleConfiguration(tuple(s + 0.3 * rng.normal(size=s.shape) for s in prob.target.scales))
    readings = p_rho_readings(q1, random_element(rng, 2), prob)
    assert readings['divergence'] <= 1e-12
    assert readings['scalar'] == pytest.approx(readings['literal_trace'], abs=1e-12)


# ============== objective and gradient ==============

def test_objective_at_zero_momenta_is_initial_cost(rng):
    prob = similarity_problem(rng)
    p0 = MultiscaleMomentum.zeros_like(prob.source)
    value = objective(p0, SimMomentum.zeros(2), prob, 5)
    assert value == pytest.approx(endpoint_cost(prob.source, sim_identity(2), prob), rel=1e-14)


@pytest.mark.parametrize("scheme", [Scheme.EULER, Scheme.RK4])
@pytest.mark.parametrize("sim_enabled", [True, False])
def test_gradient_matches_finite_differences(rng, central_difference, scheme, sim_enabled):
    prob = similarity_problem(rng, sim_enabled=sim_enabled)
    obj = ShootingObjective(prob, 10, scheme)
    theta = 0.2 * rng.normal(size=obj.size)
    _, traj = obj.evaluate(theta)
    fd = central_difference(lambda t: obj.evaluate(t)[0], theta)
    np.testing.assert_allclose(obj.gradient(traj), fd, rtol=1e-5, atol=1e-7)


def test_gradient_without_similarity_layer(rng):
    prob = similarity_problem(rng, sim_enabled=False)
    dp, dpa = gradient(MultiscaleMomentum.zeros_like(prob.source), None, prob, 5)
    assert dpa is None
    assert dp.counts == prob.source.counts
    assert ShootingObjective(prob, 5).size == 2 * prob.source.n_total


def test_params_round_trip(rng):
    prob = similarity_problem(rng)
    obj = ShootingObjective(prob, 5)
    theta = rng.normal(size=obj.size)
    p0, pa0 = obj.momenta_from(theta)
    np.testing.assert_array_equal(obj.params_from(p0, pa0), theta)


# ============== optimizer ==============

def test_identical_shapes_converge_immediately(rng):
    source = random_configuration(rng, 2, (2, 3))
    prob = RegistrationProblem(source, source, ScaleConfig(2, (1.0, 0.5)), sim_enabled=True)
    result = optimize(prob, 10)
    assert result.status is MatchStatus.CONVERGED
    assert result.iterations == 0
    assert result.objective <= 1e-28
    assert result.p0.is_zero()


def test_pull_apart_reaches_transversality(pull_apart_problem):
    opts = OptimizerOptions(max_iters=2000, grad_tol=1e-8)
    result = optimize(pull_apart_problem, 40, opts)
    assert result.converged
    assert result.transversality['max'] <= 1e-5
    assert result.transversality['p_R'] is None
    assert result.final_endpoint_cost < result.initial_endpoint_cost
    assert all(b <= a for a, b in zip(result.history, result.history[1:]))
    # symmetric problem: opposite momenta along the axis
    p = result.p0.scale(1)
    np.testing.assert_allclose(p[0], -p[1], rtol=0, atol=1e-6)
    assert abs(p[0, 1]) <= 1e-10


def test_similarity_target_is_recovered(rng):
    cfg = ScaleConfig(2, (1.0,))
    target = random_configuration(rng, 2, (5,))
    element = SimElement(1.1, so_exponential(planar_generator(0.2)), [0.1, -0.05])
    source = sim_act(element, target, [target.scale(1).mean(axis=0)])
    prob = RegistrationProblem(source, target, cfg, data_weight=50.0, sim_enabled=True)
    result = optimize(prob, 20, OptimizerOptions(max_iters=500))
    assert result.final_endpoint_cost <= 1e-3 * result.initial_endpoint_cost
    assert result.orthogonality_defect <= 1e-6


def test_unit_weight_similarity_match_is_inexact(rng):
    # same instance as above; at λ = 1 the similarity energy outweighs the leftover residual
    cfg = ScaleConfig(2, (1.0,))
    target = random_configuration(rng, 2, (5,))
    element = SimElement(1.1, so_exponential(planar_generator(0.2)), [0.1, -0.05])
    source = sim_act(element, target, [target.scale(1).mean(axis=0)])
    prob = RegistrationProblem(source, target, cfg, data_weight=1.0, sim_enabled=True)
    result = optimize(prob, 20, OptimizerOptions(max_iters=500))
    assert result.status is MatchStatus.CONVERGED
    ratio = result.final_endpoint_cost / result.initial_endpoint_cost
    assert 1e-3 < ratio < 0.1
    assert result.transversality['max'] <= 1e-4


def test_line_search_failure_is_stagnation(pull_apart_problem):
    opts = OptimizerOptions(max_iters=10, initial_step=1e6, step_policy=StepPolicy.FIXED, max_halvings=0)
    result = optimize(pull_apart_problem, 10, opts)
    assert result.status is MatchStatus.STAGNATED
    assert result.iterations == 0
    assert len(result.history) == 1


@pytest.mark.parametrize("initial_step", [1e3, 1e6])
def test_oversized_trial_steps_are_halved(rng, initial_step):
    prob = similarity_problem(rng)
    opts = OptimizerOptions(max_iters=5, initial_step=initial_step, step_policy=StepPolicy.FIXED)
    result = optimize(prob, 10, opts)
    assert result.status is not MatchStatus.STAGNATED
    assert result.iterations == 5
    assert all(b < a for a, b in zip(result.history, result.history[1:]))
    assert result.trajectory.final().a.rho > 0


def test_iteration_cap(pull_apart_problem):
    result = optimize(pull_apart_problem, 10, OptimizerOptions(max_iters=2))
    assert result.status is MatchStatus.MAX_ITERS
    assert result.iterations == 2
    assert len(result.history) == 3


@pytest.mark.parametrize("policy", list(StepPolicy))
def test_every_step_policy_decreases_objective(pull_apart_problem, policy):
    result = optimize(pull_apart_problem, 10, OptimizerOptions(max_iters=20, step_policy=policy))
    assert result.objective < result.history[0]


def test_multi_start_is_deterministic(rng):
    prob = similarity_problem(rng)
    opts = OptimizerOptions(max_iters=15, multi_start=3, multi_start_scale=0.1, seed=7, n_jobs=2)
    first, second = optimize(prob, 8, opts), optimize(prob, 8, opts)
    assert first.history == second.history
    assert first.start_index == second.start_index
    assert 0 <= first.start_index < 3


def test_result_serializes_without_trajectory(pull_apart_problem):
    result = optimize(pull_apart_problem, 10, OptimizerOptions(max_iters=3))
    data = result.to_dict()
    assert 'trajectory' not in data
    assert 'processing_time' not in data
    assert data['status'] == result.status.value
    assert math.isfinite(data['endpoint_cost_ratio'])


# ============== scored scales ==============

def test_finest_only_data_term(rng, central_difference):
    every_scale = similarity_problem(rng, data_weight=2.0)
    finest = replace(every_scale, data_scales=(2,))
    q1 = MultiscaleConfiguration(tuple(s + 0.2 * rng.normal(size=s.shape) for s in every_scale.target.scales))
    a1 = random_element(rng, 2)

    full = endpoint_residuals(q1, a1, every_scale)
    assert endpoint_cost(q1, a1, finest) == pytest.approx(float(np.sum(full[2:] ** 2)), rel=1e-14)
    p1, pa1 = endpoint_costate(q1, a1, finest)
    assert not np.any(p1.scale(1))
    np.testing.assert_allclose(p1.scale(2), -2.0 * full[2:], rtol=1e-14)

    n = q1.n_total * 2

    def cost(w):
        q = MultiscaleConfiguration.from_stacked(w[:n].reshape(-1, 2), q1.counts)
        return endpoint_cost(q, SimElement(w[n], w[n + 1:n + 5].reshape(2, 2), w[n + 5:n + 7]), finest)

    w1 = np.concatenate([q1.stacked().ravel(), [a1.rho], a1.R.ravel(), a1.tau])
    costate = np.concatenate([p1.stacked().ravel(), [pa1.p_rho], pa1.p_R.ravel(), pa1.p_tau])
    np.testing.assert_allclose(costate, -central_difference(cost, w1), rtol=1e-6, atol=1e-7)


def test_finest_only_gradient_matches_finite_differences(rng, central_difference):
    prob = replace(similarity_problem(rng), data_scales=(2,))
    obj = ShootingObjective(prob, 8)
    theta = 0.2 * rng.normal(size=obj.size)
    _, traj = obj.evaluate(theta)
    fd = central_difference(lambda t: obj.evaluate(t)[0], theta)
    np.testing.assert_allclose(obj.gradient(traj), fd, rtol=1e-5, atol=1e-7)


def test_finest_only_matching_reaches_transversality():
    source = MultiscaleConfiguration((np.array([[0.0, 0.8], [0.0, -0.8]]), np.array([[-0.5, 0.0], [0.5, 0.0]])))
    target = MultiscaleConfiguration((np.array([[3.0, 0.8], [0.0, -3.0]]), np.array([[-0.75, 0.0], [0.75, 0.0]])))
    prob = RegistrationProblem(source, target, ScaleConfig(2, (1.0, 0.5)), data_scales=(2,))
    result = optimize(prob, 40, OptimizerOptions(max_iters=2000, grad_tol=1e-8))
    assert result.converged
    assert result.transversality['max'] <= 1e-5
    # the coarse costate obeys a linear homogeneous law, so it vanishes all along
    assert np.max(np.abs(result.p0.scale(1))) <= 1e-4
    assert result.final_endpoint_cost < result.initial_endpoint_cost


def test_data_scales_are_validated(rng):
    prob = similarity_problem(rng)
    assert prob.scored_scales == (1, 2)
    assert replace(prob, data_scales=[2, 2]).data_scales == (2,)
    for bad in [(), (0,), (3,)]:
        with pytest.raises(ConfigError):
            replace(prob, data_scales=bad)
