"""
Hamiltonian tests: layout packing, energy paths, vector field and its vector-Jacobian product
"""

import numpy as np
import pytest

from src.app.check_suite import random_configuration, random_momentum, symplectic_gradient
from src.core.errors import ContractError, ShapeError
from src.core.hamiltonian import (
    Fault, HamiltonianSystem, PhaseLayout, PhasePoint, finest_scale_reduction_check, h_landmarks,
    phase_rhs, reduced_hamiltonian,
)
from src.core.kernels import BandField, ControlField, ScaleConfig, rkhs_energy
from src.core.simgroup import sim_reduced_hamiltonian
from src.core.state import MultiscaleMomentum, bands_from


def system_for(cfg, x, fault=None):
    system = HamiltonianSystem.for_state(cfg, x, fault)
    return system, system.layout.pack(x)


# ============== layout ==============

def test_layout_slices_cover_the_vector():
    layout = PhaseLayout((2, 3), 2)
    assert layout.n == 5
    assert layout.size == 2 * 5 * 2 + 1 + 4 + 2 + 1 + 4 + 2
    assert layout.landmark_slice() == slice(0, 20)
    assert layout.sim_slice() == slice(20, layout.size)
    assert layout.momentum_mask(sim_enabled=False).sum() == 10
    assert layout.momentum_mask(sim_enabled=True).sum() == 10 + 1 + 4 + 2


def test_pack_unpack_round_trip(small_state):
    layout = PhaseLayout.for_state(small_state.q)
    z = layout.pack(small_state)
    again = layout.unpack(z)
    np.testing.assert_array_equal(layout.pack(again), z)
    assert again.a.rho == small_state.a.rho
    np.testing.assert_array_equal(again.pa.p_R, small_state.pa.p_R)


def test_pack_rejects_other_shapes(small_state):
    with pytest.raises(ShapeError):
        PhaseLayout((1, 4), 2).pack(small_state)


def test_system_requires_matching_layout(two_scale_cfg):
    with pytest.raises(ShapeError):
        HamiltonianSystem(two_scale_cfg, PhaseLayout((2, 3, 4), 2))
    with pytest.raises(ShapeError):
        HamiltonianSystem(two_scale_cfg, PhaseLayout((2, 3), 3))


# ============== energy ==============

def test_pair_energy_matches_band_energy(rng, two_scale_cfg):
    for _ in range(10):
        q = random_configuration(rng, 2, (2, 3))
        p = random_momentum(rng, q, 0.7)
        x = PhasePoint.initial(q, p)
        system, z = system_for(two_scale_cfg, x)
        band_energy = 0.5 * rkhs_energy(two_scale_cfg, bands_from(q, p))
        assert system.landmark_energy(z) == pytest.approx(band_energy, rel=1e-12)


def test_reduced_hamiltonian_splits_into_blocks(two_scale_cfg, small_state):
    system, z = system_for(two_scale_cfg, small_state)
    assert system.sim_energy(z) == pytest.approx(sim_reduced_hamiltonian(small_state.a, small_state.pa),
                                                 rel=1e-13)
    assert reduced_hamiltonian(two_scale_cfg, small_state) == pytest.approx(system.energy(z), rel=1e-12)


def test_optimal_control_maximizes_landmark_hamiltonian(rng, two_scale_cfg):
    q = random_configuration(rng, 2, (2, 3))
    p = random_momentum(rng, q, 0.5)
    optimal = bands_from(q, p)
    best = h_landmarks(two_scale_cfg, q, p, optimal)
    assert best == pytest.approx(0.5 * rkhs_energy(two_scale_cfg, optimal), rel=1e-12)
    for _ in range(10):
        perturbed = ControlField([
            BandField(band.locations, band.weights + 0.1 * rng.normal(size=band.weights.shape))
            for band in optimal.bands
        ])
        assert h_landmarks(two_scale_cfg, q, p, perturbed) < best


def test_landmark_hamiltonian_rejects_wrong_band_count(rng, two_scale_cfg):
    q = random_configuration(rng, 2, (2, 3))
    p = random_momentum(rng, q, 0.5)
    with pytest.raises(ShapeError):
        h_landmarks(two_scale_cfg, q, p, ControlField([BandField.empty(2)]))


# ============== vector field ==============

def test_rhs_is_symplectic_gradient_of_energy(two_scale_cfg, small_state, central_difference):
    system, z = system_for(two_scale_cfg, small_state)
    expected = symplectic_gradient(system.layout, central_difference(system.energy, z))
    np.testing.assert_allclose(system.rhs(z), expected, rtol=1e-5, atol=1e-7)


def test_landmark_velocity_matches_rhs(two_scale_cfg, small_state):
    system, z = system_for(two_scale_cfg, small_state)
    tangent = phase_rhs(two_scale_cfg, small_state)
    np.testing.assert_array_equal(tangent.dq.stacked(), system.landmark_velocity(z))


def test_landmark_block_ignores_similarity_state(rng, two_scale_cfg, small_state):
    system, z = system_for(two_scale_cfg, small_state)
    other = z.copy()
    sim = system.layout.sim_slice()
    other[sim] = rng.normal(size=sim.stop - sim.start)
    other[system.layout.slices['rho']] = 1.7
    block = system.layout.landmark_slice()
    np.testing.assert_array_equal(system.rhs(other)[block], system.rhs(z)[block])


def test_fault_negates_rotation_momentum_only(two_scale_cfg, small_state):
    system, z = system_for(two_scale_cfg, small_state)
    faulty, _ = system_for(two_scale_cfg, small_state, Fault.FLIP_P_R)
    clean, flipped = system.rhs(z), faulty.rhs(z)
    s = system.layout.slices
    np.testing.assert_array_equal(flipped[s['p_R']], -clean[s['p_R']])
    keep = np.ones(system.layout.size, dtype=bool)
    keep[s['p_R']] = False
    np.testing.assert_array_equal(flipped[keep], clean[keep])


@pytest.mark.parametrize("fault", [None, Fault.FLIP_P_R])
def test_vjp_matches_finite_differences(rng, two_scale_cfg, small_state, central_difference, fault):
    system, z = system_for(two_scale_cfg, small_state, fault)
    for _ in range(3):
        c = rng.normal(size=system.layout.size)
        fd = central_difference(lambda w: float(c @ system.rhs(w)), z)
        np.testing.assert_allclose(system.vjp(z, c), fd, rtol=1e-5, atol=1e-7)


def test_vjp_is_linear_in_cotangent(rng, two_scale_cfg, small_state):
    system, z = system_for(two_scale_cfg, small_state)
    c1, c2 = rng.normal(size=(2, system.layout.size))
    combined = system.vjp(z, 2.0 * c1 - c2)
    np.testing.assert_allclose(combined, 2.0 * system.vjp(z, c1) - system.vjp(z, c2), rtol=1e-12, atol=1e-12)


# ============== finest-scale reduction ==============

def test_reduction_is_exact_for_one_scale(rng):
    cfg = ScaleConfig(2, (0.8,))
    q = random_configuration(rng, 2, (4,))
    checks = finest_scale_reduction_check(cfg, q, random_momentum(rng, q, 1.0))
    assert checks['discrepancy'] == 0.0


def test_reduction_with_vanishing_coarse_momenta(rng):
    cfg = ScaleConfig(2, (1.0, 0.6, 0.35))
    q = random_configuration(rng, 2, (2, 3, 4))
    p = random_momentum(rng, q, 0.5)
    finest_only = MultiscaleMomentum((np.zeros((2, 2)), np.zeros((3, 2)), p.scale(3)))
    probes = rng.uniform(-1.5, 1.5, size=(20, 2))
    checks = finest_scale_reduction_check(cfg, q, finest_only, probes)
    assert checks['discrepancy'] <= 1e-14
    assert checks['telescoping'] <= 1e-14


def test_reduction_requires_vanishing_coarse_momenta(rng, two_scale_cfg):
    q = random_configuration(rng, 2, (2, 3))
    with pytest.raises(ContractError):
        finest_scale_reduction_check(two_scale_cfg, q, random_momentum(rng, q, 1.0))
