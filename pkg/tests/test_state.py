"""
State tests: nested configurations, band construction and centers of mass
"""

import numpy as np
import pytest

from src.core.errors import ConfigError, ContractError, ShapeError
from src.core.kernels import ScaleConfig, velocity_at
from src.core.state import (
    MultiscaleConfiguration, MultiscaleMomentum, RegistrationProblem, bands_from, center_of_mass,
)


def random_pair(rng, counts, d=2):
    q = MultiscaleConfiguration(tuple(rng.normal(size=(n, d)) for n in counts))
    p = MultiscaleMomentum(tuple(rng.normal(size=(n, d)) for n in counts))
    return q, p


def test_stacking_round_trip(rng):
    q, _ = random_pair(rng, (2, 3, 3))
    assert q.counts == (2, 3, 3)
    assert q.n_total == 8
    np.testing.assert_array_equal(q.scale_index(), [0, 0, 1, 1, 1, 2, 2, 2])
    again = MultiscaleConfiguration.from_stacked(q.stacked(), q.counts)
    for a, b in zip(again.scales, q.scales):
        np.testing.assert_array_equal(a, b)


def test_nesting_requires_increasing_counts(rng):
    MultiscaleConfiguration((np.zeros((2, 2)), np.zeros((2, 2)))).check_nested()
    with pytest.raises(ShapeError):
        MultiscaleConfiguration((np.zeros((3, 2)), np.zeros((2, 2)))).check_nested()


def test_mixed_dimensions_are_rejected():
    with pytest.raises(ShapeError):
        MultiscaleConfiguration((np.zeros((1, 2)), np.zeros((1, 3))))


def test_momentum_compatibility(rng):
    q, _ = random_pair(rng, (1, 2))
    with pytest.raises(ShapeError):
        MultiscaleMomentum((np.zeros((1, 2)), np.zeros((3, 2)))).check_compatible(q)
    assert MultiscaleMomentum.zeros_like(q).is_zero()


# ============== bands_from ==============

def test_zero_momentum_gives_zero_velocity(rng):
    cfg = ScaleConfig(2, (1.0, 0.5))
    q, _ = random_pair(rng, (2, 3))
    bands = bands_from(q, MultiscaleMomentum.zeros_like(q))
    assert all(not np.any(band.weights) for band in bands.bands)
    np.testing.assert_array_equal(velocity_at(cfg, bands, 2, [0.2, 0.1]), np.zeros(2))


def test_single_scale_band_holds_every_atom(rng):
    q, p = random_pair(rng, (4,))
    bands = bands_from(q, p)
    assert bands.L == 1
    np.testing.assert_array_equal(bands.band(1).locations, q.scale(1))
    np.testing.assert_array_equal(bands.band(1).weights, p.scale(1))


def test_bands_match_nested_loop_oracle(rng):
    q, p = random_pair(rng, (1, 2, 3))
    bands = bands_from(q, p)
    for k in range(1, 4):
        locations, weights = [], []
        for m in range(k, 4):
            for i in range(q.counts[m - 1]):
                locations.append(q.scale(m)[i])
                weights.append(p.scale(m)[i])
        np.testing.assert_array_equal(bands.band(k).locations, np.array(locations))
        np.testing.assert_array_equal(bands.band(k).weights, np.array(weights))
        assert bands.band(k).n_atoms == sum(q.counts[k - 1:])


def test_bands_are_linear_in_momentum(rng):
    q, p1 = random_pair(rng, (2, 3))
    _, p2 = random_pair(rng, (2, 3))
    alpha, beta = 0.7, -1.3
    combined = MultiscaleMomentum(tuple(alpha * a + beta * b for a, b in zip(p1.scales, p2.scales)))
    b1, b2, bc = bands_from(q, p1), bands_from(q, p2), bands_from(q, combined)
    for k in (1, 2):
        np.testing.assert_array_equal(bc.band(k).locations, b1.band(k).locations)
        np.testing.assert_allclose(bc.band(k).weights, alpha * b1.band(k).weights + beta * b2.band(k).weights,
                                   rtol=1e-15, atol=1e-15)


def test_bands_reject_incompatible_momentum(rng):
    q, _ = random_pair(rng, (2, 3))
    with pytest.raises(ShapeError):
        bands_from(q, MultiscaleMomentum((np.zeros((2, 2)), np.zeros((2, 2)))))


# ============== center_of_mass ==============

def test_center_of_single_point():
    q = MultiscaleConfiguration((np.array([[0.3, -1.2]]),))
    np.testing.assert_array_equal(center_of_mass(q, 1), [0.3, -1.2])


def test_center_of_symmetric_pair():
    q = MultiscaleConfiguration((np.array([[0.0, 0.0], [2.0, 0.0]]),))
    np.testing.assert_array_equal(center_of_mass(q, 1), [1.0, 0.0])


def test_center_matches_naive_mean(rng):
    cloud = rng.normal(size=(9, 3))
    q = MultiscaleConfiguration((cloud[:4], cloud))
    naive = [sum(cloud[i][j] for i in range(9)) / 9 for j in range(3)]
    np.testing.assert_allclose(center_of_mass(q, 2), naive, rtol=0, atol=1e-14)


def test_center_of_empty_scale_is_an_error():
    q = MultiscaleConfiguration((np.zeros((0, 2)), np.zeros((2, 2))))
    with pytest.raises(ContractError):
        center_of_mass(q, 1)


# ============== RegistrationProblem ==============

def test_problem_requires_matching_shapes(rng):
    cfg = ScaleConfig(2, (1.0, 0.5))
    source, _ = random_pair(rng, (2, 3))
    with pytest.raises(ShapeError):
        RegistrationProblem(source, MultiscaleConfiguration((np.zeros((2, 2)), np.zeros((4, 2)))), cfg)
    with pytest.raises(ShapeError):
        RegistrationProblem(source, source, ScaleConfig(2, (1.0,)))
    with pytest.raises(ConfigError):
        RegistrationProblem(source, source, cfg, data_weight=0.0)


def test_target_centers_are_per_scale(rng):
    cfg = ScaleConfig(2, (1.0, 0.5))
    source, _ = random_pair(rng, (2, 3))
    target, _ = random_pair(rng, (2, 3))
    centers = RegistrationProblem(source, target, cfg).target_centers()
    assert centers.shape == (2, 2)
    np.testing.assert_allclose(centers[1], target.scale(2).mean(axis=0))
