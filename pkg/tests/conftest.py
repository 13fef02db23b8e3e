"""
Shared fixtures - seeded generators, finite differences and small instances
"""

import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.app.check_suite import central_difference as _central_difference  # noqa: E402
from src.app.check_suite import random_configuration, random_momentum, random_phase_point  # noqa: E402
from src.core.hamiltonian import PhasePoint  # noqa: E402
from src.core.kernels import ScaleConfig  # noqa: E402
from src.core.state import MultiscaleConfiguration, RegistrationProblem  # noqa: E402

INPUT_DIR = PROJECT_ROOT / "data" / "input"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def central_difference():
    """Central finite-difference gradient of a scalar function of a flat vector"""
    return _central_difference


@pytest.fixture
def jacobian_fd():
    """Central finite-difference Jacobian of a vector function, column j = ∂f/∂x_j"""
    def jacobian(f, x, eps):
        x = np.array(x, dtype=float)
        columns = []
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = eps
            columns.append((f(x + e) - f(x - e)) / (2.0 * eps))
        return np.stack(columns, axis=-1)
    return jacobian


@pytest.fixture
def two_scale_cfg():
    return ScaleConfig(2, (1.0, 0.5))


@pytest.fixture
def small_state(rng):
    """Random phase point with d=2, L=2, counts (2, 3), group element away from e"""
    return random_phase_point(rng, 2, (2, 3), momentum_scale=0.4, sim_scale=0.4)


@pytest.fixture
def initial_state(rng):
    """Random phase point at the neutral group element, d=2, counts (2, 3)"""
    q = random_configuration(rng, 2, (2, 3))
    x = random_phase_point(rng, 2, (2, 3), momentum_scale=0.3, sim_scale=0.3)
    return PhasePoint.initial(q, random_momentum(rng, q, 0.3), x.pa)


@pytest.fixture
def pull_apart_problem():
    """Two landmarks pulled apart along the x axis, single scale"""
    source = MultiscaleConfiguration((np.array([[-0.5, 0.0], [0.5, 0.0]]),))
    target = MultiscaleConfiguration((np.array([[-0.75, 0.0], [0.75, 0.0]]),))
    return RegistrationProblem(source, target, ScaleConfig(2, (1.0,)), data_weight=1.0)


@pytest.fixture
def problems_dir():
    return INPUT_DIR / "problems"


@pytest.fixture
def configs_dir():
    return INPUT_DIR / "configs"
