"""
Similarity Group Module - Sim⁺(ℝᵈ) = ℝ₊* × SO(d) × ℝᵈ acting on the target
Group law, centered action, algebra metric, Hamiltonian, optimal control,
dynamics, closed-form flow and conserved quantities

R, p_R and r are handled as unconstrained d×d matrices; orthogonality of R is
a monitored diagnostic, not a constraint of the flow.
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from src.core.errors import ContractError, ShapeError
from src.core.state import MultiscaleConfiguration

ORTHOGONALITY_TOL = 1e-8
SKEW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SimElement:
    """Group element a = (ρ, R, τ)"""
    rho: float
    R: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        object.__setattr__(self, 'rho', float(self.rho))
        object.__setattr__(self, 'R', R)
        object.__setattr__(self, 'tau', tau)
        if R.shape != (tau.size, tau.size):
            raise ShapeError(f"R must be {tau.size}×{tau.size}, got {R.shape}")
        if not self.rho > 0:
            raise ContractError(f"Scaling ρ must be positive, got {self.rho}")

    @classmethod
    def checked(cls, rho: float, R, tau, tol: float = ORTHOGONALITY_TOL) -> "SimElement":
        """Construct and verify R ∈ SO(d) within tolerance"""
        element = cls(rho, R, tau)
        defect = orthogonality_defect(element.R)
        if defect > tol:
            raise ContractError(f"R is not orthogonal: ‖RᵀR − Id‖_F = {defect:.3e} > {tol:.1e}")
        if np.linalg.det(element.R) <= 0:
            raise ContractError("R must preserve orientation (det R > 0)")
        return element

    @property
    def d(self) -> int:
        return self.tau.size

    def to_dict(self) -> Dict:
        return {'rho': self.rho, 'R': self.R.tolist(), 'tau': self.tau.tolist()}


@dataclass(frozen=True, eq=False)
class SimMomentum:
    """Cotangent p_a = (p_ρ, p_R, p_τ); p_R is an unconstrained d×d matrix"""
    p_rho: float
    p_R: np.ndarray
    p_tau: np.ndarray

    def __post_init__(self):
        p_R = np.atleast_2d(np.asarray(self.p_R, dtype=float))
        p_tau = np.atleast_1d(np.asarray(self.p_tau, dtype=float))
        object.__setattr__(self, 'p_rho', float(self.p_rho))
        object.__setattr__(self, 'p_R', p_R)
        object.__setattr__(self, 'p_tau', p_tau)
        if p_R.shape != (p_tau.size, p_tau.size):
            raise ShapeError(f"p_R must be {p_tau.size}×{p_tau.size}, got {p_R.shape}")

    @classmethod
    def zeros(cls, d: int) -> "SimMomentum":
        return cls(0.0, np.zeros((d, d)), np.zeros(d))

    @property
    def d(self) -> int:
        return self.p_tau.size

    def is_zero(self) -> bool:
        return self.p_rho == 0 and not np.any(self.p_R) and not np.any(self.p_tau)

    def to_dict(self) -> Dict:
        return {'p_rho': self.p_rho, 'p_R': self.p_R.tolist(), 'p_tau': self.p_tau.tolist()}


@dataclass(frozen=True, eq=False)
class SimAlgebra:
    """Algebra element s = (α, r, σ) with r skew-symmetric"""
    alpha: float
    r: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.r, dtype=float))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, 'alpha', float(self.alpha))
        object.__setattr__(self, 'r', r)
        object.__setattr__(self, 'sigma', sigma)
        if r.shape != (sigma.size, sigma.size):
            raise ShapeError(f"r must be {sigma.size}×{sigma.size}, got {r.shape}")
        if np.max(np.abs(r + r.T), initial=0.0) > SKEW_TOL * max(1.0, np.max(np.abs(r), initial=0.0)):
            raise ContractError("Rotation generator r must be skew-symmetric")

    @classmethod
    def zeros(cls, d: int) -> "SimAlgebra":
        return cls(0.0, np.zeros((d, d)), np.zeros(d))


@dataclass(frozen=True, eq=False)
class SimTangent:
    """Velocity (ρ̇, Ṙ, τ̇) of a group trajectory, or a cotangent on the same slots"""
    d_rho: float
    d_R: np.ndarray
    d_tau: np.ndarray


# ============== GROUP LAW AND ACTION ==============

def sim_identity(d: int) -> SimElement:
    return SimElement(1.0, np.eye(d), np.zeros(d))


def sim_compose(a: SimElement, b: SimElement) -> SimElement:
    """(ρ_a ρ_b, R_a R_b, τ_a + τ_b)"""
    if a.d != b.d:
        raise ShapeError(f"Cannot compose elements of dimension {a.d} and {b.d}")
    return SimElement(a.rho * b.rho, a.R @ b.R, a.tau + b.tau)


def sim_inverse(a: SimElement) -> SimElement:
    return SimElement(1.0 / a.rho, a.R.T, -a.tau)


def sim_act(a: SimElement, q: MultiscaleConfiguration, centers: Sequence) -> MultiscaleConfiguration:
    """Centered action ρR(q_i^ℓ − q_c^ℓ) + q_c^ℓ + τ, scale by scale"""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.shape[0] != q.L:
        raise ShapeError(f"Expected {q.L} centers (one per scale), got {centers.shape[0]}")
    moved = []
    for points, c in zip(q.scales, centers):
        moved.append(a.rho * (points - c) @ a.R.T + c + a.tau)
    return MultiscaleConfiguration(tuple(moved))


# ============== METRIC, HAMILTONIAN, CONTROL ==============

def sim_metric(s1: SimAlgebra, s2: SimAlgebra) -> float:
    """αα' + Tr(rᵀr') + ⟨σ,σ'⟩"""
    return float(s1.alpha * s2.alpha + np.sum(s1.r * s2.r) + s1.sigma @ s2.sigma)


def sim_hamiltonian(a: SimElement, pa: SimMomentum, s: SimAlgebra) -> float:
    """(p_ρ|αρ) + (p_R|rR) + (p_τ|σ) − ½|s|²"""
    return float(
        pa.p_rho * s.alpha * a.rho
        + np.sum(pa.p_R * (s.r @ a.R))
        + pa.p_tau @ s.sigma
        - 0.5 * sim_metric(s, s)
    )


def skew_part(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M - M.T)


def sim_optimal_control(a: SimElement, pa: SimMomentum) -> SimAlgebra:
    """α = ρp_ρ, r = (p_R Rᵀ − R p_Rᵀ)/2, σ = p_τ"""
    return SimAlgebra(a.rho * pa.p_rho, skew_part(pa.p_R @ a.R.T), pa.p_tau.copy())


def sim_reduced_hamiltonian(a: SimElement, pa: SimMomentum) -> float:
    """h_sim(a, p_a) = ½|s*|²"""
    s = sim_optimal_control(a, pa)
    return 0.5 * sim_metric(s, s)


def sim_rhs(a: SimElement, pa: SimMomentum) -> Tuple[SimTangent, SimMomentum]:
    """
    Hamiltonian vector field of the Sim⁺ block

    Returns:
        (ρ̇, Ṙ, τ̇) = (αρ, rR, σ) and (ṗ_ρ, ṗ_R, ṗ_τ) = (−αp_ρ, −rᵀp_R, 0)
    """
    d_rho, d_R, d_tau, d_p_rho, d_p_R, d_p_tau = sim_field(a.rho, a.R, pa.p_rho, pa.p_R, pa.p_tau)
    return SimTangent(d_rho, d_R, d_tau), SimMomentum(d_p_rho, d_p_R, d_p_tau)


def sim_field(rho: float, R: np.ndarray, p_rho: float, p_R: np.ndarray, p_tau: np.ndarray):
    """Array-level sim_rhs, usable on states that left the group (e.g. ρ ≤ 0 mid-step)"""
    alpha = rho * p_rho
    r = skew_part(p_R @ R.T)
    return alpha * rho, r @ R, np.array(p_tau, dtype=float), -alpha * p_rho, -r.T @ p_R, np.zeros_like(p_tau)


def sim_field_vjp(rho, R, p_rho, p_R, lam_rho, Lam_R, lam_tau, mu_rho, M_R):
    """Vector-Jacobian product of the similarity field; the cotangent of ṗ_τ drops out since ṗ_τ ≡ 0"""
    r = skew_part(p_R @ R.T)
    # ṗ_R = −rᵀp_R = r p_R because r is skew
    W = skew_part(Lam_R @ R.T + M_R @ p_R.T)
    g_rho = 2.0 * lam_rho * rho * p_rho - mu_rho * p_rho * p_rho
    g_R = r.T @ Lam_R - W @ p_R
    g_p_rho = lam_rho * rho * rho - 2.0 * mu_rho * rho * p_rho
    g_p_R = r.T @ M_R + W @ R
    lam_tau = np.asarray(lam_tau, dtype=float)
    return g_rho, g_R, np.zeros_like(lam_tau), g_p_rho, g_p_R, lam_tau.copy()


def sim_conserved_quantities(a: SimElement, pa: SimMomentum) -> Dict[str, np.ndarray]:
    """Noether quantities ρp_ρ, Rᵀp_R and p_τ"""
    return {
        'rho_p_rho': a.rho * pa.p_rho,
        'Rt_p_R': a.R.T @ pa.p_R,
        'p_tau': pa.p_tau.copy(),
    }


# ============== EXPONENTIAL AND CLOSED FORM ==============

def so_exponential(r: np.ndarray, t: float = 1.0) -> np.ndarray:
    """
    Matrix exponential of r·t for skew r

    Closed forms for d = 2 (angle) and d = 3 (Rodrigues), scaling and squaring
    Taylor series otherwise.
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    d = r.shape[0]
    if r.shape != (d, d):
        raise ShapeError(f"Generator must be square, got {r.shape}")
    if np.max(np.abs(r + r.T), initial=0.0) > SKEW_TOL * max(1.0, np.max(np.abs(r), initial=0.0)):
        raise ContractError("so_exponential requires a skew-symmetric generator")
    A = r * t
    if d == 1:
        return np.eye(1)
    if d == 2:
        theta = A[1, 0]
        c, s = math.cos(theta), math.sin(theta)
        return np.array([[c, -s], [s, c]])
    if d == 3:
        omega = np.array([A[2, 1], A[0, 2], A[1, 0]])
        theta = float(np.linalg.norm(omega))
        if theta < 1e-8:
            # series of sinθ/θ and (1−cosθ)/θ²
            a_coef = 1.0 - theta * theta / 6.0
            b_coef = 0.5 - theta * theta / 24.0
        else:
            a_coef = math.sin(theta) / theta
            b_coef = (1.0 - math.cos(theta)) / (theta * theta)
        return np.eye(3) + a_coef * A + b_coef * (A @ A)
    return _expm_taylor(A)


def _expm_taylor(A: np.ndarray, terms: int = 20) -> np.ndarray:
    norm = np.linalg.norm(A, ord=1)
    squarings = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    B = A / (2.0 ** squarings)
    result = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for n in range(1, terms + 1):
        term = term @ B / n
        result = result + term
    for _ in range(squarings):
        result = result @ result
    return result


def sim_closed_form(pa0: SimMomentum, t: float) -> Tuple[SimElement, SimMomentum]:
    """Exact Sim⁺ flow from the neutral element with initial momentum pa0"""
    e = sim_identity(pa0.d)
    s = sim_optimal_control(e, pa0)
    rotation = so_exponential(s.r, t)
    a_t = SimElement(math.exp(s.alpha * t), rotation, s.sigma * t)
    pa_t = SimMomentum(pa0.p_rho * math.exp(-s.alpha * t), rotation @ pa0.p_R, pa0.p_tau.copy())
    return a_t, pa_t


# ============== DIAGNOSTICS ==============

def orthogonality_defect(R: np.ndarray) -> float:
    """‖RᵀR − Id‖_F"""
    R = np.asarray(R, dtype=float)
    return float(np.linalg.norm(R.T @ R - np.eye(R.shape[0])))


def polar_project(R: np.ndarray) -> np.ndarray:
    """Nearest orthogonal matrix (unitary polar factor)"""
    U, _ = linalg.polar(np.asarray(R, dtype=float))
    return U


def project_element(a: SimElement, enabled: bool = True) -> SimElement:
    if not enabled:
        return a
    return SimElement(a.rho, polar_project(a.R), a.tau)


def rotation_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    """Skew generator for a rotation of `angle` about `axis` (d = 3)"""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    return angle * np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])


def planar_generator(theta: float) -> np.ndarray:
    return theta * np.array([[0.0, -1.0], [1.0, 0.0]])


def random_rotation(d: int, rng: np.random.Generator, max_angle: Optional[float] = None) -> np.ndarray:
    """Rotation exp(r) for a random skew r, optionally with bounded Frobenius size"""
    M = rng.normal(size=(d, d))
    r = skew_part(M)
    if max_angle is not None and np.any(r):
        r = r * (max_angle / np.sqrt(0.5 * np.sum(r * r)))
    return so_exponential(r, 1.0)
