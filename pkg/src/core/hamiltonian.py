"""
Hamiltonian Module - Joint dynamics of the multiscale landmarks and Sim⁺
The Hamiltonian is a sum of a landmark part and a similarity part; the two
blocks of the phase flow never exchange information.

Two evaluation paths coexist:
    • band path   - band fields μ_k and per-scale kernels, written like the math
    • pair path   - the effective pair kernel G_ab on stacked landmarks, used
                    by the integrator, adjoints and probes
Tests certify the two against each other.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ContractError, ShapeError
from src.core.kernels import (
    BandField, ControlField, ScaleConfig, kernel_eval, pair_kernel_matrices,
    rkhs_energy, velocity_at,
)
from src.core.simgroup import (
    SimElement, SimMomentum, SimTangent, sim_field, sim_field_vjp, sim_identity,
    sim_reduced_hamiltonian,
)
from src.core.state import MultiscaleConfiguration, MultiscaleMomentum, bands_from


class Fault(Enum):
    """Deliberate mutations used to prove the invariant suite can fail"""
    FLIP_P_R = "flip-pR"


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """Joint state (q, p, a, p_a)"""
    q: MultiscaleConfiguration
    p: MultiscaleMomentum
    a: SimElement
    pa: SimMomentum

    def __post_init__(self):
        self.p.check_compatible(self.q)
        if self.a.d != self.q.d or self.pa.d != self.q.d:
            raise ShapeError(f"Sim⁺ state dimension differs from the landmark dimension {self.q.d}")

    @classmethod
    def initial(cls, q: MultiscaleConfiguration, p: MultiscaleMomentum,
                pa: Optional[SimMomentum] = None) -> "PhasePoint":
        """State at t = 0: group element at the neutral element"""
        return cls(q, p, sim_identity(q.d), pa if pa is not None else SimMomentum.zeros(q.d))


@dataclass(frozen=True, eq=False)
class PhaseTangent:
    """Velocity (q̇, ṗ, ȧ, ṗ_a) of a PhasePoint"""
    dq: MultiscaleMomentum
    dp: MultiscaleMomentum
    da: SimTangent
    dpa: SimMomentum


class PhaseLayout:
    """Packs PhasePoints into flat vectors [q, p, ρ, R, τ, p_ρ, p_R, p_τ]"""

    def __init__(self, counts: Sequence[int], d: int):
        self.counts = tuple(int(c) for c in counts)
        self.d = int(d)
        self.n = sum(self.counts)
        nd, dd = self.n * d, d * d
        offsets = np.cumsum([0, nd, nd, 1, dd, d, 1, dd, d])
        names = ['q', 'p', 'rho', 'R', 'tau', 'p_rho', 'p_R', 'p_tau']
        self.slices = {name: slice(offsets[i], offsets[i + 1]) for i, name in enumerate(names)}
        self.size = int(offsets[-1])
        self.scale_index = np.repeat(np.arange(len(self.counts)), self.counts)

    @classmethod
    def for_state(cls, q: MultiscaleConfiguration) -> "PhaseLayout":
        return cls(q.counts, q.d)

    def landmark_slice(self) -> slice:
        return slice(0, 2 * self.n * self.d)

    def sim_slice(self) -> slice:
        return slice(2 * self.n * self.d, self.size)

    def momentum_mask(self, sim_enabled: bool = True) -> np.ndarray:
        """Boolean mask of the initial-momentum coordinates (p and optionally p_a)"""
        mask = np.zeros(self.size, dtype=bool)
        mask[self.slices['p']] = True
        if sim_enabled:
            for name in ('p_rho', 'p_R', 'p_tau'):
                mask[self.slices[name]] = True
        return mask

    def blocks(self, z: np.ndarray) -> Dict[str, np.ndarray]:
        """Views of z reshaped to their natural shapes"""
        d, s = self.d, self.slices
        return {
            'q': z[s['q']].reshape(self.n, d),
            'p': z[s['p']].reshape(self.n, d),
            'rho': z[s['rho']][0],
            'R': z[s['R']].reshape(d, d),
            'tau': z[s['tau']],
            'p_rho': z[s['p_rho']][0],
            'p_R': z[s['p_R']].reshape(d, d),
            'p_tau': z[s['p_tau']],
        }

    def assemble(self, q, p, rho, R, tau, p_rho, p_R, p_tau) -> np.ndarray:
        z = np.empty(self.size)
        s = self.slices
        z[s['q']] = np.ravel(q)
        z[s['p']] = np.ravel(p)
        z[s['rho']] = rho
        z[s['R']] = np.ravel(R)
        z[s['tau']] = np.ravel(tau)
        z[s['p_rho']] = p_rho
        z[s['p_R']] = np.ravel(p_R)
        z[s['p_tau']] = np.ravel(p_tau)
        return z

    def pack(self, x: PhasePoint) -> np.ndarray:
        if x.q.counts != self.counts or x.q.d != self.d:
            raise ShapeError(f"State shape {x.q.counts} does not fit layout {self.counts}")
        return self.assemble(x.q.stacked(), x.p.stacked(), x.a.rho, x.a.R, x.a.tau,
                             x.pa.p_rho, x.pa.p_R, x.pa.p_tau)

    def unpack(self, z: np.ndarray) -> PhasePoint:
        b = self.blocks(z)
        return PhasePoint(
            MultiscaleConfiguration.from_stacked(b['q'].copy(), self.counts),
            MultiscaleMomentum.from_stacked(b['p'].copy(), self.counts),
            SimElement(b['rho'], b['R'].copy(), b['tau'].copy()),
            SimMomentum(b['p_rho'], b['p_R'].copy(), b['p_tau'].copy()),
        )

    def pack_tangent(self, v: PhaseTangent) -> np.ndarray:
        return self.assemble(v.dq.stacked(), v.dp.stacked(), v.da.d_rho, v.da.d_R, v.da.d_tau,
                             v.dpa.p_rho, v.dpa.p_R, v.dpa.p_tau)

    def unpack_tangent(self, z: np.ndarray) -> PhaseTangent:
        b = self.blocks(z)
        return PhaseTangent(
            MultiscaleMomentum.from_stacked(b['q'].copy(), self.counts),
            MultiscaleMomentum.from_stacked(b['p'].copy(), self.counts),
            SimTangent(b['rho'], b['R'].copy(), b['tau'].copy()),
            SimMomentum(b['p_rho'], b['p_R'].copy(), b['p_tau'].copy()),
        )


class HamiltonianSystem:
    """
    Reduced Hamiltonian h = ½ Σ_ab G_ab ⟨p_a,p_b⟩ + ½|s*|² on flat phase vectors

    Provides the energy, the Hamiltonian vector field and its hand-coded
    vector-Jacobian product.
    """

    def __init__(self, cfg: ScaleConfig, layout: PhaseLayout, fault: Optional[Fault] = None):
        if layout.d != cfg.d or len(layout.counts) != cfg.L:
            raise ShapeError(f"Layout {layout.counts} (d={layout.d}) does not fit the scale config")
        self.cfg = cfg
        self.layout = layout
        self.fault = fault

    @classmethod
    def for_state(cls, cfg: ScaleConfig, x: PhasePoint, fault: Optional[Fault] = None) -> "HamiltonianSystem":
        return cls(cfg, PhaseLayout.for_state(x.q), fault)

    # ----- energy -----

    def landmark_energy(self, z: np.ndarray) -> float:
        b = self.layout.blocks(z)
        _, G, _ = pair_kernel_matrices(self.cfg, b['q'], self.layout.scale_index, order=1)
        return 0.5 * float(np.sum(G * (b['p'] @ b['p'].T)))

    def sim_energy(self, z: np.ndarray) -> float:
        b = self.layout.blocks(z)
        alpha = b['rho'] * b['p_rho']
        M = b['p_R'] @ b['R'].T
        r = 0.5 * (M - M.T)
        return 0.5 * float(alpha * alpha + np.sum(r * r) + b['p_tau'] @ b['p_tau'])

    def energy(self, z: np.ndarray) -> float:
        return self.landmark_energy(z) + self.sim_energy(z)

    # ----- vector field -----

    def rhs(self, z: np.ndarray) -> np.ndarray:
        """(∂h/∂p, −∂h/∂q, ∂h/∂p_a, −∂h/∂a) as a flat vector"""
        b = self.layout.blocks(z)
        X, P = b['q'], b['p']
        diff, G, G1 = pair_kernel_matrices(self.cfg, X, self.layout.scale_index, order=1)
        dX = G @ P
        dP = -2.0 * np.einsum('ab,abi->ai', G1 * (P @ P.T), diff)

        d_rho, d_R, d_tau, d_p_rho, d_p_R, d_p_tau = sim_field(
            b['rho'], b['R'], b['p_rho'], b['p_R'], b['p_tau'])
        if self.fault is Fault.FLIP_P_R:
            d_p_R = -d_p_R
        return self.layout.assemble(dX, dP, d_rho, d_R, d_tau, d_p_rho, d_p_R, d_p_tau)

    def vjp(self, z: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        """cᵀ · ∂rhs/∂z, the gradient of ⟨c, rhs(z)⟩ with respect to z"""
        b = self.layout.blocks(z)
        c = self.layout.blocks(cotangent)
        X, P = b['q'], b['p']
        lam_x, lam_p = c['q'], c['p']
        diff, G, G1, G2 = pair_kernel_matrices(self.cfg, X, self.layout.scale_index, order=2)
        PP = P @ P.T

        # ⟨λx, q̇⟩ with q̇_a = Σ_b G_ab p_b
        C = lam_x @ P.T
        g_p = G @ lam_x
        g_x = 2.0 * np.einsum('ab,abi->ai', G1 * (C + C.T), diff)

        # ⟨λp, ṗ⟩ with ṗ_a = −2 Σ_b G1_ab ⟨p_a,p_b⟩ (x_a − x_b)
        proj = np.einsum('ai,abi->ab', lam_p, diff)
        E = G1 * proj
        g_p -= 2.0 * (E + E.T) @ P
        F = G2 * PP * (proj + proj.T)
        g_x -= 4.0 * np.einsum('ab,abi->ai', F, diff)
        H = G1 * PP
        g_x -= 2.0 * (H.sum(axis=1)[:, None] * lam_p - H @ lam_p)

        M_R = -c['p_R'] if self.fault is Fault.FLIP_P_R else c['p_R']
        g_rho, g_R, g_tau, g_p_rho, g_p_R, g_p_tau = sim_field_vjp(
            b['rho'], b['R'], b['p_rho'], b['p_R'],
            c['rho'], c['R'], c['tau'], c['p_rho'], M_R)
        return self.layout.assemble(g_x, g_p, g_rho, g_R, g_tau, g_p_rho, g_p_R, g_p_tau)

    def landmark_velocity(self, z: np.ndarray) -> np.ndarray:
        """q̇ for every stacked landmark, (n, d)"""
        b = self.layout.blocks(z)
        _, G, _ = pair_kernel_matrices(self.cfg, b['q'], self.layout.scale_index, order=1)
        return G @ b['p']


# ============== OPERATIONS ON PHASE POINTS ==============

def h_landmarks(cfg: ScaleConfig, q: MultiscaleConfiguration, p: MultiscaleMomentum,
                bands: ControlField) -> float:
    """Σ_ℓ Σ_i ⟨p_i^ℓ, u^ℓ(q_i^ℓ)⟩ − ½|Au|² for the control carried by `bands`"""
    p.check_compatible(q)
    if bands.L != q.L:
        raise ShapeError(f"Control has {bands.L} bands but the state has {q.L} scales")
    pairing = 0.0
    for ell in range(1, q.L + 1):
        for point, covector in zip(q.scale(ell), p.scale(ell)):
            pairing += float(covector @ velocity_at(cfg, bands, ell, point))
    return pairing - 0.5 * rkhs_energy(cfg, bands)


def reduced_hamiltonian(cfg: ScaleConfig, x: PhasePoint) -> float:
    """h(x) = ½|Au*|² + ½|s*|² at the optimal controls"""
    return 0.5 * rkhs_energy(cfg, bands_from(x.q, x.p)) + sim_reduced_hamiltonian(x.a, x.pa)


def phase_rhs(cfg: ScaleConfig, x: PhasePoint, fault: Optional[Fault] = None) -> PhaseTangent:
    """Hamiltonian vector field at x"""
    system = HamiltonianSystem.for_state(cfg, x, fault)
    return system.layout.unpack_tangent(system.rhs(system.layout.pack(x)))


def finest_scale_reduction_check(cfg: ScaleConfig, q: MultiscaleConfiguration,
                                 p: MultiscaleMomentum,
                                 points: Optional[np.ndarray] = None) -> Dict[str, float]:
    """
    Compare the finest-scale velocity of the fully coupled model with the model
    constrained on the finest scale only, when coarse momenta vanish

    Returns:
        'discrepancy' - max |u^L (coupled) − u^L (finest only)| over the points
        'telescoping' - max |v^l − (u^l − u^{l−1})| over scales and points
    """
    p.check_compatible(q)
    if any(np.any(p.scale(ell)) for ell in range(1, q.L)):
        raise ContractError("Reduction check requires zero momenta on every scale but the finest")
    if points is None:
        points = q.stacked()
    points = np.atleast_2d(np.asarray(points, dtype=float))

    bands = bands_from(q, p)
    finest = BandField(q.scale(q.L), p.scale(q.L))
    discrepancy = 0.0
    telescoping = 0.0
    for x in points:
        coupled = velocity_at(cfg, bands, q.L, x)
        finest_only = sum((kernel_eval(cfg, k, finest, x) for k in range(1, q.L + 1)), np.zeros(cfg.d))
        discrepancy = max(discrepancy, float(np.max(np.abs(coupled - finest_only))))
        previous = np.zeros(cfg.d)
        for ell in range(1, q.L + 1):
            current = velocity_at(cfg, bands, ell, x)
            v_ell = kernel_eval(cfg, ell, bands.band(ell), x)
            telescoping = max(telescoping, float(np.max(np.abs(v_ell - (current - previous)))))
            previous = current
    return {'discrepancy': discrepancy, 'telescoping': telescoping}
