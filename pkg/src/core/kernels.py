"""
Kernels Module - Multiscale Gaussian RKHS machinery
Per-scale kernels K^k, band fields, velocities u^ℓ, Jacobians and energies

Scale indices passed to public functions are 1-based, coarse to fine.
"""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from src.core.errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ScaleConfig:
    """Spatial dimension and the decreasing kernel widths of the scale stack"""
    d: int
    sigmas: Tuple[float, ...]

    def __post_init__(self):
        sigmas = tuple(float(s) for s in self.sigmas)
        object.__setattr__(self, 'sigmas', sigmas)
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError(f"Spatial dimension must be an integer >= 1, got {self.d}")
        if len(sigmas) < 1:
            raise ConfigError("At least one scale is required")
        if any(not np.isfinite(s) or s <= 0 for s in sigmas):
            raise ConfigError(f"Kernel widths must be positive, got {list(sigmas)}")
        if any(a <= b for a, b in zip(sigmas, sigmas[1:])):
            raise ConfigError(
                f"Kernel widths must be strictly decreasing (coarse to fine), got {list(sigmas)}"
            )

    @property
    def L(self) -> int:
        return len(self.sigmas)

    def sigma(self, k: int) -> float:
        """Width of kernel K^k (1-based)"""
        return self.sigmas[check_scale_index(self, k) - 1]

    def to_dict(self):
        return {'d': self.d, 'sigmas': list(self.sigmas)}


def check_scale_index(cfg: ScaleConfig, k: int) -> int:
    if not 1 <= k <= cfg.L:
        raise IndexError(f"Scale index {k} out of range 1..{cfg.L}")
    return k


@dataclass(frozen=True)
class BandField:
    """Weighted Dirac sum Σ_j δ_{x_j}^{w_j}"""
    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.locations, dtype=float))
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if x.size == 0 and w.size == 0:
            d = max(x.shape[-1], w.shape[-1]) if x.ndim == 2 else 0
            x = np.zeros((0, d))
            w = np.zeros((0, d))
        if x.shape != w.shape:
            raise ShapeError(f"Band atoms need matching location/weight shapes, got {x.shape} and {w.shape}")
        object.__setattr__(self, 'locations', x)
        object.__setattr__(self, 'weights', w)

    @classmethod
    def empty(cls, d: int) -> "BandField":
        return cls(np.zeros((0, d)), np.zeros((0, d)))

    @property
    def n_atoms(self) -> int:
        return self.locations.shape[0]

    def pair(self, u) -> float:
        """Pairing (μ|u) = Σ_j ⟨u(x_j), w_j⟩ for a callable field u"""
        return float(sum(np.dot(u(x), w) for x, w in zip(self.locations, self.weights)))


@dataclass(frozen=True)
class ControlField:
    """Per-scale band fields; band k is smoothed by K^k"""
    bands: List[BandField] = field(default_factory=list)

    @property
    def L(self) -> int:
        return len(self.bands)

    def band(self, k: int) -> BandField:
        if not 1 <= k <= self.L:
            raise IndexError(f"Band index {k} out of range 1..{self.L}")
        return self.bands[k - 1]


def gaussian(sq_dist, sigma: float):
    return np.exp(-np.asarray(sq_dist) / (2.0 * sigma * sigma))


def kernel_eval(cfg: ScaleConfig, k: int, mu: BandField, x) -> np.ndarray:
    """K^k μ evaluated at x: Σ_j exp(−|x−x_j|²/(2σ_k²)) w_j"""
    sigma = cfg.sigma(k)
    x = np.asarray(x, dtype=float)
    if mu.n_atoms == 0:
        return np.zeros(cfg.d)
    diff = x[None, :] - mu.locations
    weights = gaussian(np.sum(diff * diff, axis=1), sigma)
    return weights @ mu.weights


def kernel_jacobian(cfg: ScaleConfig, k: int, mu: BandField, x) -> np.ndarray:
    """Spatial Jacobian ∂/∂x of kernel_eval, a d×d matrix"""
    sigma = cfg.sigma(k)
    x = np.asarray(x, dtype=float)
    if mu.n_atoms == 0:
        return np.zeros((cfg.d, cfg.d))
    diff = x[None, :] - mu.locations
    phi = gaussian(np.sum(diff * diff, axis=1), sigma)
    return -np.einsum('j,ja,jb->ab', phi, mu.weights, diff) / (sigma * sigma)


def velocity_at(cfg: ScaleConfig, bands: ControlField, ell: int, x) -> np.ndarray:
    """u^ℓ(x) = Σ_{k≤ℓ} K^k μ_k (x)"""
    check_scale_index(cfg, ell)
    total = np.zeros(cfg.d)
    for k in range(1, ell + 1):
        total = total + kernel_eval(cfg, k, bands.band(k), x)
    return total


def velocity_jacobian_at(cfg: ScaleConfig, bands: ControlField, ell: int, x) -> np.ndarray:
    """du^ℓ(x), summed over the bands feeding scale ℓ"""
    check_scale_index(cfg, ell)
    total = np.zeros((cfg.d, cfg.d))
    for k in range(1, ell + 1):
        total = total + kernel_jacobian(cfg, k, bands.band(k), x)
    return total


def rkhs_energy(cfg: ScaleConfig, bands: ControlField) -> float:
    """|Au|² = Σ_k ⟨μ_k, K^k μ_k⟩"""
    energy = 0.0
    for k, mu in enumerate(bands.bands, start=1):
        if mu.n_atoms == 0:
            continue
        diff = mu.locations[:, None, :] - mu.locations[None, :, :]
        gram = gaussian(np.sum(diff * diff, axis=2), cfg.sigma(k))
        energy += float(np.einsum('ab,ai,bi->', gram, mu.weights, mu.weights))
    return energy


# ============== VECTORIZED PAIR KERNEL ==============

def scale_masks(cfg: ScaleConfig, scale_index: np.ndarray,
                other_index: np.ndarray = None) -> np.ndarray:
    """
    Boolean masks M[k, a, b] = k ≤ min(ℓ_a, ℓ_b) (0-based k, 0-based scale indices)

    Args:
        scale_index: 0-based scale of every stacked landmark (rows)
        other_index: 0-based scale of the column points (defaults to rows)
    """
    rows = np.asarray(scale_index)
    cols = rows if other_index is None else np.asarray(other_index)
    shared = np.minimum(rows[:, None], cols[None, :])
    return np.arange(cfg.L)[:, None, None] <= shared[None, :, :]


def pair_kernel_matrices(cfg: ScaleConfig, x: np.ndarray, scale_index: np.ndarray,
                         y: np.ndarray = None, y_scale_index: np.ndarray = None,
                         order: int = 2) -> Sequence[np.ndarray]:
    """
    Effective pair kernel G_ab = Σ_{k ≤ min(ℓ_a,ℓ_b)} exp(−r²_ab/(2σ_k²))
    and its derivatives with respect to r² up to `order`

    Returns:
        (diff, G, G1[, G2]) with diff[a, b] = x_a − y_b
    """
    y = x if y is None else y
    y_scale_index = scale_index if y_scale_index is None else y_scale_index
    diff = x[:, None, :] - y[None, :, :]
    sq = np.sum(diff * diff, axis=2)
    masks = scale_masks(cfg, scale_index, y_scale_index)

    G = np.zeros_like(sq)
    G1 = np.zeros_like(sq)
    G2 = np.zeros_like(sq) if order >= 2 else None
    for k, sigma in enumerate(cfg.sigmas):
        s2 = sigma * sigma
        phi = np.where(masks[k], gaussian(sq, sigma), 0.0)
        G += phi
        G1 -= phi / (2.0 * s2)
        if G2 is not None:
            G2 += phi / (4.0 * s2 * s2)
    if G2 is None:
        return diff, G, G1
    return diff, G, G1, G2


def velocity_and_jacobian_at(cfg: ScaleConfig, points: np.ndarray, scale_index: np.ndarray,
                             momenta: np.ndarray, x: np.ndarray, ell: int,
                             with_jacobian: bool = True):
    """
    Batched u^ℓ and du^ℓ at evaluation points x (m×d) for stacked landmarks

    Returns:
        velocities (m×d) and, if requested, Jacobians (m×d×d)
    """
    check_scale_index(cfg, ell)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    probe_scale = np.full(x.shape[0], ell - 1)
    diff, G, G1 = pair_kernel_matrices(cfg, x, probe_scale, points, scale_index, order=1)
    velocities = G @ momenta
    if not with_jacobian:
        return velocities
    jacobians = 2.0 * np.einsum('mb,bi,mbj->mij', G1, momenta, diff)
    return velocities, jacobians
