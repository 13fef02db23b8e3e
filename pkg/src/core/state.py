"""
State Module - Multiscale landmark configurations, momenta and band fields
Scales are listed coarse to fine; scale ℓ holds n_ℓ points of dimension d
"""

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ConfigError, ContractError, ShapeError
from src.core.kernels import BandField, ControlField, ScaleConfig


class _ScaleStack:
    """Shared behaviour of per-scale point/covector stacks"""

    scales: Tuple[np.ndarray, ...]

    def _normalize(self, scales: Iterable) -> Tuple[np.ndarray, ...]:
        arrays = []
        for level, pts in enumerate(scales, start=1):
            arr = np.asarray(pts, dtype=float)
            if arr.size == 0:
                arr = arr.reshape(0, arr.shape[-1] if arr.ndim == 2 else 0)
            if arr.ndim != 2:
                raise ShapeError(f"Scale {level} must be an (n, d) array, got shape {arr.shape}")
            arrays.append(arr)
        if not arrays:
            raise ShapeError("At least one scale is required")
        dims = {a.shape[1] for a in arrays if a.shape[0] > 0}
        if len(dims) > 1:
            raise ShapeError(f"All points must share one dimension, got {sorted(dims)}")
        return tuple(arrays)

    @property
    def L(self) -> int:
        return len(self.scales)

    @property
    def d(self) -> int:
        return self.scales[0].shape[1]

    @property
    def counts(self) -> Tuple[int, ...]:
        return tuple(s.shape[0] for s in self.scales)

    @property
    def n_total(self) -> int:
        return sum(self.counts)

    def scale(self, ell: int) -> np.ndarray:
        if not 1 <= ell <= self.L:
            raise IndexError(f"Scale index {ell} out of range 1..{self.L}")
        return self.scales[ell - 1]

    def stacked(self) -> np.ndarray:
        """All points, scale after scale, as one (n_total, d) array"""
        return np.concatenate(self.scales, axis=0).reshape(-1, self.d)

    def scale_index(self) -> np.ndarray:
        """0-based scale of every stacked row"""
        return np.repeat(np.arange(self.L), self.counts)

    def same_shape(self, other: "_ScaleStack") -> bool:
        return self.counts == other.counts and self.d == other.d

    def to_lists(self) -> List[List[List[float]]]:
        return [s.tolist() for s in self.scales]


@dataclass(frozen=True, eq=False)
class MultiscaleConfiguration(_ScaleStack):
    """Landmark positions q_i^ℓ at L nested scales"""
    scales: Tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, 'scales', self._normalize(self.scales))

    @classmethod
    def from_stacked(cls, points: np.ndarray, counts: Sequence[int]) -> "MultiscaleConfiguration":
        return cls(tuple(np.split(np.asarray(points, dtype=float), np.cumsum(counts)[:-1])))

    def check_nested(self) -> None:
        """Prefix nesting of index sets: n_ℓ ≤ n_{ℓ+1}"""
        counts = self.counts
        for ell, (a, b) in enumerate(zip(counts, counts[1:]), start=1):
            if a > b:
                raise ShapeError(
                    f"Scale {ell} has {a} landmarks but scale {ell + 1} only {b}; "
                    "index sets must increase from coarse to fine"
                )

    def check_dimension(self, d: int) -> None:
        if any(s.shape[1] != d for s in self.scales):
            raise ShapeError(f"Configuration dimension differs from the scale config (d={d})")


@dataclass(frozen=True, eq=False)
class MultiscaleMomentum(_ScaleStack):
    """Covectors p_i^ℓ, one per landmark per scale"""
    scales: Tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, 'scales', self._normalize(self.scales))

    @classmethod
    def from_stacked(cls, values: np.ndarray, counts: Sequence[int]) -> "MultiscaleMomentum":
        return cls(tuple(np.split(np.asarray(values, dtype=float), np.cumsum(counts)[:-1])))

    @classmethod
    def zeros_like(cls, q: MultiscaleConfiguration) -> "MultiscaleMomentum":
        return cls(tuple(np.zeros_like(s) for s in q.scales))

    def check_compatible(self, q: MultiscaleConfiguration) -> None:
        if not self.same_shape(q):
            raise ShapeError(
                f"Momentum shape {self.counts} (d={self.d}) does not match configuration "
                f"{q.counts} (d={q.d})"
            )

    def is_zero(self) -> bool:
        return all(not np.any(s) for s in self.scales)


@dataclass(frozen=True, eq=False)
class RegistrationProblem:
    """Source/target pair with its scale stack and data-term settings"""
    source: MultiscaleConfiguration
    target: MultiscaleConfiguration
    cfg: ScaleConfig
    data_weight: float = 1.0
    sim_enabled: bool = False
    data_scales: Optional[Tuple[int, ...]] = None   # scales entering g; None means all

    def __post_init__(self):
        if self.source.L != self.target.L:
            raise ShapeError(
                f"Source has {self.source.L} scales but target has {self.target.L}"
            )
        if not self.source.same_shape(self.target):
            raise ShapeError(
                f"Source counts {self.source.counts} differ from target counts {self.target.counts}"
            )
        if self.source.L != self.cfg.L:
            raise ShapeError(
                f"Problem has {self.source.L} scales but the scale config declares {self.cfg.L}"
            )
        self.source.check_dimension(self.cfg.d)
        self.target.check_dimension(self.cfg.d)
        if not self.data_weight > 0:
            raise ConfigError(f"Data weight must be positive, got {self.data_weight}")
        if self.data_scales is not None:
            scales = tuple(sorted(set(int(s) for s in self.data_scales)))
            if not scales or not all(1 <= s <= self.cfg.L for s in scales):
                raise ConfigError(f"Data scales must be a non-empty subset of 1..{self.cfg.L}, got {self.data_scales}")
            object.__setattr__(self, 'data_scales', scales)

    @property
    def scored_scales(self) -> Tuple[int, ...]:
        """1-based scales whose landmarks the data term compares"""
        return self.data_scales if self.data_scales is not None else tuple(range(1, self.cfg.L + 1))

    def data_mask(self) -> np.ndarray:
        """True on every stacked target row that enters the data term"""
        return np.isin(self.target.scale_index(), np.asarray(self.scored_scales) - 1)

    def target_centers(self) -> np.ndarray:
        """Per-scale centers of mass of the target, fixed for the whole run"""
        return np.stack([center_of_mass(self.target, ell) for ell in range(1, self.target.L + 1)])


def bands_from(q: MultiscaleConfiguration, p: MultiscaleMomentum) -> ControlField:
    """Band k collects every atom (q_i^m, p_i^m) with m ≥ k"""
    p.check_compatible(q)
    bands = []
    for k in range(q.L):
        locations = np.concatenate(q.scales[k:], axis=0).reshape(-1, q.d)
        weights = np.concatenate(p.scales[k:], axis=0).reshape(-1, q.d)
        bands.append(BandField(locations, weights))
    return ControlField(bands)


def center_of_mass(q: MultiscaleConfiguration, ell: int) -> np.ndarray:
    """Arithmetic mean of the scale-ℓ points"""
    points = q.scale(ell)
    if points.shape[0] == 0:
        raise ContractError(f"Scale {ell} is empty; its center of mass is undefined")
    return points.mean(axis=0)
