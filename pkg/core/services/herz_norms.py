"""
Weak-L^p, Herz-type and Morrey norms of discrete fields.

The restricted weak norm of f on a set of cells S is

    max_m (m h^n)^{1/p} v_(m),   v_(1) >= v_(2) >= ... the decreasing rearrangement of |f| on S,

and the weak-Herz norm aggregates 2^{k alpha} times that norm over the
resolvable dyadic annuli A_k = {2^{k-1} <= |x| < 2^k} (membership by cell
centre).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings

from core.exceptions import ConfigurationError, ExponentError, IndexRangeError
from core.utils.fields import Field, Grid, parallel_map, require_physical, require_same_grid
from core.utils.presets import unit_ball_volume

logger = logging.getLogger(__name__)

INF = math.inf


def acceptance(name: str, default: float) -> float:
    return float(getattr(settings, 'BHK_ACCEPTANCE', {}).get(name, default))


def parse_exponent(value, name: str = 'exponent') -> float:
    """Accepts numbers and the strings 'inf'/'infinity'."""
    if isinstance(value, str):
        if value.strip().lower() in ('inf', 'infinity', '∞'):
            return INF
        try:
            return float(value)
        except ValueError:
            raise ConfigurationError(f"not a number: {value!r}", key=name)
    return float(value)


def reciprocal(x: float) -> float:
    return 0.0 if x == INF else 1.0 / x


def lq_aggregate(values: Sequence[float], q: float) -> float:
    """l^q norm of a finite nonnegative sequence; q = inf is the sup."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0.0
    if q == INF:
        return float(v.max())
    return float(np.sum(v ** q) ** (1.0 / q))


@dataclass(frozen=True)
class HerzParams:
    """Exponents (alpha, p, q) of a weak-Herz space."""
    alpha: float
    p: float
    q: float = INF

    def __post_init__(self):
        if not self.p > 1:
            raise ExponentError(f"p must be > 1, got {self.p}", condition='p > 1')
        if not self.q >= 1:
            raise ExponentError(f"q must be >= 1, got {self.q}", condition='q >= 1')

    def check_window(self, n: int):
        """-n/p < alpha < n(1 - 1/p), required by the convolution and multiplier estimates."""
        lo, hi = -n / self.p, n * (1.0 - reciprocal(self.p))
        if not lo < self.alpha < hi:
            raise ExponentError(f"alpha={self.alpha} outside ({lo:g}, {hi:g})",
                                condition='-n/p < alpha < n(1-1/p)')

    def doubled(self) -> 'HerzParams':
        return HerzParams(self.alpha, 2.0 * self.p, 2.0 * self.q)

    def to_dict(self) -> Dict[str, Any]:
        return {'alpha': self.alpha, 'p': _num(self.p), 'q': _num(self.q)}


def _num(x: float):
    return 'inf' if x == INF else x


@dataclass
class Profile:
    """
    Indexed family of weighted norms plus its l^exponent aggregate.

    `tail` holds the entries at the two ends of the resolvable range; the sum
    is treated as converged when both are below `truncation_tail` times the
    aggregate.
    """
    index_name: str
    indices: List[int]
    values: List[float]
    exponent: float
    space: str = 'wk'
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def aggregate(self) -> float:
        return lq_aggregate(self.values, self.exponent)

    @property
    def tail(self) -> Tuple[float, float]:
        if not self.values:
            return 0.0, 0.0
        return self.values[0], self.values[-1]

    @property
    def tail_ratio(self) -> float:
        agg = self.aggregate
        return max(self.tail) / agg if agg > 0 else 0.0

    @property
    def converged(self) -> bool:
        return self.tail_ratio < acceptance('truncation_tail', 0.05)

    def entry(self, index: int) -> float:
        return self.values[self.indices.index(index)]

    def as_dict(self) -> Dict[int, float]:
        return dict(zip(self.indices, self.values))

    def to_record(self) -> Dict[str, Any]:
        return {
            'space': self.space,
            'params': self.params,
            'profile': [[i, v] for i, v in zip(self.indices, self.values)],
            'aggregate': self.aggregate,
            'truncation_tail': list(self.tail),
            'converged': self.converged,
        }

    def to_frame(self):
        import pandas as pd
        return pd.DataFrame({self.index_name: self.indices, 'value': self.values})


class AnnulusProfile(Profile):
    def __init__(self, indices, values, exponent, space='wk', params=None):
        super().__init__('k', list(indices), [float(v) for v in values], exponent, space, dict(params or {}))


# ----------------------------------------------------------------------------
# Regions
# ----------------------------------------------------------------------------

def annulus_mask(grid: Grid, k: int) -> np.ndarray:
    r = grid.radius
    return (r >= 2.0 ** (k - 1)) & (r < 2.0 ** k)


def ball_mask(grid: Grid, center: Sequence[float], radius: float) -> np.ndarray:
    d2 = sum((c - x0) ** 2 for c, x0 in zip(grid.coords, center))
    return d2 < radius ** 2


def _check_k(grid: Grid, k: int):
    k_min, k_max = grid.k_range
    if not k_min <= k <= k_max:
        raise IndexRangeError(f"annulus {k} outside resolvable range [{k_min}, {k_max}]", key='k')


# ----------------------------------------------------------------------------
# Norms
# ----------------------------------------------------------------------------

def _weak_lp_values(values: np.ndarray, cell_volume: float, p: float) -> float:
    if values.size == 0:
        raise ConfigurationError("region is empty", key='region')
    if p == INF:
        return float(values.max())
    v = np.sort(values)[::-1]
    m = np.arange(1, v.size + 1)
    return float(np.max((m * cell_volume) ** (1.0 / p) * v))


def weak_lp_region(f: Field, region: Optional[np.ndarray], p: float) -> float:
    """
    Restricted weak-L^p quasi-norm of |f| over the cells where `region` is
    True (the whole grid when region is None); p = inf is the restricted sup.
    """
    require_physical(f)
    if not p > 1:
        raise ExponentError(f"p must be > 1, got {p}", condition='p > 1')
    mag = f.magnitude()
    values = mag.ravel() if region is None else mag[region]
    return _weak_lp_values(values, f.grid.cell_volume, p)


def global_weak_lp(f: Field, p: float) -> float:
    return weak_lp_region(f, None, p)


def lp_norm(f: Field, p: float, region: Optional[np.ndarray] = None) -> float:
    """Riemann-sum L^p norm (h^n sum |f|^p)^{1/p}; p = inf is the max."""
    require_physical(f)
    mag = f.magnitude()
    values = mag.ravel() if region is None else mag[region]
    if values.size == 0:
        return 0.0
    if p == INF:
        return float(values.max())
    return float((f.grid.cell_volume * np.sum(values ** p)) ** (1.0 / p))


def herz_profile(f: Field, hp: HerzParams, k_range: Optional[Tuple[int, int]] = None,
                 parallel: bool = False) -> AnnulusProfile:
    require_physical(f)
    grid = f.grid
    k_min, k_max = k_range or grid.k_range
    for k in (k_min, k_max):
        _check_k(grid, k)
    mag = f.magnitude()
    ks = list(range(k_min, k_max + 1))

    def entry(k):
        cells = mag[annulus_mask(grid, k)]
        if cells.size == 0:
            return 0.0
        return 2.0 ** (k * hp.alpha) * _weak_lp_values(cells, grid.cell_volume, hp.p)

    values = parallel_map(entry, ks) if parallel else [entry(k) for k in ks]
    return AnnulusProfile(ks, values, hp.q, space='wk', params=hp.to_dict())


def weak_herz_norm(f: Field, hp: HerzParams, k_range: Optional[Tuple[int, int]] = None) -> AnnulusProfile:
    """
    Returns:
        AnnulusProfile over the resolvable annuli; `.aggregate` is the l^q sum
        of 2^{k alpha} ||f||_{L^{p,inf}(A_k)}.
    """
    profile = herz_profile(f, hp, k_range, parallel=True)
    if profile.aggregate > 0 and not profile.converged:
        logger.warning("weak-Herz sum truncated with boundary entries at %.1f%% of the aggregate",
                       100.0 * profile.tail_ratio)
    return profile


@dataclass
class MorreyResult:
    value: float
    coarse_value: float
    refinement: float
    balls: List[Dict[str, Any]] = field(default_factory=list)

    def to_record(self) -> Dict[str, Any]:
        return {'value': self.value, 'coarse_value': self.coarse_value,
                'refinement': self.refinement, 'balls': self.balls}


def _morrey_value(f: Field, q: float, r: float, centers, radii) -> Tuple[float, List[Dict[str, Any]]]:
    grid = f.grid
    vol = unit_ball_volume(grid.n)
    best, balls = 0.0, []
    for c in centers:
        for R in radii:
            measure = vol * R ** grid.n
            value = measure ** (1.0 / r - 1.0 / q) * lp_norm(f, q, ball_mask(grid, c, R))
            balls.append({'center': list(c), 'radius': R, 'value': value})
            best = max(best, value)
    return best, balls


def coarsen(f: Field) -> Field:
    """Every other sample: the same cube on N/2 points per axis."""
    require_physical(f)
    grid = f.grid
    coarse = Grid(grid.n, grid.N // 2, grid.L)
    sl = (slice(None),) + (slice(None, None, 2),) * grid.n
    return Field(coarse, f.values[sl])


def morrey_norm(f: Field, q: float, r: float, centers: Optional[Sequence[Sequence[float]]] = None,
                radii: Optional[Sequence[float]] = None, coarse: Optional[Field] = None) -> MorreyResult:
    """
    sup over the balls of |B|^{1/r - 1/q} ||f||_{L^q(B)}, with the refinement
    ratio value(N) / value(N/2).

    `coarse` is the same function sampled on the N/2 grid; when omitted the
    field is subsampled, which keeps the fine grid's origin value and so hides
    growth coming from the singularity.
    """
    if not 1 <= q <= r < INF:
        raise ExponentError(f"need 1 <= q <= r < inf, got q={q}, r={r}", condition='1 <= q <= r < inf')
    grid = f.grid
    centers = [tuple(c) for c in (centers or [(0.0,) * grid.n])]
    radii = list(radii or [grid.L / 4.0])
    value, balls = _morrey_value(f, q, r, centers, radii)
    if coarse is None:
        coarse = coarsen(f)
    elif coarse.grid.N * 2 != grid.N or coarse.grid.L != grid.L or coarse.grid.n != grid.n:
        raise ConfigurationError("coarse field must live on the N/2 grid of the same cube", key='coarse')
    coarse_value, _ = _morrey_value(coarse, q, r, centers, radii)
    if coarse_value == 0.0:
        refinement = 1.0 if value == 0.0 else INF
    else:
        refinement = value / coarse_value
    return MorreyResult(value, coarse_value, refinement, balls)


# ----------------------------------------------------------------------------
# Hölder
# ----------------------------------------------------------------------------

@dataclass
class RatioReport:
    lhs: float
    rhs: float
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        if self.rhs == 0.0:
            return 0.0 if self.lhs == 0.0 else INF
        return self.lhs / self.rhs

    def to_record(self) -> Dict[str, Any]:
        return {'lhs': self.lhs, 'rhs': self.rhs, 'ratio': self.ratio, **self.details}


def _product(f: Field, g: Field) -> Field:
    require_same_grid(f, g)
    for h in (f, g):
        require_physical(h)
    if f.is_vector or g.is_vector:
        raise ConfigurationError("Hölder checks take scalar fields", key='field')
    return Field(f.grid, f.values * g.values)


def holder_check(f: Field, g: Field, first: HerzParams, second: HerzParams,
                 target: Optional[HerzParams] = None) -> RatioReport:
    """
    ||fg||_{WK^alpha_{p,q}} against ||f||_{WK^{alpha1}_{p1,q1}} ||g||_{WK^{alpha2}_{p2,q2}}.

    The target exponents default to alpha = alpha1 + alpha2, 1/p = 1/p1 + 1/p2,
    1/q = 1/q1 + 1/q2; an explicit target must satisfy the same relations.
    """
    inv_p = reciprocal(first.p) + reciprocal(second.p)
    inv_q = reciprocal(first.q) + reciprocal(second.q)
    alpha = first.alpha + second.alpha
    if target is None:
        target = HerzParams(alpha, 1.0 / inv_p, INF if inv_q == 0 else 1.0 / inv_q)
    else:
        if not math.isclose(reciprocal(target.p), inv_p, abs_tol=1e-12):
            raise ExponentError("1/p != 1/p1 + 1/p2", condition='1/p = 1/p1 + 1/p2')
        if not math.isclose(reciprocal(target.q), inv_q, abs_tol=1e-12):
            raise ExponentError("1/q != 1/q1 + 1/q2", condition='1/q = 1/q1 + 1/q2')
        if not math.isclose(target.alpha, alpha, abs_tol=1e-12):
            raise ExponentError("alpha != alpha1 + alpha2", condition='alpha = alpha1 + alpha2')
    lhs = weak_herz_norm(_product(f, g), target).aggregate
    rhs = weak_herz_norm(f, first).aggregate * weak_herz_norm(g, second).aggregate
    return RatioReport(lhs, rhs, {'target': target.to_dict(), 'first': first.to_dict(),
                                  'second': second.to_dict()})


def holder_linf_check(f: Field, g: Field, hp: HerzParams) -> RatioReport:
    """||fg||_{WK} against ||f||_inf ||g||_{WK}; the ratio never exceeds 1."""
    lhs = weak_herz_norm(_product(f, g), hp).aggregate
    rhs = f.sup_norm() * weak_herz_norm(g, hp).aggregate
    return RatioReport(lhs, rhs, {'params': hp.to_dict()})
