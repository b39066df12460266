"""
Dyadic frequency blocks, Bony paraproducts, Riesz potentials and the
Sobolev-/Besov-weak-Herz norms built on them.

The mother bump is phi(xi) = Theta(|xi|/2) - Theta(|xi|) with Theta the smooth
cutoff equal to 1 below 3/4 and 0 above 4/3, so supp phi = [3/4, 8/3],
phi = 1 on [4/3, 3/2], and the blocks phi_j = phi(2^-j .) telescope to 1 on
[(4/3) 2^j_min, (3/2) 2^j_max].
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, List, Tuple

import numpy as np

from core.exceptions import ConfigurationError, ExponentError, FieldError, IndexRangeError
from core.services.herz_norms import (
    INF, HerzParams, Profile, RatioReport, _num, herz_profile, lp_norm, weak_herz_norm,
)
from core.utils.fields import (
    Field, Grid, apply_multiplier, apply_spectral_weights, dealias, fft, ifft, parallel_map,
    power_symbol, require_physical, require_same_grid, smooth_step, spectrum,
)

logger = logging.getLogger(__name__)

INNER, OUTER = 0.75, 4.0 / 3.0


def cutoff(r) -> np.ndarray:
    """Theta: 1 for r <= 3/4, 0 for r >= 4/3, C-infinity in between."""
    return smooth_step((np.asarray(r, dtype=float) - INNER) / (OUTER - INNER))


def bump(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return cutoff(r / 2.0) - cutoff(r)


@dataclass(frozen=True, eq=False)
class LPFamily:
    grid: Grid
    j_min: int
    j_max: int
    symbols: Dict[int, np.ndarray]
    partition_defect: float

    @property
    def indices(self) -> List[int]:
        return list(range(self.j_min, self.j_max + 1))

    @property
    def band(self) -> Tuple[float, float]:
        """Frequencies where the resolved blocks sum to exactly one."""
        return (4.0 / 3.0) * 2.0 ** self.j_min, 1.5 * 2.0 ** self.j_max

    @staticmethod
    def pure_band(j: int) -> Tuple[float, float]:
        """Open band where phi_j = 1 and every other block vanishes."""
        return (4.0 / 3.0) * 2.0 ** j, 1.5 * 2.0 ** j

    @staticmethod
    def support(j: int) -> Tuple[float, float]:
        return 0.75 * 2.0 ** j, (8.0 / 3.0) * 2.0 ** j

    def symbol(self, j: int) -> np.ndarray:
        self.check(j)
        return self.symbols[j]

    def check(self, j: int):
        if not self.j_min <= j <= self.j_max:
            raise IndexRangeError(f"block {j} outside resolvable range [{self.j_min}, {self.j_max}]", key='j')

    def lowpass_weights(self, k: int) -> np.ndarray:
        """Sum of phi_j for j_min <= j <= k plus the zero mode; k below j_min keeps the zero mode only."""
        weights = np.zeros(self.grid.shape)
        for j in range(self.j_min, min(k, self.j_max) + 1):
            weights = weights + self.symbols[j]
        weights[(0,) * self.grid.n] = 1.0
        return weights

    def resolved_weights(self) -> np.ndarray:
        return self.lowpass_weights(self.j_max)


@lru_cache(maxsize=8)
def build_bump(grid: Grid) -> LPFamily:
    """Samples phi_j on the lattice for every resolvable j and measures the partition defect."""
    j_min, j_max = grid.j_range
    if j_min > j_max:
        raise ConfigurationError(f"no resolvable block for {grid}", key='N')
    r = grid.xi_norm
    symbols = {}
    for j in range(j_min, j_max + 1):
        phi = bump(r * 2.0 ** (-j))
        phi.setflags(write=False)
        symbols[j] = phi
    total = sum(symbols.values())
    lo, hi = (4.0 / 3.0) * 2.0 ** j_min, 1.5 * 2.0 ** j_max
    inside = (r >= lo) & (r <= hi)
    defect = float(np.abs(1.0 - total[inside]).max()) if inside.any() else 0.0
    logger.debug("LP family on %s: j in [%d, %d], partition defect %.2e", grid, j_min, j_max, defect)
    return LPFamily(grid, j_min, j_max, symbols, defect)


def lp_block(f: Field, j: int) -> Field:
    """Delta_j f = (phi_j f^)^v."""
    return apply_spectral_weights(f, build_bump(f.grid).symbol(j))


def lp_lowpass(f: Field, k: int) -> Field:
    """S_k f = zero mode + sum_{j_min <= j <= k} Delta_j f."""
    family = build_bump(f.grid)
    family.check(k)
    return apply_spectral_weights(f, family.lowpass_weights(k))


def zero_mode(f: Field) -> float:
    require_physical(f)
    return float(f.values.mean())


def unresolved_fraction(f: Field) -> float:
    """max |f^ outside zero mode and the resolved blocks| / max |f^|."""
    family = build_bump(f.grid)
    spec = spectrum(f)
    scale = np.abs(spec).max()
    if scale == 0:
        return 0.0
    return float(np.abs(spec * (1.0 - family.resolved_weights())).max() / scale)


def bony(f: Field, g: Field) -> Tuple[Field, Field, Field]:
    """
    fg = T_f g + T_g f + R(fg) for the 2/3-truncated product.

        T_f g = sum_j S_{j-2} f Delta_j g
        R(fg) = sum_j Delta_j f (Delta_{j-1} + Delta_j + Delta_{j+1}) g + mean(f) mean(g)

    Both inputs must be band-limited to the zero mode plus the resolved
    blocks, otherwise the three pieces cannot reconstruct the product.
    """
    require_same_grid(f, g)
    for h in (f, g):
        require_physical(h)
        if h.is_vector:
            raise FieldError("bony expects scalar fields")
    grid = f.grid
    family = build_bump(grid)
    spec_f = dealias(fft(f.values[0], grid), grid)
    spec_g = dealias(fft(g.values[0], grid), grid)
    resolved = family.resolved_weights()
    for name, spec in (('f', spec_f), ('g', spec_g)):
        scale = np.abs(spec).max()
        if scale > 0 and np.abs(spec * (1.0 - resolved)).max() > 1e-10 * scale:
            lo, hi = family.band
            raise FieldError(f"bony: {name} has content outside the resolved band [{lo:g}, {hi:g}]")

    js = family.indices
    blocks_f = {j: ifft(spec_f * family.symbols[j], grid).real for j in js}
    blocks_g = {j: ifft(spec_g * family.symbols[j], grid).real for j in js}
    mean_f, mean_g = spec_f[(0,) * grid.n].real / grid.size, spec_g[(0,) * grid.n].real / grid.size

    def lowpass(blocks, mean, k):
        out = np.full(grid.shape, mean)
        for j in range(family.j_min, k + 1):
            out = out + blocks[j]
        return out

    zeros = np.zeros(grid.shape)
    t_fg, t_gf = zeros.copy(), zeros.copy()
    remainder = np.full(grid.shape, mean_f * mean_g)
    for j in js:
        t_fg += lowpass(blocks_f, mean_f, j - 2) * blocks_g[j]
        t_gf += lowpass(blocks_g, mean_g, j - 2) * blocks_f[j]
        tilde = sum(blocks_g.get(i, zeros) for i in (j - 1, j, j + 1))
        remainder += blocks_f[j] * tilde

    def truncated(values):
        return Field(grid, ifft(dealias(fft(values, grid), grid), grid).real)

    return truncated(t_fg), truncated(t_gf), truncated(remainder)


def paraproduct_piece(g: Field, f: Field, k: int) -> Field:
    """S_{k-2} g * Delta_k f, both factors 2/3-truncated."""
    require_same_grid(f, g)
    family = build_bump(f.grid)
    family.check(k)
    grid = f.grid
    low = ifft(dealias(spectrum(g)[0], grid) * family.lowpass_weights(k - 2), grid).real
    high = ifft(dealias(spectrum(f)[0], grid) * family.symbols[k], grid).real
    return Field(grid, low * high)


def riesz_potential(f: Field, s: float) -> Field:
    """I^s f = (|xi|^s f^)^v with the zero frequency sent to 0."""
    return apply_multiplier(f, power_symbol(s))


# ----------------------------------------------------------------------------
# Norms
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class BesovParams:
    """(alpha, p, q) of the weak-Herz base space, regularity s and block summability r."""
    alpha: float
    p: float
    q: float = INF
    s: float = 0.0
    r: float = INF

    def __post_init__(self):
        HerzParams(self.alpha, self.p, self.q)
        if not self.r >= 1:
            raise ExponentError(f"r must be >= 1, got {self.r}", condition='r >= 1')

    @property
    def herz(self) -> HerzParams:
        return HerzParams(self.alpha, self.p, self.q)

    def check_window(self, n: int):
        self.herz.check_window(n)

    def replace(self, **changes) -> 'BesovParams':
        values = {'alpha': self.alpha, 'p': self.p, 'q': self.q, 's': self.s, 'r': self.r}
        values.update(changes)
        return BesovParams(**values)

    def to_dict(self) -> Dict[str, Any]:
        return {'alpha': self.alpha, 'p': _num(self.p), 'q': _num(self.q), 's': self.s, 'r': _num(self.r)}


class BlockProfile(Profile):
    def __init__(self, indices, values, exponent, space='bwk', params=None):
        super().__init__('j', list(indices), [float(v) for v in values], exponent, space, dict(params or {}))


def sobolev_wh_norm(f: Field, bp: BesovParams) -> float:
    """||I^s f||_{WK^alpha_{p,q}}; `bp.r` is ignored."""
    return weak_herz_norm(riesz_potential(f, bp.s), bp.herz).aggregate


def _block_profile(f: Field, bp: BesovParams, norm, space: str) -> BlockProfile:
    family = build_bump(f.grid)
    js = family.indices

    def entry(j):
        return 2.0 ** (j * bp.s) * norm(lp_block(f, j))

    profile = BlockProfile(js, parallel_map(entry, js), bp.r, space=space, params=bp.to_dict())
    if profile.aggregate > 0 and not profile.converged:
        logger.warning("%s block sum truncated with boundary entries at %.1f%% of the aggregate",
                       space, 100.0 * profile.tail_ratio)
    return profile


def besov_wh_norm(f: Field, bp: BesovParams) -> BlockProfile:
    """
    Returns:
        BlockProfile of 2^{js} ||Delta_j f||_{WK^alpha_{p,q}} over the resolvable
        blocks, aggregated in l^r.
    """
    require_physical(f)
    herz = bp.herz
    return _block_profile(f, bp, lambda block: herz_profile(block, herz).aggregate, 'bwk')


def classical_besov_norm(f: Field, s: float, p: float, r: float = INF) -> BlockProfile:
    """Same blocks with the Riemann L^p norm in place of the weak-Herz norm."""
    require_physical(f)
    bp = BesovParams(0.0, p, INF, s, r)
    return _block_profile(f, bp, lambda block: lp_norm(block, p), 'besov')


# ----------------------------------------------------------------------------
# Embeddings
# ----------------------------------------------------------------------------

def embedding_target(n: int, bp: BesovParams, p1: float, p2: float) -> BesovParams:
    """
    Right-hand space of the general Sobolev-type embedding

        BWK^{alpha,s}_{p,q,r} <- BWK^{alpha + n(1/p - 1/p1), s + n(1/p2 - 1/p1)}_{p2,q,r}

    after checking 1 < p < inf, p <= p1 < inf, 1 < p2 <= p1 and
    -n/p < alpha < n(1 + 1/p1 - 1/p2 - 1/p).
    """
    p, alpha = bp.p, bp.alpha
    checks = [
        (1 < p < INF, '1 < p < inf'),
        (p <= p1 < INF, 'p <= p1 < inf'),
        (1 < p2 <= p1, '1 < p2 <= p1'),
        (-n / p < alpha < n * (1 + 1 / p1 - 1 / p2 - 1 / p), '-n/p < alpha < n(1 + 1/p1 - 1/p2 - 1/p)'),
    ]
    for ok, condition in checks:
        if not ok:
            raise ExponentError(f"embedding hypothesis fails: {condition}", condition=condition)
    return bp.replace(alpha=alpha + n * (1 / p - 1 / p1), s=bp.s + n * (1 / p2 - 1 / p1), p=p2)


def sobolev_embedding_check(f: Field, bp: BesovParams, p1: float, p2: float) -> RatioReport:
    target = embedding_target(f.grid.n, bp, p1, p2)
    lhs = besov_wh_norm(f, bp).aggregate
    rhs = besov_wh_norm(f, target).aggregate
    return RatioReport(lhs, rhs, {'source': bp.to_dict(), 'target': target.to_dict(), 'p1': p1, 'p2': p2})


def doubling_embedding_check(f: Field, bp: BesovParams) -> RatioReport:
    """
    ||f||_{BWK^{alpha,s}_{2p,q,r}} against ||f||_{BWK^{2 alpha, alpha + s + n/2p}_{p,q,r}}
    for n/2 < p < inf and 0 <= alpha < min(1 - n/2p, n/2p); `bp` carries (alpha, p, q, s, r).
    """
    n, p, alpha = f.grid.n, bp.p, bp.alpha
    if not n / 2.0 < p < INF:
        raise ExponentError(f"need n/2 < p < inf, got p={p}", condition='n/2 < p < inf')
    bound = min(1.0 - n / (2.0 * p), n / (2.0 * p))
    if not 0 <= alpha < bound:
        raise ExponentError(f"need 0 <= alpha < {bound:g}, got {alpha}", condition='0 <= alpha < min(1-n/2p, n/2p)')
    lhs_params = bp.replace(p=2.0 * p)
    rhs_params = bp.replace(alpha=2.0 * alpha, s=alpha + bp.s + n / (2.0 * p))
    lhs = besov_wh_norm(f, lhs_params).aggregate
    rhs = besov_wh_norm(f, rhs_params).aggregate
    return RatioReport(lhs, rhs, {'source': lhs_params.to_dict(), 'target': rhs_params.to_dict()})


def sandwich(f: Field, bp: BesovParams) -> Dict[str, float]:
    """Besov r=1, Sobolev and Besov r=inf norms at the same (alpha, s, p, q)."""
    return {
        'besov_r1': besov_wh_norm(f, bp.replace(r=1.0)).aggregate,
        'sobolev': sobolev_wh_norm(f, bp),
        'besov_rinf': besov_wh_norm(f, bp.replace(r=INF)).aggregate,
    }
