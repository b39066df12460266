"""
Mild solutions of the incompressible Navier-Stokes equations,

    u(t) = G(t) u0 + B(u, u)(t),   B(u, v)(t) = -int_0^t G(t - tau) P div(u (x) v)(tau) dtau,

constructed by Picard iteration on a geometric time grid and measured in the
X-norm

    ||u||_X = sup_t ||u(t)||_{BWK^{alpha,s}_{p,q,inf}} + sup_t t^w ||u(t)||_{WK^alpha_{2p,2q}},

with s = alpha + n/p - 1 and w = 1/2 - (alpha/2 + n/4p).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings
from scipy import special

from core.exceptions import AdmissibilityError, ConfigurationError, FieldError, TimeGridError
from core.services.herz_norms import INF, HerzParams, _num, herz_profile, lp_norm, parse_exponent
from core.services.littlewood_paley import BesovParams, besov_wh_norm, build_bump, lp_block
from core.utils.fields import (
    Field, Grid, dealias, fft, heat, ifft, leray_project, leray_spectral, parallel_map, require_physical,
    require_same_grid, rescale, spectral_divergence_defect, spectrum,
)

logger = logging.getLogger(__name__)

# divergence defect above which Picard data is projected first
DIVERGENCE_TOL = 1e-10

# Picard steps beyond BLOWUP_CAP * max(epsilon, 1) end the run before the iterates overflow
BLOWUP_CAP = 1e50


# ----------------------------------------------------------------------------
# Parameters
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class MildParams:
    n: int
    p: float
    q: float
    alpha: float

    @property
    def s(self) -> float:
        """Critical regularity alpha + n/p - 1."""
        return self.alpha + self.n / self.p - 1.0

    @property
    def w(self) -> float:
        """Time weight 1/2 - (alpha/2 + n/4p)."""
        return 0.5 - (self.alpha / 2.0 + self.n / (4.0 * self.p))

    @property
    def r(self) -> float:
        return INF

    @property
    def gamma(self) -> float:
        """alpha + n/2p, the pairing decay exponent."""
        return self.alpha + self.n / (2.0 * self.p)

    def besov(self) -> BesovParams:
        return BesovParams(self.alpha, self.p, self.q, self.s, INF)

    def doubled(self) -> HerzParams:
        return HerzParams(self.alpha, 2.0 * self.p, 2.0 * self.q)

    def to_dict(self) -> Dict[str, Any]:
        return {'n': self.n, 'p': self.p, 'q': _num(self.q), 'alpha': self.alpha, 's': self.s, 'w': self.w}


def admissible(n: int, p: float, q: float, alpha: float) -> MildParams:
    """
    Checks the well-posedness window n/2 < p < inf, 1 <= q <= inf,
    0 <= alpha < min(1 - n/2p, n/2p). Each failed hypothesis raises an
    AdmissibilityError with its own code.
    """
    q = parse_exponent(q, 'q')
    p = parse_exponent(p, 'p')
    if n not in (2, 3):
        raise AdmissibilityError(f"dimension must be 2 or 3, got {n}", code='dimension')
    if not p > n / 2.0:
        raise AdmissibilityError(f"p ≤ n/2 (p={p:g}, n/2={n / 2.0:g})", code='p_lower')
    if p == INF:
        raise AdmissibilityError("p must be finite", code='p_upper')
    if not q >= 1:
        raise AdmissibilityError(f"q must be >= 1, got {q}", code='q')
    if alpha < 0:
        raise AdmissibilityError(f"α < 0 (α={alpha:g})", code='alpha_lower')
    bound = min(1.0 - n / (2.0 * p), n / (2.0 * p))
    if not alpha < bound:
        raise AdmissibilityError(f"α ≥ min{{1−n/2p, n/2p}} = {bound:g}", code='alpha_upper')
    return MildParams(int(n), float(p), q, float(alpha))


def params_from_dict(data: Dict[str, Any]) -> MildParams:
    return admissible(int(data['n']), data['p'], data['q'], float(data['alpha']))


# ----------------------------------------------------------------------------
# Time grid and trajectories
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Increasing positive sample times; `rho` is set for geometric grids."""
    times: Tuple[float, ...]
    rho: Optional[float] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size == 0 or t[0] <= 0 or np.any(np.diff(t) <= 0):
            raise TimeGridError("times must be positive and strictly increasing", key='times')
        object.__setattr__(self, 'times', tuple(float(x) for x in t))

    @classmethod
    def geometric(cls, rho: Optional[float] = None, t_min: Optional[float] = None,
                  T: Optional[float] = None) -> 'TimeGrid':
        """
        t_i = t_min rho^i from t_min to T. rho is lowered to the value that
        lands exactly on T with M - 1 = ceil(log(T/t_min) / log rho) steps.
        """
        defaults = getattr(settings, 'BHK_TIME_GRID', {})
        rho = float(rho if rho is not None else defaults.get('rho', 2 ** 0.25))
        t_min = float(t_min if t_min is not None else defaults.get('t_min', 1e-3))
        T = float(T if T is not None else defaults.get('T', 4.0))
        if not 1.0 < rho <= 2.0:
            raise TimeGridError(f"rho must lie in (1, 2], got {rho}", key='rho')
        if not 0 < t_min < T:
            raise TimeGridError(f"need 0 < t_min < T, got {t_min}, {T}", key='t_min')
        steps = max(1, math.ceil(math.log(T / t_min) / math.log(rho) - 1e-9))
        rho = (T / t_min) ** (1.0 / steps)
        times = t_min * rho ** np.arange(steps + 1)
        times[-1] = T
        return cls(tuple(times), rho)

    @classmethod
    def from_times(cls, times: Sequence[float]) -> 'TimeGrid':
        return cls(tuple(times), None)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def t_min(self) -> float:
        return self.times[0]

    @property
    def T(self) -> float:
        return self.times[-1]

    def array(self) -> np.ndarray:
        return np.asarray(self.times)

    def find(self, t: float, rtol: float = 1e-9) -> Optional[int]:
        t_arr = self.array()
        i = int(np.argmin(np.abs(t_arr - t)))
        return i if abs(t_arr[i] - t) <= rtol * max(t, 1e-300) else None

    def index(self, t: float) -> int:
        i = self.find(t)
        if i is None:
            raise TimeGridError(f"t={t:g} is not a stored time in [{self.t_min:g}, {self.T:g}]", key='t')
        return i

    def to_dict(self) -> Dict[str, Any]:
        return {'times': list(self.times), 'rho': self.rho}


@dataclass(frozen=True, eq=False)
class Trajectory:
    time_grid: TimeGrid
    fields: Tuple[Field, ...]
    history: Tuple[float, ...] = ()
    status: str = 'linear'
    params: Optional[MildParams] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'fields', tuple(self.fields))
        object.__setattr__(self, 'history', tuple(float(h) for h in self.history))
        if len(self.fields) != len(self.time_grid):
            raise TimeGridError(f"{len(self.fields)} fields for {len(self.time_grid)} times", key='times')
        if self.fields:
            require_same_grid(*self.fields)

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    @property
    def times(self) -> Tuple[float, ...]:
        return self.time_grid.times

    def __len__(self) -> int:
        return len(self.fields)

    def at(self, t: float) -> Field:
        return self.fields[self.time_grid.index(t)]

    def with_fields(self, fields: Sequence[Field], **changes) -> 'Trajectory':
        values = {'time_grid': self.time_grid, 'fields': tuple(fields), 'history': self.history,
                  'status': self.status, 'params': self.params, 'meta': dict(self.meta)}
        values.update(changes)
        return Trajectory(**values)

    def __sub__(self, other: 'Trajectory') -> 'Trajectory':
        _same_times(self, other)
        return self.with_fields([a - b for a, b in zip(self.fields, other.fields)], history=(), status='difference')

    def __add__(self, other: 'Trajectory') -> 'Trajectory':
        _same_times(self, other)
        return self.with_fields([a + b for a, b in zip(self.fields, other.fields)], history=(), status='sum')

    def __mul__(self, c: float) -> 'Trajectory':
        return self.with_fields([c * f for f in self.fields], history=(), status='scaled')

    __rmul__ = __mul__

    def divergence_defect(self) -> float:
        return max(spectral_divergence_defect(f) for f in self.fields)

    def to_manifest(self) -> Dict[str, Any]:
        return {
            'grid': self.grid.describe(),
            'time_grid': self.time_grid.to_dict(),
            'history': list(self.history),
            'status': self.status,
            'params': self.params.to_dict() if self.params else None,
            'meta': self.meta,
        }

    @classmethod
    def from_manifest(cls, manifest: Dict[str, Any], fields: Sequence[Field]) -> 'Trajectory':
        tg = manifest['time_grid']
        params = manifest.get('params')
        return cls(TimeGrid(tuple(tg['times']), tg.get('rho')), tuple(fields),
                   tuple(manifest.get('history', ())), manifest.get('status', 'linear'),
                   params_from_dict(params) if params else None, dict(manifest.get('meta') or {}))


def _same_times(a: Trajectory, b: Trajectory):
    if not np.allclose(a.time_grid.array(), b.time_grid.array(), rtol=1e-12, atol=0):
        raise TimeGridError("trajectories live on different time grids", key='times')
    require_same_grid(a.fields[0], b.fields[0])


def zero_trajectory(grid: Grid, tg: TimeGrid, components: Optional[int] = None) -> Trajectory:
    zero = Field.zeros(grid, components or grid.n)
    return Trajectory(tg, tuple(zero for _ in tg.times), status='zero')


def linear_trajectory(u0: Field, tg: TimeGrid) -> Trajectory:
    """G(t_i) u0 at every stored time."""
    require_physical(u0)
    return Trajectory(tg, tuple(parallel_map(lambda t: heat(u0, t), list(tg.times))), status='linear')


def rescale_trajectory(uT: Trajectory, lam: float) -> Trajectory:
    """lam u(lam x, lam^2 t), stored at the times t_i / lam^2."""
    tg = TimeGrid(tuple(t / lam ** 2 for t in uT.times), uT.time_grid.rho)
    return Trajectory(tg, tuple(rescale(f, lam) for f in uT.fields), status='rescaled',
                      params=uT.params, meta={'rescale_lambda': lam})


# ----------------------------------------------------------------------------
# Duhamel term
# ----------------------------------------------------------------------------

def nonlinear_spectrum(u: Field, v: Field) -> np.ndarray:
    """Spectrum of P div(u (x) v), component i = P sum_j d_j (u_j v_i), 2/3-dealiased."""
    require_same_grid(u, v)
    grid = u.grid
    if u.components != grid.n or v.components != grid.n:
        raise FieldError(f"nonlinear term expects {grid.n}-component fields")
    ud = ifft(dealias(spectrum(u), grid), grid).real
    vd = ud if v is u else ifft(dealias(spectrum(v), grid), grid).real
    out = np.zeros((grid.n,) + grid.shape, dtype=complex)
    for i in range(grid.n):
        for j in range(grid.n):
            out[i] += 1j * grid.xi[j] * dealias(fft(ud[j] * vd[i], grid), grid)
    return leray_spectral(out, grid)


def nonlinear_term(u: Field, v: Field) -> Field:
    return Field(u.grid, ifft(nonlinear_spectrum(u, v), u.grid).real)


def _phi1(z: np.ndarray) -> np.ndarray:
    small = z < 1e-2
    zs = np.where(small, 1.0, z)
    series = 1.0 - z / 2.0 + z ** 2 / 6.0 - z ** 3 / 24.0 + z ** 4 / 120.0
    return np.where(small, series, -np.expm1(-zs) / zs)


def _psi(z: np.ndarray) -> np.ndarray:
    """(1 - (1 + z) e^{-z}) / z^2."""
    small = z < 1e-2
    zs = np.where(small, 1.0, z)
    series = 0.5 - z / 3.0 + z ** 2 / 8.0 - z ** 3 / 30.0 + z ** 4 / 144.0
    return np.where(small, series, (-np.expm1(-zs) - zs * np.exp(-zs)) / zs ** 2)


@dataclass(frozen=True)
class QuadratureConfig:
    """
    Product-integration settings for the Duhamel integral.

    `beta` fixes the exponent of the first-panel model |F(tau)| ~ tau^-beta;
    when None it is measured from the first two integrand samples and capped
    at 1 - alpha - n/2p (1/2 without params).
    """
    beta: Optional[float] = None

    def first_panel_exponent(self, forcing: Sequence[np.ndarray], times: Sequence[float],
                             mp: Optional[MildParams]) -> float:
        cap = 1.0 - mp.gamma if mp else 0.5
        if self.beta is not None:
            return float(min(max(self.beta, 0.0), cap))
        if len(forcing) < 2:
            return 0.0
        a, b = np.linalg.norm(forcing[0]), np.linalg.norm(forcing[1])
        if a == 0 or b == 0:
            return 0.0
        beta = -math.log(b / a) / math.log(times[1] / times[0])
        return float(min(max(beta, 0.0), cap))


def _first_panel(kappa: np.ndarray, t1: float, beta: float) -> np.ndarray:
    """int_0^t1 e^{-(t1 - tau) kappa} (tau/t1)^-beta dtau."""
    z = kappa * t1
    if beta == 0.0:
        return t1 * _phi1(z)
    return t1 * special.hyp1f1(1.0, 2.0 - beta, -z) / (1.0 - beta)


def _duhamel_sums(forcing: Sequence[np.ndarray], times: Sequence[float], grid: Grid, beta: float) -> List[np.ndarray]:
    """I_i = int_0^{t_i} G(t_i - tau) F(tau) dtau for every stored time, panel by panel."""
    kappa = grid.xi_norm ** 2
    sums = [forcing[0] * _first_panel(kappa, times[0], beta)]
    for k in range(len(times) - 1):
        delta = times[k + 1] - times[k]
        z = kappa * delta
        psi = _psi(z)
        panel = delta * (forcing[k] * psi + forcing[k + 1] * (_phi1(z) - psi))
        sums.append(np.exp(-z) * sums[-1] + panel)
    return sums


def duhamel_all(uT: Trajectory, vT: Trajectory, quad: Optional[QuadratureConfig] = None,
                mp: Optional[MildParams] = None) -> Trajectory:
    """B(u, v)(t_i) for every stored time."""
    _same_times(uT, vT)
    quad = quad or QuadratureConfig()
    grid = uT.grid
    pairs = list(zip(uT.fields, vT.fields))
    forcing = parallel_map(lambda uv: nonlinear_spectrum(*uv), pairs)
    beta = quad.first_panel_exponent(forcing, uT.times, mp)
    sums = _duhamel_sums(forcing, uT.times, grid, beta)
    fields = [Field(grid, -ifft(s, grid).real) for s in sums]
    return Trajectory(uT.time_grid, tuple(fields), status='duhamel', params=mp, meta={'first_panel_beta': beta})


def duhamel_bilinear(uT: Trajectory, vT: Trajectory, t: float, quad: Optional[QuadratureConfig] = None,
                     mp: Optional[MildParams] = None) -> Field:
    """
    B(u, v)(t) = -int_0^t G(t - tau) P div(u (x) v)(tau) dtau at a stored time t.

    Between stored times the integrand is linear in tau under the exact heat
    factor; on [0, t_1] it is modelled as F(t_1)(tau/t_1)^-beta and integrated
    in closed form.
    """
    _same_times(uT, vT)
    i = uT.time_grid.index(t)
    quad = quad or QuadratureConfig()
    grid = uT.grid
    forcing = parallel_map(lambda uv: nonlinear_spectrum(*uv), list(zip(uT.fields[:i + 1], vT.fields[:i + 1])))
    if i == 0 and len(uT) > 1:
        forcing_beta = forcing + [nonlinear_spectrum(uT.fields[1], vT.fields[1])]
    else:
        forcing_beta = forcing
    beta = quad.first_panel_exponent(forcing_beta, uT.times, mp)
    total = _duhamel_sums(forcing, uT.times[:i + 1], grid, beta)[-1]
    return Field(grid, -ifft(total, grid).real, meta={'first_panel_beta': beta})


# ----------------------------------------------------------------------------
# X-norm
# ----------------------------------------------------------------------------

@dataclass
class XNorm:
    part1: float
    part2: float
    curve1: List[float] = field(default_factory=list)
    curve2: List[float] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.part1 + self.part2

    def __iter__(self):
        return iter((self.total, self.part1, self.part2))

    def to_record(self) -> Dict[str, Any]:
        return {'total': self.total, 'part1': self.part1, 'part2': self.part2}


def critical_norm(f: Field, mp: MildParams) -> float:
    return besov_wh_norm(f, mp.besov()).aggregate


def _quiet_besov(f: Field, bp: BesovParams) -> float:
    herz = bp.herz
    family = build_bump(f.grid)
    values = [2.0 ** (j * bp.s) * herz_profile(lp_block(f, j), herz).aggregate for j in family.indices]
    return float(max(values)) if bp.r == INF else float(np.sum(np.asarray(values) ** bp.r) ** (1.0 / bp.r))


def x_norm(uT: Trajectory, mp: MildParams) -> XNorm:
    """
    part1 = max_t ||u(t)||_{BWK^{alpha,s}_{p,q,inf}},
    part2 = max_t t^w ||u(t)||_{WK^alpha_{2p,2q}}; vector fields use |u|.
    """
    if not len(uT):
        raise TimeGridError("empty trajectory", key='times')
    bp, doubled = mp.besov(), mp.doubled()

    def measure(item):
        t, f = item
        return _quiet_besov(f, bp), t ** mp.w * herz_profile(f, doubled).aggregate

    pieces = parallel_map(measure, list(zip(uT.times, uT.fields)))
    curve1 = [a for a, _ in pieces]
    curve2 = [b for _, b in pieces]
    return XNorm(max(curve1), max(curve2), curve1, curve2)


# ----------------------------------------------------------------------------
# Picard iteration
# ----------------------------------------------------------------------------

def _project_data(u0: Field) -> Field:
    require_physical(u0)
    if u0.components != u0.grid.n:
        raise FieldError(f"initial data needs {u0.grid.n} components, got {u0.components}")
    defect = spectral_divergence_defect(u0)
    if defect > DIVERGENCE_TOL:
        logger.warning("initial data has divergence defect %.2e; applying the Leray projection", defect)
        return leray_project(u0)
    return u0


def contraction_ratio(history: Sequence[float], floor: float) -> Optional[float]:
    """Largest ratio of successive history entries whose denominator clears the noise floor."""
    ratios = [b / a for a, b in zip(history[:-1], history[1:]) if a > floor]
    return float(max(ratios)) if ratios else None


def picard_solve(u0: Field, mp: MildParams, tg: TimeGrid, tol: float = 1e-8, max_iter: int = 12,
                 start: str = 'heat', quad: Optional[QuadratureConfig] = None) -> Trajectory:
    """
    u^(0) = G(t)u0 (or 0 with start='zero'), u^(m+1) = G(t)u0 + B(u^(m), u^(m)).

    Stops when the X-norm of the step falls below `tol`. Three consecutive
    increases of that norm, or a step above BLOWUP_CAP * max(epsilon, 1),
    end the run with status 'diverged'; the history is returned either way.

    Returns:
        Trajectory whose meta carries epsilon = ||G(.)u0||_X, the measured
        bilinear constant K_hat, 4 K_hat epsilon and the contraction ratio.
    """
    if start not in ('heat', 'zero'):
        raise ConfigurationError(f"start must be 'heat' or 'zero', got {start!r}", key='start')
    u0 = _project_data(u0)
    quad = quad or QuadratureConfig()
    linear = linear_trajectory(u0, tg)
    epsilon = x_norm(linear, mp).total
    current = linear if start == 'heat' else zero_trajectory(u0.grid, tg)
    history: List[float] = []
    k_hat: Optional[float] = None
    status, increases = 'max_iter', 0
    beta = None
    for m in range(1, max_iter + 1):
        b = duhamel_all(current, current, quad, mp)
        beta = b.meta['first_panel_beta']
        if m == 1 and start == 'heat' and epsilon > 0:
            k_hat = x_norm(b, mp).total / epsilon ** 2
        new = linear + b
        diff = x_norm(new - current, mp).total
        increases = increases + 1 if history and diff > history[-1] else 0
        history.append(diff)
        current = new
        logger.info("picard iteration %d: ||u(m) - u(m-1)||_X = %.3e", m, diff)
        if diff < tol:
            status = 'converged'
            break
        if not math.isfinite(diff) or diff > BLOWUP_CAP * max(epsilon, 1.0):
            status = 'diverged'
            logger.warning("picard step %.3e left the representable range at iteration %d", diff, m)
            break
        if increases >= 3:
            status = 'diverged'
            logger.warning("picard iteration diverged after %d iterations", m)
            break
    floor = max(tol, 1e-13 * max(epsilon, 1e-300))
    meta = {
        'epsilon': epsilon,
        'K_hat': k_hat,
        'bound_4Ke': 4.0 * k_hat * epsilon if k_hat is not None else None,
        'contraction_ratio': contraction_ratio(history, floor),
        'iterations': len(history),
        'start': start,
        'tol': tol,
        'first_panel_beta': beta,
    }
    return Trajectory(tg, current.fields, tuple(history), status, mp, meta)


def fixed_point_residual(uT: Trajectory, u0: Field, mp: MildParams, quad: Optional[QuadratureConfig] = None) -> float:
    """||u - G(t)u0 - B(u, u)||_X, re-evaluated from scratch."""
    linear = linear_trajectory(_project_data(u0), uT.time_grid)
    b = duhamel_all(uT, uT, quad, mp)
    return x_norm(uT - linear - b, mp).total


def linear_estimate_ratio(u0: Field, mp: MildParams, tg: TimeGrid) -> float:
    """||G(.)u0||_X / ||u0||_{BWK^{alpha,s}_{p,q,inf}}."""
    data = critical_norm(u0, mp)
    if data == 0:
        return 0.0
    return x_norm(linear_trajectory(u0, tg), mp).total / data


def beta_constants(mp: MildParams) -> Dict[str, float]:
    """Beta-function factors appearing in the two halves of the bilinear estimate."""
    g = mp.gamma
    return {
        'part1': float(special.beta(g, 1.0 - g)),
        'part2': float(special.beta(g, mp.w)),
    }


def bilinear_constant(uT: Trajectory, vT: Trajectory, mp: MildParams,
                      quad: Optional[QuadratureConfig] = None) -> Dict[str, Any]:
    """
    Returns:
        {'ratio': ||B(u,v)||_X / (||u||_X ||v||_X), 'part1_ratio', 'part2_ratio',
         'beta': closed-form Beta factors for comparison}
    """
    nu, nv = x_norm(uT, mp).total, x_norm(vT, mp).total
    xb = x_norm(duhamel_all(uT, vT, quad, mp), mp)
    denom = nu * nv
    if denom == 0:
        ratios = {'ratio': 0.0, 'part1_ratio': 0.0, 'part2_ratio': 0.0}
    else:
        ratios = {'ratio': xb.total / denom, 'part1_ratio': xb.part1 / denom, 'part2_ratio': xb.part2 / denom}
    return {**ratios, 'x_u': nu, 'x_v': nv, 'x_b': xb.total, 'beta': beta_constants(mp)}


def continuous_dependence(u0: Field, v0: Field, mp: MildParams, tg: TimeGrid, **solve_kwargs) -> Dict[str, Any]:
    """||u - v||_X / ||u0 - v0||_{BWK^{alpha,s}_{p,q,inf}} for the two Picard solutions."""
    uT = picard_solve(u0, mp, tg, **solve_kwargs)
    vT = picard_solve(v0, mp, tg, **solve_kwargs)
    data = critical_norm(u0 - v0, mp)
    diff = x_norm(uT - vT, mp).total
    return {'ratio': diff / data if data > 0 else 0.0, 'solution_diff': diff, 'data_diff': data,
            'status': [uT.status, vT.status]}


# ----------------------------------------------------------------------------
# Checks
# ----------------------------------------------------------------------------

def scale_offset(tg: TimeGrid, lam: float) -> int:
    """m with lam^2 t_i = t_{i+m}; lam must equal rho^{m/2}."""
    if not lam > 0:
        raise TimeGridError(f"scale must be positive, got {lam}", key='lambda')
    if tg.rho is None:
        raise TimeGridError("self-similarity needs a geometric time grid", key='rho')
    m_real = 2.0 * math.log(lam) / math.log(tg.rho)
    m = int(round(m_real))
    if abs(m_real - m) > 1e-6:
        raise TimeGridError(f"lambda={lam:g} is not rho^(m/2) for rho={tg.rho:g}", key='lambda')
    return m


def self_similar_check(uT: Trajectory, lam: float, region: Optional[Tuple[float, float]] = None) -> Dict[str, Any]:
    """
    max over matched times of ||u(t) - lam u(lam ., lam^2 t)||_2 / ||u(t)||_2 on
    the annulus where both the original and the rescaled field are resolved.
    """
    m = scale_offset(uT.time_grid, lam)
    grid = uT.grid
    big = max(lam, 1.0)
    r_lo, r_hi = region or (4.0 * grid.h * big, grid.L / (4.0 * big))
    if not 0 <= r_lo < r_hi:
        raise ConfigurationError(f"empty comparison region ({r_lo:g}, {r_hi:g})", key='region')
    mask = (grid.radius > r_lo) & (grid.radius < r_hi)
    errors = []
    for i in range(max(0, -m), min(len(uT), len(uT) - m)):
        u = uT.fields[i]
        scaled = rescale(uT.fields[i + m], lam)
        ref = lp_norm(u, 2.0, mask)
        err = lp_norm(u - Field(grid, scaled.values), 2.0, mask)
        errors.append({'t': uT.times[i], 'error': err / ref if ref > 0 else 0.0})
    if not errors:
        raise TimeGridError(f"no stored time pairs differ by lambda^2={lam ** 2:g}", key='lambda')
    return {'lambda': lam, 'offset': m, 'region': [r_lo, r_hi],
            'max_error': max(e['error'] for e in errors), 'per_time': errors}


def pair(g: Field, phi: Field) -> float:
    """Riemann pairing h^n sum g . phi."""
    require_same_grid(g, phi)
    require_physical(g)
    require_physical(phi)
    if g.components != phi.components:
        raise FieldError(f"component mismatch: {g.components} vs {phi.components}")
    return float(g.grid.cell_volume * np.sum(g.values * phi.values))


def decay_summary(times: Sequence[float], values: Sequence[float], floor: float = 0.0) -> Dict[str, Any]:
    """
    `decreasing_fraction` is the share of nonincreasing steps over the last
    decade of `times`; `final_ratio` is last value over first.

    Values below `floor` times the first one count as fully decayed (zero),
    so roundoff at the end of a fast decay does not register as growth.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if floor > 0:
        values = np.where(values < floor * values[0], 0.0, values)
    steps = np.diff(values[times >= times[-1] / 10.0])
    first = float(values[0])
    return {
        'times': [float(t) for t in times],
        'values': [float(v) for v in values],
        'final_ratio': float(values[-1] / first) if first > 0 else 0.0,
        'decreasing_fraction': float(np.mean(steps <= 0)) if steps.size else 1.0,
    }


def asymptotic_compare(uT: Trajectory, vT: Trajectory, mp: MildParams) -> Dict[str, Any]:
    """Critical-norm distance ||u(t) - v(t)|| at each stored time, summarized by decay_summary."""
    diff = uT - vT
    values = parallel_map(lambda f: critical_norm(f, mp), list(diff.fields))
    return decay_summary(uT.times, values)
