"""
Named test fields. Each preset is sampled at the grid's cell centres.

    preset_field('power', {'a': 1}, grid)
    preset_field('random_bandlimited', {'j': 2, 'seed': 7}, grid)
"""
from __future__ import annotations

import logging
import math
from typing import Any, Callable, Dict, Optional

import numpy as np
from django.conf import settings

from core.exceptions import PresetError
from core.utils.fields import Field, Grid, ifft, smooth_step

logger = logging.getLogger(__name__)

PRESETS: Dict[str, Callable[[Grid, Dict[str, Any]], Field]] = {}


def preset(name: str):
    def register(func):
        PRESETS[name] = func
        return func
    return register


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def rearrangement_radius(grid: Grid) -> float:
    """Radius of the ball with the volume of one cell."""
    return grid.h * unit_ball_volume(grid.n) ** (-1.0 / grid.n)


def preset_field(name: str, params: Optional[Dict[str, Any]], grid: Grid) -> Field:
    builder = PRESETS.get(name)
    if builder is None:
        raise PresetError(f"unknown preset '{name}' (known: {', '.join(sorted(PRESETS))})", key='preset')
    f = builder(grid, dict(params or {}))
    return f.with_values(f.values, preset=name, preset_params=_plain(params or {}))


def _plain(params: Dict[str, Any]) -> Dict[str, Any]:
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in params.items()}


def _singular_power(distance: np.ndarray, a: float, core: float) -> np.ndarray:
    """distance^{-a}, flattened to core^{-a} inside radius `core`."""
    with np.errstate(divide='ignore'):
        vals = np.where(distance < core, core ** (-a), np.power(np.maximum(distance, core), -a))
    return vals


@preset('power')
def _power(grid: Grid, params: Dict[str, Any]) -> Field:
    """|x|^{-a} with a flat core of `core` cells (default BHK_POWER_CORE_CELLS)."""
    a = float(params.get('a', 1.0))
    if a < 0:
        raise PresetError(f"power exponent must be >= 0, got {a}", key='a')
    cells = float(params.get('core', getattr(settings, 'BHK_POWER_CORE_CELLS', 8.0)))
    core = cells * grid.h if cells > 0 else rearrangement_radius(grid)
    return Field(grid, _singular_power(grid.radius, a, core))


@preset('gaussian')
def _gaussian(grid: Grid, params: Dict[str, Any]) -> Field:
    sigma = float(params.get('sigma', 1.0))
    if sigma <= 0:
        raise PresetError(f"sigma must be positive, got {sigma}", key='sigma')
    return Field(grid, np.exp(-grid.radius ** 2 / (2.0 * sigma ** 2)))


@preset('heat_kernel')
def _heat_kernel(grid: Grid, params: Dict[str, Any]) -> Field:
    t = float(params.get('t', 1.0))
    if t <= 0:
        raise PresetError(f"t must be positive, got {t}", key='t')
    n = grid.n
    return Field(grid, (4.0 * math.pi * t) ** (-n / 2.0) * np.exp(-grid.radius ** 2 / (4.0 * t)))


@preset('delta')
def _delta(grid: Grid, params: Dict[str, Any]) -> Field:
    vals = np.zeros(grid.shape)
    vals[(grid.N // 2,) * grid.n] = 1.0 / grid.cell_volume
    return Field(grid, vals)


@preset('annulus_indicator')
def _annulus_indicator(grid: Grid, params: Dict[str, Any]) -> Field:
    k = int(params.get('k', 0))
    k_min, k_max = grid.k_range
    if not k_min <= k <= k_max:
        raise PresetError(f"annulus {k} outside resolvable range [{k_min}, {k_max}]", key='k')
    r = grid.radius
    return Field(grid, ((r >= 2.0 ** (k - 1)) & (r < 2.0 ** k)).astype(float))


@preset('rotational')
def _rotational(grid: Grid, params: Dict[str, Any]) -> Field:
    """
    x^perp / |x|^2 (n=2) or (-x2, x1, 0)/|x|^2 (n=3), zero at the origin.

    Any radial factor keeps the field divergence-free, so the default taper
    (1 inside `inner`, 0 beyond `outer`) makes it periodic-compatible without
    breaking homogeneity inside `inner`. `core` > 0 multiplies by
    1 - exp(-|x|^2/core^2), the Oseen profile.
    """
    n = grid.n
    r = grid.radius
    r2 = np.where(r > 0, r ** 2, 1.0)
    x = grid.coords
    comps = [-x[1] / r2, x[0] / r2] + ([np.zeros(grid.shape)] if n == 3 else [])
    weight = np.where(r > 0, 1.0, 0.0)
    if params.get('taper', True):
        inner = float(params.get('inner', grid.L / 2.0))
        outer = float(params.get('outer', 7.0 * grid.L / 8.0))
        if not 0 < inner < outer:
            raise PresetError(f"taper needs 0 < inner < outer, got {inner}, {outer}", key='inner')
        weight = weight * smooth_step((r - inner) / (outer - inner))
    core = float(params.get('core', 0.0))
    if core > 0:
        weight = weight * -np.expm1(-r ** 2 / core ** 2)
    return Field(grid, np.stack([c * weight for c in comps]))


@preset('vortex_pair')
def _vortex_pair(grid: Grid, params: Dict[str, Any]) -> Field:
    """Perpendicular gradient of two Gaussian stream-function bumps of opposite sign."""
    sigma = float(params.get('sigma', 1.0))
    sep = float(params.get('separation', 2.0))
    strength = float(params.get('strength', 1.0))
    x = grid.coords
    dpsi = [np.zeros(grid.shape) for _ in range(grid.n)]
    for sign, shift in ((1.0, sep / 2.0), (-1.0, -sep / 2.0)):
        d0 = x[0] - shift
        bump = sign * strength * np.exp(-(d0 ** 2 + sum(c ** 2 for c in x[1:])) / (2.0 * sigma ** 2))
        offsets = [d0] + list(x[1:])
        for i in range(grid.n):
            dpsi[i] -= offsets[i] / sigma ** 2 * bump
    comps = [-dpsi[1], dpsi[0]] + ([np.zeros(grid.shape)] if grid.n == 3 else [])
    return Field(grid, np.stack(comps))


@preset('mode')
def _mode(grid: Grid, params: Dict[str, Any]) -> Field:
    """cos or sin of <xi0, x> for the lattice frequency xi0 = (pi/L) m."""
    m = np.asarray(params.get('m', [1] + [0] * (grid.n - 1)), dtype=float)
    if m.shape != (grid.n,):
        raise PresetError(f"mode index needs {grid.n} entries", key='m')
    if np.abs(m).max() >= grid.N / 2:
        raise PresetError("mode index at or beyond Nyquist", key='m')
    phase = sum(math.pi / grid.L * m[i] * grid.coords[i] for i in range(grid.n))
    kind = params.get('kind', 'cos')
    return Field(grid, np.cos(phase) if kind == 'cos' else np.sin(phase))


@preset('strictness_witness')
def _strictness_witness(grid: Grid, params: Dict[str, Any]) -> Field:
    """
    sum_k |x - x_k|^{-n/p} on B(x_k, 1/8), x_k = (3/2) 2^{k-1} e_1, k = 1..bumps.

    Each bump sits inside annulus A_k, so the per-annulus profile stays bounded
    while the global weak norm grows like bumps^{1/p}.
    """
    p = float(params.get('p', 2.0))
    radius = 0.125
    if grid.h > radius:
        raise PresetError(f"bump radius 1/8 is below the grid spacing {grid.h:g}", key='N')
    max_bumps = 0
    while 1.5 * 2.0 ** max_bumps + radius < grid.L:
        max_bumps += 1
    bumps = int(params.get('bumps', max_bumps))
    if not 1 <= bumps <= max_bumps:
        raise PresetError(f"bumps must be in [1, {max_bumps}] for L={grid.L:g}", key='bumps')
    a = grid.n / p
    core = rearrangement_radius(grid)
    vals = np.zeros(grid.shape)
    for k in range(1, bumps + 1):
        offsets = [grid.coords[0] - 1.5 * 2.0 ** (k - 1)] + list(grid.coords[1:])
        dist = np.sqrt(sum(c ** 2 for c in offsets))
        inside = dist < radius
        vals[inside] += _singular_power(dist[inside], a, core)
    return Field(grid, vals, meta={'bumps': bumps})


@preset('random_bandlimited')
def _random_bandlimited(grid: Grid, params: Dict[str, Any]) -> Field:
    """
    Random real field with spectrum in [(4/3)2^{j_low}, (3/2)2^j].

    Coefficients are drawn per integer lattice vector m (xi = (pi/L) m) in an
    order that depends on L and the band only, so refining N samples the same
    function. `pure=True` restricts the spectrum to the block-j pure band.
    """
    j_min, j_max = grid.j_range
    j = int(params.get('j', j_max))
    if not j_min <= j <= j_max:
        raise PresetError(f"block {j} outside resolvable range [{j_min}, {j_max}]", key='j')
    if params.get('pure', False):
        lo, hi = (4.0 / 3.0) * 2.0 ** j, 1.5 * 2.0 ** j
    else:
        j_low = int(params.get('j_low', j_min))
        if not j_min <= j_low <= j:
            raise PresetError(f"j_low must lie in [{j_min}, {j}]", key='j_low')
        lo, hi = (4.0 / 3.0) * 2.0 ** j_low, 1.5 * 2.0 ** j
    seed = int(params.get('seed', 0))
    amplitude = float(params.get('amplitude', 1.0))
    n = grid.n
    unit = math.pi / grid.L
    M = int(math.ceil(hi / unit))
    box = np.indices((2 * M + 1,) * n).reshape(n, -1).T - M
    radius = unit * np.sqrt((box ** 2).sum(axis=1))
    first = np.array([row[np.nonzero(row)[0][0]] if row.any() else 0 for row in box])
    keep = (radius >= lo) & (radius <= hi) & (first > 0)
    modes = box[keep]
    if len(modes) == 0:
        raise PresetError(f"no lattice modes in band [{lo:g}, {hi:g}]", key='j')
    rng = np.random.default_rng(seed)
    coeffs = (rng.standard_normal(len(modes)) + 1j * rng.standard_normal(len(modes))) / math.sqrt(len(modes))
    coeffs *= amplitude * grid.size * np.where(modes.sum(axis=1) % 2 == 0, 1.0, -1.0)
    spec = np.zeros(grid.shape, dtype=complex)
    idx = tuple((modes % grid.N).T)
    neg = tuple(((-modes) % grid.N).T)
    spec[idx] = coeffs
    spec[neg] = np.conj(coeffs)
    return Field(grid, ifft(spec[np.newaxis], grid).real, meta={'band': [lo, hi], 'modes': int(len(modes))})
