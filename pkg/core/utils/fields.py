"""
Discrete fields on the periodic cube [-L, L)^n and the Fourier-multiplier
operators acting on them.

Sample i along an axis sits at x_i = -L + i*h, so the origin is the sample with
index N/2 on every axis. Spectral arrays use the unshifted scipy.fft layout.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Callable, Dict, Sequence, Tuple

import numpy as np
from scipy import fft as spfft
from django.conf import settings

from core.exceptions import ConfigurationError, FieldError, GridMismatchError

logger = logging.getLogger(__name__)

# slack when turning the range inequalities into integer bounds
_RANGE_SLACK = 1e-9


def fft_workers() -> int:
    return int(getattr(settings, 'BHK_THREADS', 1))


def parallel_map(func: Callable, items: Sequence) -> list:
    """Runs func over items in joblib threads (BHK_THREADS); order is preserved."""
    workers = fft_workers()
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=workers, prefer='threads')(delayed(func)(item) for item in items)


def smooth_step(s) -> np.ndarray:
    """C-infinity step: 1 for s <= 0, 0 for s >= 1, built from e^{-1/t}."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    with np.errstate(divide='ignore', over='ignore'):
        up = np.where(s < 1.0, np.exp(-1.0 / np.where(s < 1.0, 1.0 - s, 1.0)), 0.0)
        down = np.where(s > 0.0, np.exp(-1.0 / np.where(s > 0.0, s, 1.0)), 0.0)
    return up / (up + down)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with N samples per axis on [-L, L)^n."""
    n: int
    N: int
    L: float

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N ** self.n

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    @property
    def nyquist(self) -> float:
        return math.pi / self.h

    @cached_property
    def axis(self) -> np.ndarray:
        return _frozen(-self.L + self.h * np.arange(self.N))

    @cached_property
    def coords(self) -> Tuple[np.ndarray, ...]:
        return tuple(_frozen(c) for c in np.meshgrid(*([self.axis] * self.n), indexing='ij'))

    @cached_property
    def radius(self) -> np.ndarray:
        return _frozen(np.sqrt(sum(c ** 2 for c in self.coords)))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return _frozen(2.0 * np.pi * spfft.fftfreq(self.N, d=self.h))

    @cached_property
    def xi(self) -> Tuple[np.ndarray, ...]:
        return tuple(_frozen(k) for k in np.meshgrid(*([self.wavenumbers] * self.n), indexing='ij'))

    @cached_property
    def xi_norm(self) -> np.ndarray:
        return _frozen(np.sqrt(sum(k ** 2 for k in self.xi)))

    @cached_property
    def nyquist_planes(self) -> np.ndarray:
        """True on lattice points with at least one coordinate at the Nyquist index."""
        idx = np.meshgrid(*([np.arange(self.N)] * self.n), indexing='ij')
        return _frozen(np.any([i == self.N // 2 for i in idx], axis=0))

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keep integer frequencies |m| < N/3 on every axis."""
        m = np.abs(spfft.fftfreq(self.N) * self.N)
        keep = m < self.N / 3.0
        grids = np.meshgrid(*([keep] * self.n), indexing='ij')
        return _frozen(np.all(grids, axis=0))

    @cached_property
    def k_range(self) -> Tuple[int, int]:
        # 2^{k-1} >= 4h and 2^k <= L/2
        k_min = math.ceil(math.log2(4.0 * self.h) + 1.0 - _RANGE_SLACK)
        k_max = math.floor(math.log2(self.L / 2.0) + _RANGE_SLACK)
        return k_min, k_max

    @cached_property
    def j_range(self) -> Tuple[int, int]:
        # (3/4)2^j >= pi/L and (8/3)2^j <= pi/h
        j_min = math.ceil(math.log2(4.0 * math.pi / (3.0 * self.L)) - _RANGE_SLACK)
        j_max = math.floor(math.log2(3.0 * self.nyquist / 8.0) + _RANGE_SLACK)
        return j_min, j_max

    def describe(self) -> Dict[str, Any]:
        return {
            'n': self.n,
            'N': self.N,
            'L': self.L,
            'h': self.h,
            'k_range': list(self.k_range),
            'j_range': list(self.j_range),
        }


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def make_grid(n: int, N: int, L: float) -> Grid:
    """
    Validates (n, N, L) and returns the grid.

    Raises ConfigurationError naming the violated condition when N is not a
    power of two >= 32, n is not 2 or 3, L <= 0, or either resolvable range is
    empty.
    """
    if n not in (2, 3):
        raise ConfigurationError(f"dimension must be 2 or 3, got {n}", key='n')
    if int(N) != N or N < 32 or (int(N) & (int(N) - 1)) != 0:
        raise ConfigurationError(f"N must be a power of two >= 32, got {N}", key='N')
    if not L > 0:
        raise ConfigurationError(f"L must be positive, got {L}", key='L')
    grid = Grid(int(n), int(N), float(L))
    k_min, k_max = grid.k_range
    if k_min > k_max:
        raise ConfigurationError(
            f"no resolvable annulus: need 2^(k-1) >= 4h={4 * grid.h:g} and 2^k <= L/2={L / 2:g}", key='N')
    j_min, j_max = grid.j_range
    if j_min > j_max:
        raise ConfigurationError(
            f"no resolvable block: need (3/4)2^j >= pi/L={math.pi / L:g} and (8/3)2^j <= pi/h={grid.nyquist:g}",
            key='N')
    logger.debug("grid %s", grid.describe())
    return grid


class Representation(Enum):
    PHYSICAL = 0
    SPECTRAL = 1


@dataclass(frozen=True, eq=False)
class Field:
    """
    Scalar (1 component) or vector (n components) samples on a Grid.

    values has shape (components, N, ..., N); physical values are real,
    spectral values complex. The array is read-only after construction.
    """
    grid: Grid
    values: np.ndarray
    representation: Representation = Representation.PHYSICAL
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        spectral = self.representation is Representation.SPECTRAL
        values = np.asarray(self.values)
        if not spectral and np.iscomplexobj(values):
            raise FieldError("physical field values must be real")
        values = np.array(values, dtype=complex if spectral else float)
        if values.shape == self.grid.shape:
            values = values[np.newaxis]
        if values.shape[1:] != self.grid.shape or values.shape[0] not in (1, self.grid.n):
            raise FieldError(
                f"values of shape {values.shape} do not fit grid {self.grid.shape} with 1 or {self.grid.n} components")
        if not np.isfinite(values).all():
            raise FieldError("field contains non-finite samples")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def components(self) -> int:
        return self.values.shape[0]

    @property
    def is_vector(self) -> bool:
        return self.components > 1

    @property
    def is_physical(self) -> bool:
        return self.representation is Representation.PHYSICAL

    @classmethod
    def zeros(cls, grid: Grid, components: int = 1) -> 'Field':
        return cls(grid, np.zeros((components,) + grid.shape))

    def component(self, i: int) -> 'Field':
        return Field(self.grid, self.values[i], self.representation)

    def with_values(self, values: np.ndarray, **meta) -> 'Field':
        return Field(self.grid, values, self.representation, {**self.meta, **meta})

    def magnitude(self) -> np.ndarray:
        """Pointwise |f| (Euclidean over components for vector fields)."""
        if self.components == 1:
            return np.abs(self.values[0])
        return np.sqrt(np.sum(np.abs(self.values) ** 2, axis=0))

    def sup_norm(self) -> float:
        return float(self.magnitude().max())

    def l2_norm(self) -> float:
        require_physical(self)
        return float(np.sqrt(self.grid.cell_volume * np.sum(self.values ** 2)))

    def _check_operand(self, other: 'Field'):
        if other.grid != self.grid:
            raise GridMismatchError(f"grid mismatch: {self.grid} vs {other.grid}")
        if other.representation is not self.representation:
            raise FieldError("representation mismatch")
        if other.components != self.components:
            raise FieldError(f"component mismatch: {self.components} vs {other.components}")

    def __add__(self, other: 'Field') -> 'Field':
        self._check_operand(other)
        return Field(self.grid, self.values + other.values, self.representation)

    def __sub__(self, other: 'Field') -> 'Field':
        self._check_operand(other)
        return Field(self.grid, self.values - other.values, self.representation)

    def __neg__(self) -> 'Field':
        return Field(self.grid, -self.values, self.representation)

    def __mul__(self, c: float) -> 'Field':
        return Field(self.grid, c * self.values, self.representation)

    __rmul__ = __mul__

    def __truediv__(self, c: float) -> 'Field':
        return Field(self.grid, self.values / c, self.representation)


def require_physical(f: Field):
    if not f.is_physical:
        raise FieldError("operation needs a physical-representation field")


def require_same_grid(*fields: Field):
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"grid mismatch: {grid} vs {f.grid}")


def _axes(grid: Grid) -> Tuple[int, ...]:
    return tuple(range(-grid.n, 0))


def mirror(a: np.ndarray, n: int) -> np.ndarray:
    """a(-xi) on the lattice: index i -> -i mod N over the last n axes."""
    for ax in range(a.ndim - n, a.ndim):
        a = np.roll(np.flip(a, axis=ax), 1, axis=ax)
    return a


def fft(values: np.ndarray, grid: Grid) -> np.ndarray:
    return spfft.fftn(values, axes=_axes(grid), workers=fft_workers())


def ifft(values: np.ndarray, grid: Grid) -> np.ndarray:
    return spfft.ifftn(values, axes=_axes(grid), workers=fft_workers())


def to_spectral(f: Field) -> Field:
    """Forward DFT; the result is Hermitian-symmetrized so it is exactly the transform of real data."""
    if f.representation is not Representation.PHYSICAL:
        raise FieldError("to_spectral expects a physical field")
    spec = fft(f.values, f.grid)
    spec = 0.5 * (spec + np.conj(mirror(spec, f.grid.n)))
    return Field(f.grid, spec, Representation.SPECTRAL, dict(f.meta))


def to_physical(f: Field) -> Field:
    if f.representation is not Representation.SPECTRAL:
        raise FieldError("to_physical expects a spectral field")
    return Field(f.grid, ifft(f.values, f.grid).real, Representation.PHYSICAL, dict(f.meta))


def spectrum(f: Field) -> np.ndarray:
    return f.values if f.representation is Representation.SPECTRAL else fft(f.values, f.grid)


# ----------------------------------------------------------------------------
# Multipliers
# ----------------------------------------------------------------------------

SymbolFunc = Callable[[Tuple[np.ndarray, ...], np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MultiplierSymbol:
    """
    A lattice-pointwise Fourier multiplier P(xi).

    `func(xi, r)` receives the frequency components and |xi| with the zero
    frequency replaced by 1; the value at xi = 0 is always `zero_value`.
    Evaluated symbols are Hermitian-symmetrized so real fields stay real.
    """
    func: SymbolFunc
    order: float = 0.0
    zero_value: complex = 0.0
    name: str = 'symbol'

    def evaluate(self, grid: Grid) -> np.ndarray:
        r = np.where(grid.xi_norm > 0, grid.xi_norm, 1.0)
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            vals = np.broadcast_to(np.asarray(self.func(grid.xi, r), dtype=complex), grid.shape).copy()
        vals[(0,) * grid.n] = self.zero_value
        vals = 0.5 * (vals + np.conj(mirror(vals, grid.n)))
        if not np.isfinite(vals).all():
            raise FieldError(f"symbol {self.name} is not finite on the lattice")
        return vals


def constant_symbol(c: float = 1.0) -> MultiplierSymbol:
    return MultiplierSymbol(lambda xi, r: np.full(r.shape, c), order=0.0, zero_value=c, name=f'const({c})')


def heat_symbol(t: float) -> MultiplierSymbol:
    return MultiplierSymbol(lambda xi, r: np.exp(-t * r ** 2), order=0.0, zero_value=1.0, name=f'heat({t})')


def riesz_symbol(i: int) -> MultiplierSymbol:
    return MultiplierSymbol(lambda xi, r: 1j * xi[i] / r, order=0.0, zero_value=0.0, name=f'riesz({i})')


def power_symbol(s: float) -> MultiplierSymbol:
    return MultiplierSymbol(lambda xi, r: r ** s, order=s, zero_value=0.0, name=f'|xi|^{s}')


def derivative_symbol(i: int) -> MultiplierSymbol:
    return MultiplierSymbol(lambda xi, r: 1j * xi[i], order=1.0, zero_value=0.0, name=f'd/dx{i}')


def product_symbol(i: int, j: int) -> MultiplierSymbol:
    """xi_i xi_j / |xi|^2, the order-0 symbol of -R_i R_j."""
    return MultiplierSymbol(lambda xi, r: xi[i] * xi[j] / r ** 2, order=0.0, zero_value=0.0,
                            name=f'xi{i}xi{j}/|xi|^2')


def apply_spectral_weights(f: Field, weights: np.ndarray) -> Field:
    """Multiplies the spectrum by lattice weights; keeps f's representation."""
    out = spectrum(f) * weights
    if f.representation is Representation.SPECTRAL:
        return Field(f.grid, out, Representation.SPECTRAL)
    return Field(f.grid, ifft(out, f.grid).real)


def apply_multiplier(f: Field, P: MultiplierSymbol) -> Field:
    return apply_spectral_weights(f, P.evaluate(f.grid))


def heat(f: Field, t: float) -> Field:
    """G(t)f = (exp(-t|xi|^2) f^)^v."""
    if t < 0:
        raise ConfigurationError(f"heat time must be >= 0, got {t}", key='t')
    return apply_multiplier(f, heat_symbol(t))


def riesz_transform(f: Field, i: int) -> Field:
    if f.is_vector:
        raise FieldError("riesz_transform expects a scalar field")
    if not 0 <= i < f.grid.n:
        raise ConfigurationError(f"axis {i} out of range for n={f.grid.n}", key='axis')
    return apply_multiplier(f, riesz_symbol(i))


def gradient(f: Field) -> Field:
    if f.is_vector:
        raise FieldError("gradient expects a scalar field")
    spec = spectrum(f)[0]
    comps = [spec * derivative_symbol(i).evaluate(f.grid) for i in range(f.grid.n)]
    return _from_spectrum(f, np.stack(comps))


def divergence(u: Field) -> Field:
    if u.components != u.grid.n:
        raise FieldError(f"divergence expects {u.grid.n} components, got {u.components}")
    spec = spectrum(u)
    total = sum(spec[i] * derivative_symbol(i).evaluate(u.grid) for i in range(u.grid.n))
    return _from_spectrum(u, total[np.newaxis])


def spectral_divergence_defect(u: Field) -> float:
    """max |xi . u^(xi)| / max |u^|, evaluated with the raw lattice frequencies."""
    spec = spectrum(u)
    dot = sum(u.grid.xi[i] * spec[i] for i in range(u.grid.n))
    scale = np.abs(spec).max()
    return float(np.abs(dot).max() / scale) if scale > 0 else 0.0


def leray_spectral(spec: np.ndarray, grid: Grid) -> np.ndarray:
    """
    delta_ij - xi_i xi_j / |xi|^2 applied to a vector spectrum.

    Nyquist planes are dropped: the off-diagonal symbol is not Hermitian
    there, so no real field carries that content divergence-free.
    """
    r2 = np.where(grid.xi_norm > 0, grid.xi_norm ** 2, 1.0)
    dot = sum(grid.xi[i] * spec[i] for i in range(grid.n)) / r2
    out = np.stack([spec[i] - grid.xi[i] * dot for i in range(grid.n)])
    out[:, grid.nyquist_planes] = 0.0
    return out


def leray_project(u: Field) -> Field:
    if u.components != u.grid.n:
        raise FieldError(f"leray_project expects {u.grid.n} components, got {u.components}")
    return _from_spectrum(u, leray_spectral(spectrum(u), u.grid))


def _from_spectrum(like: Field, spec: np.ndarray) -> Field:
    if like.representation is Representation.SPECTRAL:
        return Field(like.grid, spec, Representation.SPECTRAL)
    return Field(like.grid, ifft(spec, like.grid).real)


def dealias(spec: np.ndarray, grid: Grid) -> np.ndarray:
    return spec * grid.dealias_mask


def dealiased_product(f: Field, g: Field) -> Field:
    """2/3-rule product: both factors and the result are truncated to |m| < N/3."""
    require_same_grid(f, g)
    if f.is_vector or g.is_vector:
        raise FieldError("dealiased_product expects scalar fields")
    grid = f.grid
    a = ifft(dealias(spectrum(f), grid), grid).real
    b = ifft(dealias(spectrum(g), grid), grid).real
    out = dealias(fft(a * b, grid), grid)
    return _from_spectrum(f if f.representation is g.representation else Field.zeros(grid), out)


# ----------------------------------------------------------------------------
# Convolution and rescaling
# ----------------------------------------------------------------------------

def convolve(theta: Field, f: Field) -> Field:
    """Periodic convolution with Riemann-sum weight h^n; theta's origin is the sample at N/2."""
    require_same_grid(theta, f)
    for g in (theta, f):
        require_physical(g)
        if g.is_vector:
            raise FieldError("convolve expects scalar fields")
    axes = _axes(f.grid)
    kernel = fft(spfft.ifftshift(theta.values, axes=axes), f.grid)
    out = ifft(kernel * fft(f.values, f.grid), f.grid).real * f.grid.cell_volume
    return Field(f.grid, out)


def interpolation_matrix(grid: Grid, targets: np.ndarray) -> np.ndarray:
    """
    Rows evaluate the 1-D trigonometric interpolant of axis samples at `targets`.

    The Nyquist mode enters as a cosine so the interpolant of real samples is
    real. Targets outside [-L, L) get zero rows (the field is taken as zero
    outside the cube).
    """
    N = grid.N
    k = grid.wavenumbers
    regular = np.arange(N) != N // 2
    out = (np.exp(1j * np.outer(targets, k[regular])) @ np.exp(-1j * np.outer(k[regular], grid.axis))).real
    out += np.cos(np.subtract.outer(targets, grid.axis) * grid.nyquist)
    out /= N
    out[(targets < -grid.L) | (targets >= grid.L)] = 0.0
    return out


def _apply_along(matrix: np.ndarray, values: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(matrix, values, axes=([1], [axis])), 0, axis)


def rescale(f: Field, lam: float, decay_tol: float = 1e-8) -> Field:
    """
    lam * f(lam x) on the same grid, by separable trigonometric interpolation.

    For lam > 1 points mapped outside the cube read zero; if f is not small
    near the cube boundary the result carries `decay_warning` metadata.
    """
    require_physical(f)
    if not lam > 0:
        raise ConfigurationError(f"scale must be positive, got {lam}", key='lambda')
    grid = f.grid
    meta: Dict[str, Any] = {'rescale_lambda': lam, 'valid_radius': grid.L / max(lam, 1.0)}
    if lam > 1.0:
        edge = f.magnitude()[np.max(np.abs(np.stack(grid.coords)), axis=0) >= grid.L - 2 * grid.h]
        meta['decay_warning'] = bool(edge.size and edge.max() > decay_tol * max(f.sup_norm(), 1e-300))
        if meta['decay_warning']:
            logger.warning("rescale by %g reads beyond the cube where the field has not decayed", lam)
    if lam == 1.0:
        return Field(grid, f.values, meta={**f.meta, **meta})
    matrix = interpolation_matrix(grid, lam * grid.axis)
    values = f.values
    for axis in range(1, grid.n + 1):
        values = _apply_along(matrix, values, axis)
    return Field(grid, lam * values, meta={**f.meta, **meta})
