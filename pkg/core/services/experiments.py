"""
Experiment orchestration: INI configuration, the experiment registry and the
runner that turns one config into a Report.

    cfg = ExperimentConfig.from_file('configs/norms.ini')
    report, files = run_experiment(cfg, out='runs/norms')
"""
import configparser
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings

from core.exceptions import BHKError, ConfigurationError, ExperimentError, FitError
from core.ml.fit import fit_exponent
from core.services.ceilings import CeilingStore
from core.services.herz_norms import (
    INF, HerzParams, acceptance, global_weak_lp, holder_check, holder_linf_check, lp_norm, morrey_norm,
    parse_exponent, weak_herz_norm,
)
from core.services.littlewood_paley import (
    BesovParams, besov_wh_norm, build_bump, classical_besov_norm, doubling_embedding_check, lp_block,
    sandwich, sobolev_embedding_check, sobolev_wh_norm,
)
from core.services.mild_solver import (
    TimeGrid, admissible, asymptotic_compare, bilinear_constant, continuous_dependence, critical_norm,
    decay_summary, fixed_point_residual, linear_estimate_ratio, linear_trajectory, pair, picard_solve,
    rescale_trajectory, self_similar_check, x_norm,
)
from core.services.reference_solver import reference_solve
from core.utils.export import Report, write_report
from core.utils.field_io import read_field, save_trajectory
from core.utils.fields import (
    Field, Grid, MultiplierSymbol, apply_multiplier, convolve, heat, leray_project, make_grid,
    product_symbol, rescale,
)
from core.utils.presets import preset_field, unit_ball_volume

logger = logging.getLogger(__name__)

SECTIONS = ('experiment', 'grid', 'space', 'input', 'tolerances', 'ceilings', 'solver', 'output')

KNOWN_KEYS = {
    'experiment': {'name', 'seed', 'corpus', 'calibration_N'},
    'grid': {'n', 'N', 'L'},
    'space': {'alpha', 'p', 'q', 's', 'r', 'sigma', 'p1', 'p2',
              'alpha1', 'q1', 'alpha2', 'q2', 'holder_p1', 'holder_p2'},
    'solver': {'rho', 't_min', 'T', 'tol', 'max_iter', 'delta', 'delta_min', 'delta_max', 'bisection_steps',
               'reference_time', 'reference_steps', 'lambda', 'lambdas', 'region', 'perturbation', 't_window'},
    'output': {'dir'},
}

EXTRA_TOLERANCES = {
    'norm_anchor_tol': 0.03,
    'indicator_anchor_tol': 0.02,
    'multiplier_herz_bound': 10.0,
    'convolution_heat_tol': 1e-6,
    'self_similar_linear_tol': 1e-3,
    'reference_tol': 1e-3,
    'reference_nonlinear_tol': 0.05,
    'divergence_tol': 1e-10,
    'asymptotic_monotone': 0.8,
    'identity_tol': 1e-12,
}


# relative level below which the heat-evolved perturbation counts as gone
HEAT_FLOOR = 1e-10

# [input] keys read by the experiments themselves; the rest go to the preset
INPUT_RESERVED = {'preset', 'field', 'morrey_L', 'test_center', 'test_sigma'}


def rekeyed(exc: ConfigurationError, section: str) -> ConfigurationError:
    """Same error with its key prefixed by the config section."""
    message = str(exc)
    if exc.key and message.startswith(f'{exc.key}: '):
        message = message[len(exc.key) + 2:]
    return ConfigurationError(message, key=f'{section}.{exc.key}' if exc.key else section)


def parse_value(raw: str) -> Any:
    """INI scalar or comma list: ints, floats, 'inf', booleans, bare strings."""
    text = raw.strip()
    if ',' in text:
        return [parse_value(part) for part in text.split(',') if part.strip()]
    lowered = text.lower()
    if lowered in ('true', 'yes', 'on'):
        return True
    if lowered in ('false', 'no', 'off'):
        return False
    if lowered in ('inf', 'infinity'):
        return INF
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


@dataclass
class ExperimentConfig:
    """
    One experiment: name, seed and the INI sections as parsed dicts. Every
    tolerance and ceiling actually used is echoed in the report.
    """
    name: str
    seed: int = 0
    sections: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    source: Optional[str] = None

    @classmethod
    def from_file(cls, path) -> 'ExperimentConfig':
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file {path} does not exist", key='config')
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}", key='config')
        data = {section: {k: parse_value(v) for k, v in parser.items(section)} for section in parser.sections()}
        cfg = cls.from_dict(data)
        cfg.source = str(path)
        return cfg

    @classmethod
    def from_dict(cls, data: Dict[str, Dict[str, Any]]) -> 'ExperimentConfig':
        for section, values in data.items():
            if section not in SECTIONS:
                raise ConfigurationError(f"unknown section [{section}]", key=section)
            known = KNOWN_KEYS.get(section)
            if section == 'tolerances':
                known = set(getattr(settings, 'BHK_ACCEPTANCE', {})) | set(EXTRA_TOLERANCES)
            for key in values:
                if known is not None and key not in known:
                    raise ConfigurationError(f"unknown key", key=f'{section}.{key}')
        experiment = data.get('experiment', {})
        if 'name' not in experiment:
            raise ConfigurationError("missing experiment name", key='experiment.name')
        seed = experiment.get('seed', 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigurationError(f"seed must be a nonnegative integer, got {seed!r}", key='experiment.seed')
        sections = {s: dict(data.get(s, {})) for s in SECTIONS}
        return cls(str(experiment['name']), seed, sections)

    def value(self, section: str, key: str, default: Any = None, kind: Optional[Callable] = None) -> Any:
        defaults = EXPERIMENT_DEFAULTS.get(self.name, {}).get(section, {})
        raw = self.sections.get(section, {}).get(key, defaults.get(key, default))
        if raw is None or kind is None:
            return raw
        try:
            if kind is float:
                return parse_exponent(raw, f'{section}.{key}')
            return kind(raw)
        except (TypeError, ValueError):
            raise ConfigurationError(f"expected {kind.__name__}, got {raw!r}", key=f'{section}.{key}')

    def values(self, section: str, key: str, default: Sequence = ()) -> List[float]:
        raw = self.value(section, key, list(default))
        raw = raw if isinstance(raw, list) else [raw]
        try:
            return [parse_exponent(v, f'{section}.{key}') for v in raw]
        except (TypeError, ValueError):
            raise ConfigurationError(f"expected a comma list of numbers, got {raw!r}", key=f'{section}.{key}')

    @property
    def N(self) -> int:
        return self.value('grid', 'N', 256, int)

    @property
    def calibration_N(self) -> int:
        return self.value('experiment', 'calibration_N', max(self.N // 2, 32), int)

    @property
    def corpus(self) -> int:
        return self.value('experiment', 'corpus', 20, int)

    def grid(self, N: Optional[int] = None, L: Optional[float] = None) -> Grid:
        n = self.value('grid', 'n', 2, int)
        L = L if L is not None else self.value('grid', 'L', 16.0, float)
        try:
            return make_grid(n, N or self.N, L)
        except ConfigurationError as exc:
            raise rekeyed(exc, 'grid') from exc

    def tolerance(self, name: str) -> float:
        tolerances = self.sections.get('tolerances', {})
        if name in tolerances:
            return float(tolerances[name])
        if name in EXTRA_TOLERANCES:
            return EXTRA_TOLERANCES[name]
        return acceptance(name, math.nan)

    def besov(self, **defaults) -> BesovParams:
        get = lambda key, d: self.value('space', key, defaults.get(key, d), float)
        try:
            return BesovParams(get('alpha', 0.0), get('p', 2.0), get('q', INF), get('s', 0.0), get('r', INF))
        except ConfigurationError as exc:
            raise rekeyed(exc, 'space') from exc

    def time_grid(self) -> TimeGrid:
        return TimeGrid.geometric(self.value('solver', 'rho', None, float), self.value('solver', 't_min', None, float),
                                  self.value('solver', 'T', None, float))

    def preset_params(self) -> Dict[str, Any]:
        return {k: v for k, v in self.sections.get('input', {}).items() if k not in INPUT_RESERVED}

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, 'seed': self.seed, 'source': self.source,
                'sections': {s: v for s, v in self.sections.items() if v}}


# Per-experiment defaults, overridden by the config file.
EXPERIMENT_DEFAULTS: Dict[str, Dict[str, Dict[str, Any]]] = {
    'norms': {'input': {'preset': 'power'}},
    'embeddings': {'space': {'alpha': 0.2, 'p': 2.0}},
    'holder': {'experiment': {'corpus': 100}},
    'heat-decay': {'space': {'sigma': [1.0, 2.0]}, 'solver': {'t_window': [0.01, 1.0]}},
    'multiplier-bound': {'experiment': {'corpus': 50}},
    'convolution-bound': {'experiment': {'corpus': 50}, 'space': {'p1': 1.0}},
    'bilinear-k': {'grid': {'N': 128}, 'experiment': {'corpus': 30},
                   'solver': {'rho': 2 ** 0.5, 't_min': 1e-3, 'T': 1.0}},
    'solve': {'grid': {'N': 128}, 'input': {'preset': 'vortex_pair'},
              'solver': {'tol': 1e-8, 'max_iter': 12, 'delta_min': 1e-3, 'delta_max': 4.0,
                         'bisection_steps': 6, 'reference_time': 0.5, 'reference_steps': 400}},
    'self-similar': {'input': {'preset': 'rotational'},
                     'solver': {'t_min': 0.01, 'T': 0.16, 'lambda': 2 ** 0.5, 'delta': 0.1, 'region': [2.0, 3.0],
                                'tol': 1e-8, 'max_iter': 12}},
    'weakstar': {'grid': {'N': 128}, 'input': {'preset': 'vortex_pair'},
                 'solver': {'t_min': 1e-3, 'T': 0.1, 'delta': 0.1, 'tol': 1e-8, 'max_iter': 12}},
    'asymptotic': {'grid': {'N': 128}, 'input': {'preset': 'rotational'},
                   'solver': {'delta': 0.1, 'perturbation': 0.05, 'tol': 1e-8, 'max_iter': 12}},
    'criticality-sweep': {'input': {'preset': 'rotational'},
                          'solver': {'lambdas': [0.5, 2.0], 't_min': 0.01, 'T': 0.16}},
    'inclusions': {'grid': {'L': 8.0}, 'input': {'morrey_L': 16.0}},
}


@dataclass
class RunContext:
    store: CeilingStore
    calibrate: bool = False
    out: Optional[Path] = None


EXPERIMENTS: Dict[str, Callable[[ExperimentConfig, RunContext], Report]] = {}


def experiment(name: str):
    def register(func):
        EXPERIMENTS[name] = func
        return func
    return register


# ----------------------------------------------------------------------------
# Shared helpers
# ----------------------------------------------------------------------------

def new_report(cfg: ExperimentConfig, grid: Grid) -> Report:
    report = Report(cfg.name, cfg.seed, cfg.to_dict())
    report.results['grid'] = grid.describe()
    report.results['tolerances'] = {}
    report.results['ceilings'] = {}
    return report


def tolerance(report: Report, cfg: ExperimentConfig, name: str) -> float:
    value = cfg.tolerance(name)
    report.results['tolerances'][name] = value
    return value


def input_field(cfg: ExperimentConfig, grid: Grid, default_preset: str = 'gaussian',
                default_params: Optional[Dict[str, Any]] = None) -> Field:
    path = cfg.value('input', 'field')
    if path:
        return read_field(path)
    name = cfg.value('input', 'preset', default_preset)
    params = {**(default_params or {}), **cfg.preset_params()}
    return preset_field(name, params, grid)


def band(cfg: ExperimentConfig, reference: Grid) -> Dict[str, int]:
    """Spectral band for random corpora, valid on the coarsest grid in use."""
    j_min, j_max = reference.j_range
    return {'j': cfg.value('input', 'j', j_max, int), 'j_low': cfg.value('input', 'j_low', j_min, int)}


def random_corpus(cfg: ExperimentConfig, grid: Grid, count: int, reference: Optional[Grid] = None,
                  offset: int = 0, **params) -> List[Field]:
    spec = {**band(cfg, reference or grid), **params}
    return [preset_field('random_bandlimited', {**spec, 'seed': cfg.seed * 100003 + offset + i}, grid)
            for i in range(count)]


def solenoidal_corpus(cfg: ExperimentConfig, grid: Grid, count: int, reference: Optional[Grid] = None,
                      offset: int = 0, **params) -> List[Field]:
    fields = []
    for i in range(count):
        comps = random_corpus(cfg, grid, grid.n, reference, offset + 7919 * (i + 1), **params)
        fields.append(leray_project(Field(grid, np.stack([c.values[0] for c in comps]))))
    return fields


def coarsest(cfg: ExperimentConfig) -> Grid:
    return cfg.grid(min(cfg.N, cfg.calibration_N))


def ceiling_check(report: Report, ctx: RunContext, cfg: ExperimentConfig, name: str,
                  measure: Callable[[int], float]) -> float:
    """
    Measures the largest ratio at the run resolution and asserts it stays
    below the frozen ceiling; calibrates (N_cal, 2 N_cal) when asked or when
    no ceiling is stored.
    """
    cache: Dict[int, float] = {}

    def cached(N: int) -> float:
        if N not in cache:
            cache[N] = float(measure(N))
        return cache[N]

    resolved = ctx.store.resolve(name, cached, cfg.calibration_N, calibrate=ctx.calibrate)
    value = cached(cfg.N)
    report.results['ceilings'][name] = {'ceiling': resolved['ceiling'], 'source': resolved['source'],
                                        'measured': value, 'calibration': resolved['record']}
    record = resolved['record']
    if resolved['source'] in ('calibrated', 'inline') and record:
        report.check(f'{name} ceiling stability', record['drift'], record['stability'])
    report.check(name, value, resolved['ceiling'])
    return value


def max_ratio(ratios) -> float:
    values = [r for r in ratios if np.isfinite(r)]
    return float(max(values)) if values else 0.0


def log_times(lo: float, hi: float, count: int = 20) -> np.ndarray:
    return np.geomspace(lo, hi, count)


# ----------------------------------------------------------------------------
# Norm tables and inclusions
# ----------------------------------------------------------------------------

@experiment('norms')
def run_norms(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    bp = cfg.besov()
    hp = bp.herz
    name = cfg.value('input', 'preset', 'power')
    defaults = {'a': grid.n / hp.p} if name == 'power' else {}
    f = input_field(cfg, grid, 'power', defaults)
    report = new_report(cfg, grid)

    profile = weak_herz_norm(f, hp)
    weak = global_weak_lp(f, hp.p)
    strong = lp_norm(f, hp.p)
    report.results.update({'profile': profile.to_record(), 'global_weak_lp': weak, 'lp': strong})
    report.add_series('profile', profile.indices, profile.values)
    if cfg.value('space', 's') is not None:
        blocks = besov_wh_norm(f, bp)
        report.results['besov'] = blocks.to_record()
        report.results['sobolev'] = sobolev_wh_norm(f, bp)
        report.add_series('blocks', blocks.indices, blocks.values)

    chain = weak_herz_norm(f, HerzParams(0.0, hp.p, INF)).aggregate
    report.check('WK0 <= weak Lp', chain, weak * (1 + 1e-12))
    report.check('weak Lp <= Lp', weak, strong * (1 + 1e-12))

    params = {**defaults, **cfg.preset_params()}
    vol = unit_ball_volume(grid.n)
    if name == 'power' and math.isclose(float(params.get('a', 1.0)) * hp.p, grid.n):
        tol = tolerance(report, cfg, 'norm_anchor_tol')
        anchor = vol ** (1.0 / hp.p)
        report.check('global weak Lp vs V_n^(1/p)', abs(weak / anchor - 1.0), tol)
        shell = (vol * (1.0 - 2.0 ** -grid.n)) ** (1.0 / hp.p)
        worst = max(abs(v / (shell * 2.0 ** (k * hp.alpha)) - 1.0)
                    for k, v in zip(profile.indices, profile.values))
        report.check('annulus entries vs closed form', worst, tol)
    elif name == 'annulus_indicator':
        tol = tolerance(report, cfg, 'indicator_anchor_tol')
        k0 = int(params.get('k', 0))
        measure = vol * 2.0 ** (k0 * grid.n) * (1.0 - 2.0 ** -grid.n)
        expected = 2.0 ** (k0 * hp.alpha) * measure ** (1.0 / hp.p)
        report.check('indicator entry vs |A_k|^(1/p)', abs(profile.entry(k0) / expected - 1.0), tol)
    return report


@experiment('inclusions')
def run_inclusions(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    p = cfg.value('space', 'p', 2.0, float)
    report = new_report(cfg, grid)

    first = preset_field('strictness_witness', {'p': p, 'bumps': 1}, grid)
    most = preset_field('strictness_witness', {'p': p}, grid).meta['bumps']
    g1 = global_weak_lp(first, p)
    b1 = weak_herz_norm(first, HerzParams(0.0, p, INF)).aggregate
    growth, profile_max = [], []
    for m in range(1, most + 1):
        h = preset_field('strictness_witness', {'p': p, 'bumps': m}, grid)
        growth.append(global_weak_lp(h, p) / g1)
        profile_max.append(weak_herz_norm(h, HerzParams(0.0, p, INF)).aggregate / b1)
        report.check(f'witness growth m={m}', growth[-1], m ** (1.0 / p) / 2.0, '>=')
    report.add_series('witness_global', range(1, most + 1), growth)
    report.add_series('witness_profile', range(1, most + 1), profile_max)
    report.check('witness profile bounded', max(profile_max), 1.0 + 1e-9)

    morrey_L = float(cfg.value('input', 'morrey_L', 16.0, float))
    fine = cfg.grid(L=morrey_L)
    coarse = Grid(fine.n, fine.N // 2, fine.L)
    a = fine.n / p
    f = preset_field('power', {'a': a}, fine)
    f_coarse = preset_field('power', {'a': a}, coarse)
    floor = tolerance(report, cfg, 'morrey_growth_min')
    morrey = {}
    for label, q in (('log', p), ('power', 2.0 * p)):
        result = morrey_norm(f, q, q, coarse=f_coarse)
        morrey[label] = result.to_record()
        report.check(f'Morrey refinement q={q:g}', result.refinement, floor, '>=')
    report.results.update({'witness_bumps': most, 'morrey': morrey})
    return report


@experiment('holder')
def run_holder(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    report = new_report(cfg, grid)
    first = HerzParams(cfg.value('space', 'alpha1', 0.0, float), cfg.value('space', 'holder_p1', 4.0, float),
                       cfg.value('space', 'q1', INF, float))
    second = HerzParams(cfg.value('space', 'alpha2', 0.0, float), cfg.value('space', 'holder_p2', 4.0, float),
                        cfg.value('space', 'q2', INF, float))
    reference = coarsest(cfg)
    count = cfg.corpus

    def measure(N: int) -> float:
        g = cfg.grid(N)
        fs = random_corpus(cfg, g, count, reference)
        gs = random_corpus(cfg, g, count, reference, offset=50000)
        return max_ratio(holder_check(a, b, first, second).ratio for a, b in zip(fs, gs))

    ceiling_check(report, ctx, cfg, 'holder', measure)

    k0 = max(grid.k_range[0], 0)
    ind = preset_field('annulus_indicator', {'k': k0}, grid)
    exact = holder_check(ind, ind, HerzParams(0.0, first.p, first.q), HerzParams(0.0, second.p, second.q))
    report.check('indicator Hölder ratio = 1', abs(exact.ratio - 1.0), 1e-9)

    fs = random_corpus(cfg, grid, min(count, 20), reference, offset=90000)
    target = HerzParams(first.alpha + second.alpha, 1.0 / (1.0 / first.p + 1.0 / second.p))
    linf = max_ratio(holder_linf_check(a, b, target).ratio for a, b in zip(fs, fs[1:]))
    report.check('L-infinity factor ratio', linf, 1.0 + 1e-12)
    return report


@experiment('embeddings')
def run_embeddings(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    report = new_report(cfg, grid)
    bp = cfg.besov(alpha=0.2)
    bp.check_window(grid.n)
    reference = coarsest(cfg)
    count = cfg.corpus

    def corpus(N):
        return random_corpus(cfg, cfg.grid(N), count, reference)

    cache: Dict[int, list] = {}

    def rows_at(N):
        if N not in cache:
            cache[N] = [sandwich(f, bp) for f in corpus(N)]
        return cache[N]

    ceiling_check(report, ctx, cfg, 'sandwich sobolev/besov_r1',
                  lambda N: max_ratio(r['sobolev'] / r['besov_r1'] for r in rows_at(N) if r['besov_r1'] > 0))
    ceiling_check(report, ctx, cfg, 'sandwich besov_rinf/sobolev',
                  lambda N: max_ratio(r['besov_rinf'] / r['sobolev'] for r in rows_at(N) if r['sobolev'] > 0))
    ceiling_check(report, ctx, cfg, 'doubling embedding',
                  lambda N: max_ratio(doubling_embedding_check(f, bp).ratio for f in corpus(N)))
    p1 = cfg.value('space', 'p1', None, float)
    if p1 is not None:
        p2 = cfg.value('space', 'p2', bp.p, float)
        ceiling_check(report, ctx, cfg, 'general embedding',
                      lambda N: max_ratio(sobolev_embedding_check(f, bp, p1, p2).ratio for f in corpus(N)))
    ceiling_check(report, ctx, cfg, 'besov inclusion',
                  lambda N: max_ratio(besov_wh_norm(f, BesovParams(0.0, bp.p, INF, bp.s, bp.r)).aggregate
                                      / classical_besov_norm(f, bp.s, bp.p, bp.r).aggregate for f in corpus(N)))
    report.check('zero field doubling ratio', doubling_embedding_check(Field.zeros(grid), bp).ratio, 0.0)
    return report


# ----------------------------------------------------------------------------
# Operator bounds
# ----------------------------------------------------------------------------

def leray_entry(i: int, j: int) -> MultiplierSymbol:
    delta = 1.0 if i == j else 0.0
    return MultiplierSymbol(lambda xi, r: delta - xi[i] * xi[j] / r ** 2, order=0.0, zero_value=delta,
                            name=f'leray{i}{j}')


@experiment('multiplier-bound')
def run_multiplier_bound(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    report = new_report(cfg, grid)
    bp = cfg.besov()
    hp = bp.herz
    hp.check_window(grid.n)
    reference = coarsest(cfg)
    count = cfg.corpus
    symbol = product_symbol(0, 1)
    j_block = cfg.value('input', 'j', reference.j_range[1], int)

    def herz_measure(N):
        fs = random_corpus(cfg, cfg.grid(N), count, reference, j=j_block, j_low=j_block)
        return max_ratio(weak_herz_norm(apply_multiplier(f, symbol), hp).aggregate / weak_herz_norm(f, hp).aggregate
                         for f in fs)

    value = ceiling_check(report, ctx, cfg, 'multiplier annulus bound', herz_measure)
    report.check('multiplier annulus ratio absolute', value, tolerance(report, cfg, 'multiplier_herz_bound'))

    sets = [bp, BesovParams(0.2, 2.0, INF, 0.5, INF), BesovParams(0.0, 3.0, 2.0, -0.5, 2.0)]
    symbols = [symbol, leray_entry(0, 0), leray_entry(0, 1)]
    for k, params in enumerate(sets):
        params.check_window(grid.n)

        def besov_measure(N, params=params, k=k):
            fs = random_corpus(cfg, cfg.grid(N), count, reference, offset=1000 * (k + 1))
            ratios = []
            for f in fs:
                base = besov_wh_norm(f, params).aggregate
                for P in symbols:
                    ratios.append(besov_wh_norm(apply_multiplier(f, P), params).aggregate / base)
            return max_ratio(ratios)

        ceiling_check(report, ctx, cfg, f'multiplier besov set {k}', besov_measure)

    f = random_corpus(cfg, grid, 1, reference)[0]
    family = build_bump(grid)
    worst = 0.0
    for j in family.indices:
        a = lp_block(apply_multiplier(f, symbol), j).values
        b = apply_multiplier(lp_block(f, j), symbol).values
        worst = max(worst, float(np.abs(a - b).max()))
    report.check('blocks commute with multipliers', worst, tolerance(report, cfg, 'identity_tol') * max(f.sup_norm(), 1.0))
    return report


@experiment('convolution-bound')
def run_convolution_bound(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    report = new_report(cfg, grid)
    alpha = cfg.value('space', 'alpha', 0.0, float)
    q = cfg.value('space', 'q', INF, float)
    p1 = cfg.value('space', 'p1', 1.0, float)
    p2 = cfg.value('space', 'p', 2.0, float)
    inv_r = 1.0 / p1 + 1.0 / p2 - 1.0
    if not 0 < inv_r < 1:
        raise ConfigurationError(f"1 + 1/r = 1/p1 + 1/p2 gives no r in (1, inf) for p1={p1}, p2={p2}", key='space.p1')
    r = 1.0 / inv_r
    source, target = HerzParams(alpha, p2, q), HerzParams(alpha, r, q)
    if not -grid.n / r < alpha < grid.n * (1.0 - 1.0 / p2):
        raise ConfigurationError(f"alpha={alpha} outside (-n/r, n(1-1/p2))", key='space.alpha')
    t = cfg.value('input', 't', 1.0, float)
    reference = coarsest(cfg)
    count = cfg.corpus

    def kernel_size(theta: Field) -> float:
        weight = theta.grid.radius ** (theta.grid.n / p1) * np.abs(theta.values[0])
        return max(lp_norm(theta, p1), float(weight.max()))

    def measure(N):
        g = cfg.grid(N)
        theta = preset_field('heat_kernel', {'t': t}, g)
        size = kernel_size(theta)
        fs = random_corpus(cfg, g, count, reference)
        return max_ratio(weak_herz_norm(convolve(theta, f), target).aggregate
                         / (size * weak_herz_norm(f, source).aggregate) for f in fs)

    ceiling_check(report, ctx, cfg, 'convolution', measure)

    theta = preset_field('heat_kernel', {'t': t}, grid)
    f = preset_field('gaussian', {'sigma': 1.0}, grid)
    direct = convolve(theta, f).values
    spectral = heat(f, t).values
    err = float(np.abs(direct - spectral).max() / np.abs(spectral).max())
    report.check('heat-kernel convolution vs spectral heat', err, tolerance(report, cfg, 'convolution_heat_tol'))
    report.results['exponents'] = {'p1': p1, 'p2': p2, 'r': r}
    return report


@experiment('heat-decay')
def run_heat_decay(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    report = new_report(cfg, grid)
    bp = cfg.besov()
    sigmas = cfg.values('space', 'sigma', [1.0, 2.0])
    lo, hi = cfg.values('solver', 't_window', [0.01, 1.0])
    times = log_times(lo, hi, 20)
    slack = tolerance(report, cfg, 'heat_rate_slack')
    family = build_bump(grid)
    blocks = {j: preset_field('random_bandlimited', {'j': j, 'pure': True, 'seed': cfg.seed + j + 1000}, grid)
              for j in family.indices}
    source = bp.replace(r=INF)
    data_norms = {j: besov_wh_norm(f, source).aggregate for j, f in blocks.items()}
    gaussian = preset_field('gaussian', {'sigma': 1.0}, grid)
    fits = {}
    for sigma in sigmas:
        expected = (bp.s - sigma) / 2.0
        for form, r in (('r_inf', INF), ('r_one', 1.0)):
            target = bp.replace(s=sigma, r=r)
            envelope = []
            for t in times:
                envelope.append(max(besov_wh_norm(heat(f, t), target).aggregate / data_norms[j]
                                    for j, f in blocks.items() if data_norms[j] > 0))
            fit = fit_exponent(times, envelope)
            label = f'sigma={sigma:g} {form}'
            fits[label] = {**fit.to_record(), 'expected': expected}
            report.add_series(f'envelope {label}', times, envelope)
            report.check(f'heat rate {label}', abs(fit.slope - expected), slack)
        curve = [besov_wh_norm(heat(gaussian, t), bp.replace(s=sigma)).aggregate for t in times]
        report.add_series(f'gaussian sigma={sigma:g}', times, curve)
        try:
            fits[f'gaussian sigma={sigma:g}'] = fit_exponent(times, curve).to_record()
        except FitError as exc:
            logger.warning("gaussian decay fit skipped: %s", exc)
    report.results['fits'] = fits
    return report


# ----------------------------------------------------------------------------
# Mild solutions
# ----------------------------------------------------------------------------

def mild_params(cfg: ExperimentConfig, n: int):
    return admissible(n, cfg.value('space', 'p', 2.0, float), cfg.value('space', 'q', INF, float),
                      cfg.value('space', 'alpha', 0.0, float))


def solver_kwargs(cfg: ExperimentConfig) -> Dict[str, Any]:
    return {'tol': cfg.value('solver', 'tol', 1e-8, float), 'max_iter': cfg.value('solver', 'max_iter', 12, int)}


def initial_data(cfg: ExperimentConfig, grid: Grid) -> Field:
    u0 = input_field(cfg, grid, 'rotational')
    if u0.components != grid.n:
        raise ConfigurationError(f"initial data must have {grid.n} components", key='input.preset')
    return leray_project(u0)


@experiment('bilinear-k')
def run_bilinear(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    report = new_report(cfg, grid)
    mp = mild_params(cfg, grid.n)
    tg = cfg.time_grid()
    reference = coarsest(cfg)
    count = cfg.corpus
    diagnostics: List[Dict[str, Any]] = []

    def measure(N):
        g = cfg.grid(N)
        us = solenoidal_corpus(cfg, g, count, reference)
        vs = solenoidal_corpus(cfg, g, count, reference, offset=40000)
        ratios = []
        for u0, v0 in zip(us, vs):
            result = bilinear_constant(linear_trajectory(u0, tg), linear_trajectory(v0, tg), mp)
            ratios.append(result['ratio'])
            if N == cfg.N:
                diagnostics.append(result)
        return max_ratio(ratios)

    ceiling_check(report, ctx, cfg, 'bilinear K', measure)

    def linear_measure(N):
        g = cfg.grid(N)
        data = solenoidal_corpus(cfg, g, min(count, 10), reference, offset=80000)
        data.append(leray_project(preset_field('rotational', {}, g)))
        return max_ratio(linear_estimate_ratio(u0, mp, tg) for u0 in data)

    ceiling_check(report, ctx, cfg, 'linear estimate', linear_measure)
    if diagnostics:
        report.add_series('part1_ratio', range(len(diagnostics)), [d['part1_ratio'] for d in diagnostics])
        report.add_series('part2_ratio', range(len(diagnostics)), [d['part2_ratio'] for d in diagnostics])
        report.results['beta'] = diagnostics[0]['beta']
    report.results['params'] = mp.to_dict()
    return report


def _passes(uT, cfg: ExperimentConfig) -> bool:
    ratio = uT.meta.get('contraction_ratio')
    return uT.status == 'converged' and (ratio is None or ratio <= cfg.tolerance('contraction_max'))


def bisect_delta(cfg: ExperimentConfig, attempt: Callable[[float], bool]) -> float:
    """
    Largest admissible amplitude: delta_max when it passes, otherwise a
    geometric bisection between delta_min and delta_max.
    """
    fixed = cfg.value('solver', 'delta', None, float)
    if fixed is not None:
        return fixed
    lo = cfg.value('solver', 'delta_min', 1e-3, float)
    hi = cfg.value('solver', 'delta_max', 4.0, float)
    if not 0 < lo < hi:
        raise ConfigurationError(f"need 0 < delta_min < delta_max, got {lo:g}, {hi:g}", key='solver.delta_min')
    if attempt(hi):
        return hi
    if not attempt(lo):
        raise ExperimentError(f"Picard iteration fails already at delta_min={lo:g}")
    for _ in range(cfg.value('solver', 'bisection_steps', 6, int)):
        mid = math.sqrt(lo * hi)
        lo, hi = (mid, hi) if attempt(mid) else (lo, mid)
    return lo


@experiment('solve')
def run_solve(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    report = new_report(cfg, grid)
    mp = mild_params(cfg, grid.n)
    tg = cfg.time_grid()
    shape = initial_data(cfg, grid)
    kwargs = solver_kwargs(cfg)
    contraction_max = tolerance(report, cfg, 'contraction_max')
    solutions: Dict[float, Any] = {}
    trials: List[Dict[str, Any]] = []

    def attempt(delta: float) -> bool:
        uT = solutions[delta] = picard_solve(delta * shape, mp, tg, **kwargs)
        ok = _passes(uT, cfg)
        trials.append({'delta': delta, 'status': uT.status,
                       'contraction_ratio': uT.meta.get('contraction_ratio'), 'passed': ok})
        logger.info("delta=%.4g: %s, contraction %s", delta, uT.status, uT.meta.get('contraction_ratio'))
        return ok

    delta = bisect_delta(cfg, attempt)
    u0 = delta * shape
    uT = solutions[delta] if delta in solutions else picard_solve(u0, mp, tg, **kwargs)
    tol = kwargs['tol']

    report.results.update({'delta': delta, 'bisection': trials, 'status': uT.status, 'meta': uT.meta,
                           'params': mp.to_dict()})
    report.add_series('history', range(1, len(uT.history) + 1), uT.history)
    report.check('converged', 1.0 if uT.status == 'converged' else 0.0, 1.0, '>=')
    # no ratio means the iteration never left the noise floor and contraction was not observed
    report.check('contraction ratio', uT.meta['contraction_ratio'], contraction_max, '<')
    report.check('fixed-point residual', fixed_point_residual(uT, u0, mp), 2.0 * tol)
    zero_start = picard_solve(u0, mp, tg, start='zero', **kwargs)
    report.check('uniqueness (heat vs zero start)', x_norm(uT - zero_start, mp).total, 5.0 * tol)
    report.check('divergence-free trajectory', uT.divergence_defect(), tolerance(report, cfg, 'divergence_tol'))

    steps = cfg.value('solver', 'reference_steps', 400, int)
    if steps:
        t_ref = cfg.value('solver', 'reference_time', 0.5, float)
        i = int(np.argmin(np.abs(np.asarray(tg.times) - t_ref)))
        t_ref = tg.times[i]
        ref = reference_solve(u0, t_ref, steps).fields[-1]
        picard_state = uT.fields[i]
        err = (picard_state - ref).l2_norm() / max(ref.l2_norm(), 1e-300)
        # both states minus the shared heat part G(t)u0
        free = heat(u0, t_ref)
        nonlinear = ref - free
        nonlinear_size = nonlinear.l2_norm()
        nonlinear_err = (picard_state - ref).l2_norm() / max(nonlinear_size, 1e-300)
        report.results['reference'] = {'t': t_ref, 'steps': steps, 'relative_l2': err,
                                       'nonlinear_l2': nonlinear_size,
                                       'nonlinear_share': nonlinear_size / max(ref.l2_norm(), 1e-300),
                                       'relative_l2_nonlinear': nonlinear_err}
        report.check('agreement with reference solver', err, tolerance(report, cfg, 'reference_tol'))
        report.check('nonlinear part vs reference solver', nonlinear_err,
                     tolerance(report, cfg, 'reference_nonlinear_tol'))
    if ctx.out is not None:
        save_trajectory(uT, ctx.out / 'trajectory')
    return report


@experiment('self-similar')
def run_self_similar(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    report = new_report(cfg, grid)
    mp = mild_params(cfg, grid.n)
    tg = cfg.time_grid()
    lam = cfg.value('solver', 'lambda', 2 ** 0.5, float)
    region = tuple(cfg.values('solver', 'region', [2.0, 3.0])) or None
    u0 = cfg.value('solver', 'delta', 0.1, float) * initial_data(cfg, grid)

    linear = self_similar_check(linear_trajectory(u0, tg), lam, region)
    uT = picard_solve(u0, mp, tg, **solver_kwargs(cfg))
    full = self_similar_check(uT, lam, region)
    report.results.update({'linear': linear, 'picard': full, 'status': uT.status})
    report.add_series('linear', [e['t'] for e in linear['per_time']], [e['error'] for e in linear['per_time']])
    report.add_series('picard', [e['t'] for e in full['per_time']], [e['error'] for e in full['per_time']])
    report.check('linear self-similarity', linear['max_error'], tolerance(report, cfg, 'self_similar_linear_tol'))
    report.check('picard self-similarity', full['max_error'], tolerance(report, cfg, 'self_similar_tol'))
    return report


@experiment('weakstar')
def run_weakstar(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    report = new_report(cfg, grid)
    mp = mild_params(cfg, grid.n)
    tg = cfg.time_grid()
    u0 = cfg.value('solver', 'delta', 0.1, float) * initial_data(cfg, grid)
    uT = picard_solve(u0, mp, tg, **solver_kwargs(cfg))
    linear = linear_trajectory(u0, tg)
    center = cfg.values('input', 'test_center', [0.5] * grid.n)
    sigma = cfg.value('input', 'test_sigma', 1.0, float)
    bumpv = np.exp(-sum((c - x0) ** 2 for c, x0 in zip(grid.coords, center)) / (2.0 * sigma ** 2))
    phi = Field(grid, np.stack([bumpv] * grid.n))
    values = [abs(pair(u - g, phi)) for u, g in zip(uT.fields, linear.fields)]
    lo, hi = cfg.values('solver', 't_window', [tg.t_min, tg.T])
    fit = fit_exponent(uT.times, values, (lo, hi))
    report.add_series('pairing', uT.times, values)
    report.results.update({'fit': fit.to_record(), 'target': mp.gamma, 'status': uT.status})
    report.check('weak-* pairing decay slope', fit.slope, mp.gamma - tolerance(report, cfg, 'weakstar_slack'), '>=')
    return report


@experiment('asymptotic')
def run_asymptotic(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    report = new_report(cfg, grid)
    mp = mild_params(cfg, grid.n)
    tg = cfg.time_grid()
    kwargs = solver_kwargs(cfg)
    u0 = cfg.value('solver', 'delta', 0.1, float) * initial_data(cfg, grid)
    j_top = grid.j_range[1]
    bump = solenoidal_corpus(cfg, grid, 1, j=j_top, pure=True)[0]
    scale = cfg.value('solver', 'perturbation', 0.05, float) * u0.sup_norm() / max(bump.sup_norm(), 1e-300)
    v0 = u0 + scale * bump

    uT = picard_solve(u0, mp, tg, **kwargs)
    vT = picard_solve(v0, mp, tg, **kwargs)
    curve = asymptotic_compare(uT, vT, mp)
    heat_curve = decay_summary(tg.times, [critical_norm(heat(v0 - u0, t), mp) for t in tg.times], floor=HEAT_FLOOR)
    dependence = continuous_dependence(u0, v0, mp, tg, **kwargs)
    report.add_series('solution difference', curve['times'], curve['values'])
    report.add_series('heat difference', heat_curve['times'], heat_curve['values'])
    report.results.update({'curve': curve, 'heat_curve': heat_curve, 'continuous_dependence': dependence,
                           'status': [uT.status, vT.status]})
    report.check('difference nonnegative', min(curve['values']), 0.0, '>=')
    report.check('final/initial difference', curve['final_ratio'], tolerance(report, cfg, 'asymptotic_ratio'), '<')
    report.check('decreasing over last decade', curve['decreasing_fraction'],
                 tolerance(report, cfg, 'asymptotic_monotone'), '>=')
    report.check('heat difference final/initial', heat_curve['final_ratio'],
                 tolerance(report, cfg, 'asymptotic_ratio'), '<')
    report.check('heat difference decreasing over last decade', heat_curve['decreasing_fraction'],
                 tolerance(report, cfg, 'asymptotic_monotone'), '>=')
    return report


@experiment('criticality-sweep')
def run_criticality(cfg: ExperimentConfig, ctx: RunContext) -> Report:
    grid = cfg.grid()
    report = new_report(cfg, grid)
    mp = mild_params(cfg, grid.n)
    tol = tolerance(report, cfg, 'criticality_tol')
    f = initial_data(cfg, grid)
    lambdas = cfg.values('solver', 'lambdas', [0.5, 2.0])
    base = critical_norm(f, mp)
    off = mp.besov().replace(s=mp.s + 0.5)
    off_base = besov_wh_norm(f, off).aggregate
    logs, off_logs = [], []
    for lam in lambdas:
        g = rescale(f, lam)
        logs.append(math.log(critical_norm(g, mp) / base))
        off_logs.append(math.log(besov_wh_norm(g, off).aggregate / off_base))
        report.check(f'critical norm invariance lambda={lam:g}', abs(logs[-1]), tol)
    report.add_series('critical log ratio', lambdas, logs)
    report.add_series('supercritical log ratio', lambdas, off_logs)

    tg = cfg.time_grid()
    linear = linear_trajectory(f, tg)
    lam = 2.0
    ratio = x_norm(rescale_trajectory(linear, lam), mp).total / x_norm(linear, mp).total
    report.check('X-norm invariance lambda=2', abs(math.log(ratio)), tol)
    report.results.update({'params': mp.to_dict(), 'x_norm_ratio': ratio})
    return report


# ----------------------------------------------------------------------------
# Runner
# ----------------------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig, calibrate: bool = False, out=None, store: Optional[CeilingStore] = None,
                   strict: Optional[bool] = None) -> Tuple[Report, Dict[str, Path]]:
    """
    Runs one experiment and writes summary.json, series.csv and meta.json.

    Returns:
        (report, written files). `report.passed` is False when any assertion
        failed; op errors are re-raised as ExperimentError with context.
        `strict` overrides BHK_STRICT_CEILINGS for the default store.
    """
    runner = EXPERIMENTS.get(cfg.name)
    if runner is None:
        raise ExperimentError(f"unknown experiment '{cfg.name}' (known: {', '.join(sorted(EXPERIMENTS))})")
    out = Path(out or cfg.value('output', 'dir') or Path(getattr(settings, 'BHK_OUTPUT_DIR', 'runs')) / cfg.name)
    overrides = {k: float(v) for k, v in cfg.sections.get('ceilings', {}).items()}
    store = store or CeilingStore(overrides=overrides, strict=strict)
    ctx = RunContext(store, calibrate, out)
    logger.info("experiment %s started (seed %d)", cfg.name, cfg.seed)
    try:
        report = runner(cfg, ctx)
    except ConfigurationError:
        raise
    except BHKError as exc:
        raise ExperimentError(f"{cfg.name}: {exc}") from exc
    report.meta['ceilings_file'] = str(store.path)
    files = write_report(report, out)
    if calibrate:
        files['ceilings'] = store.save()
    logger.info("experiment %s finished: %s", cfg.name, 'passed' if report.passed else 'FAILED')
    return report, files


# experiments whose inequality constants are frozen in the ceilings file
CEILING_EXPERIMENTS = ('holder', 'embeddings', 'multiplier-bound', 'convolution-bound', 'bilinear-k')


def calibrate_all(config_dir, store: Optional[CeilingStore] = None, out=None) -> Tuple[Dict[str, Report], Path]:
    """
    Re-measures every ceiling from the configs in `config_dir` and writes them
    to one ceilings file.

    Returns:
        ({experiment: report}, path of the written ceilings file)
    """
    store = store or CeilingStore(strict=False)
    reports: Dict[str, Report] = {}
    for name in CEILING_EXPERIMENTS:
        path = Path(config_dir) / f'{name}.ini'
        cfg = ExperimentConfig.from_file(path) if path.exists() else ExperimentConfig.from_dict(
            {'experiment': {'name': name}})
        target = Path(out) / name if out else None
        reports[name], _ = run_experiment(cfg, calibrate=True, out=target, store=store)
    return reports, store.save()
