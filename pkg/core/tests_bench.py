import json
import math
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from core.exceptions import ConfigurationError, ExperimentError, FitError
from core.ml.fit import fit_exponent
from core.services.ceilings import Ceiling, CeilingStore
from core.services.experiments import (
    CEILING_EXPERIMENTS, EXPERIMENTS, INF, ExperimentConfig, calibrate_all, parse_value, run_experiment,
)
from core.utils.export import Report, write_report


class FitTests(SimpleTestCase):
    def test_exact_power_law(self):
        """t^-0.75 fits to slope -0.75 with zero error."""
        t = np.geomspace(0.01, 1.0, 9)
        fit = fit_exponent(t, 3.0 * t ** -0.75)
        self.assertAlmostEqual(fit.slope, -0.75, places=10)
        self.assertAlmostEqual(math.exp(fit.intercept), 3.0, places=9)
        self.assertLess(fit.stderr, 1e-10)
        self.assertEqual(fit.points, 9)

    def test_window_selection(self):
        """Only points inside the window enter the fit."""
        t = np.geomspace(0.01, 1.0, 9)
        values = np.where(t < 0.05, t ** 2, t ** -1)
        fit = fit_exponent(t, values, (0.05, 1.0))
        self.assertAlmostEqual(fit.slope, -1.0, places=10)
        self.assertEqual(fit.points, 6)
        self.assertEqual(fit.to_record()['window'][1], 1.0)

    def test_rejects_short_or_nonpositive_series(self):
        """Fewer than 5 points or a nonpositive value raise FitError."""
        with self.assertRaises(FitError):
            fit_exponent([1, 2, 3, 4], [1, 2, 3, 4])
        with self.assertRaises(FitError):
            fit_exponent([1, 2, 3, 4, 5], [1, 2, 0, 4, 5])


class ReportTests(SimpleTestCase):
    def make_report(self):
        report = Report('norms', 7, {'name': 'norms'})
        report.results['value'] = INF
        report.add_series('profile', [0, 1], [0.5, 0.25])
        report.check('bound', 0.5, 1.0)
        return report

    def test_files_are_deterministic(self):
        """Same report, same summary and series bytes; meta carries the timestamp."""
        with tempfile.TemporaryDirectory() as tmp:
            a = write_report(self.make_report(), Path(tmp) / 'a')
            b = write_report(self.make_report(), Path(tmp) / 'b')
            for key in ('summary', 'series'):
                self.assertEqual(a[key].read_bytes(), b[key].read_bytes())
            summary = json.loads(a['summary'].read_text())
            self.assertEqual(summary['results']['value'], 'inf')
            self.assertTrue(summary['passed'])
            self.assertIn('written_at', json.loads(a['meta'].read_text()))

    def test_empty_series_keeps_header(self):
        """A report without series still writes the CSV header."""
        with tempfile.TemporaryDirectory() as tmp:
            files = write_report(Report('norms', 0), tmp)
            self.assertEqual(files['series'].read_text(), 'series,x,y\n')

    def test_none_value_fails(self):
        """An assertion without a measured value fails."""
        report = Report('solve', 0)
        self.assertFalse(report.check('contraction', None, 0.9))
        self.assertFalse(report.passed)


class CeilingTests(SimpleTestCase):
    @staticmethod
    def measure(N):
        return 1.0 + 1.0 / N

    def test_calibrate_save_reload(self):
        """Calibrated ceilings are 1.5 times the larger measurement and survive a reload."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'ceilings.json'
            store = CeilingStore(path)
            resolved = store.resolve('holder', self.measure, 32, calibrate=True)
            self.assertEqual(resolved['source'], 'calibrated')
            self.assertAlmostEqual(resolved['ceiling'], 1.5 * (1.0 + 1.0 / 32))
            store.save()
            again = CeilingStore(path).resolve('holder', self.measure, 32)
            self.assertEqual(again['source'], 'file')
            self.assertAlmostEqual(again['ceiling'], resolved['ceiling'])
            forced = CeilingStore(path, overrides={'holder': 2.0}).resolve('holder', self.measure, 32)
            self.assertEqual((forced['source'], forced['ceiling']), ('override', 2.0))

    def test_missing_ceiling_is_measured_inline(self):
        """Without a stored value the ceiling is measured on the spot."""
        with tempfile.TemporaryDirectory() as tmp:
            resolved = CeilingStore(Path(tmp) / 'none.json').resolve('k', self.measure, 64)
        self.assertEqual(resolved['source'], 'inline')
        self.assertTrue(resolved['record']['stable'])

    def test_strict_store_refuses_inline_measurement(self):
        """A strict store raises instead of measuring a missing ceiling."""
        with tempfile.TemporaryDirectory() as tmp:
            store = CeilingStore(Path(tmp) / 'none.json', strict=True)
            with self.assertRaises(ConfigurationError) as ctx:
                store.resolve('k', self.measure, 64)
            self.assertEqual(ctx.exception.key, 'ceilings.k')
            self.assertEqual(store.resolve('k', self.measure, 64, calibrate=True)['source'], 'calibrated')

    def test_drift(self):
        """Drift is the relative gap between the two resolutions."""
        ceiling = Ceiling('k', 1.0, 0.8, 64, 1.5, 0.2)
        self.assertAlmostEqual(ceiling.drift, 0.2)
        self.assertTrue(ceiling.stable)
        with self.assertRaises(ConfigurationError):
            Ceiling.from_record({'name': 'k'})


class ConfigTests(SimpleTestCase):
    def test_parse_value(self):
        """INI values become numbers, lists, booleans or strings."""
        self.assertEqual(parse_value('1, 2.5, inf'), [1, 2.5, INF])
        self.assertIs(parse_value('yes'), True)
        self.assertEqual(parse_value('rotational'), 'rotational')

    def test_unknown_sections_and_keys(self):
        """Errors name the offending key path."""
        with self.assertRaises(ConfigurationError) as ctx:
            ExperimentConfig.from_dict({'experiment': {'name': 'norms'}, 'bogus': {}})
        self.assertEqual(ctx.exception.key, 'bogus')
        with self.assertRaises(ConfigurationError) as ctx:
            ExperimentConfig.from_dict({'experiment': {'name': 'norms'}, 'grid': {'M': 3}})
        self.assertEqual(ctx.exception.key, 'grid.M')
        with self.assertRaises(ConfigurationError) as ctx:
            ExperimentConfig.from_dict({'grid': {'N': 64}})
        self.assertEqual(ctx.exception.key, 'experiment.name')
        with self.assertRaises(ConfigurationError) as ctx:
            ExperimentConfig.from_dict({'experiment': {'name': 'norms', 'seed': -1}})
        self.assertEqual(ctx.exception.key, 'experiment.seed')

    def test_invalid_grid_key(self):
        """A bad grid size reports grid.N."""
        cfg = ExperimentConfig.from_dict({'experiment': {'name': 'norms'}, 'grid': {'N': 100}})
        with self.assertRaises(ConfigurationError) as ctx:
            cfg.grid()
        self.assertEqual(ctx.exception.key, 'grid.N')

    def test_ini_file(self):
        """INI files keep key case and parse 'inf'."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'norms.ini'
            path.write_text('[experiment]\nname = norms\nseed = 3\n\n[grid]\nN = 128\nL = 16\n\n'
                            '[space]\nq = inf\n\n[tolerances]\nnorm_anchor_tol = 0.05\n')
            cfg = ExperimentConfig.from_file(path)
        self.assertEqual((cfg.name, cfg.seed, cfg.N), ('norms', 3, 128))
        self.assertEqual(cfg.value('space', 'q', None, float), INF)
        self.assertEqual(cfg.tolerance('norm_anchor_tol'), 0.05)
        self.assertEqual(cfg.tolerance('ceiling_factor'), 1.5)
        self.assertEqual(cfg.calibration_N, 64)

    def test_experiment_defaults(self):
        """Per-experiment defaults apply when the config is silent."""
        cfg = ExperimentConfig.from_dict({'experiment': {'name': 'inclusions'}})
        self.assertEqual(cfg.grid().L, 8.0)
        self.assertEqual(ExperimentConfig.from_dict({'experiment': {'name': 'solve'}}).N, 128)

    def test_missing_file(self):
        with self.assertRaises(ConfigurationError):
            ExperimentConfig.from_file('/nonexistent/run.ini')


class RunnerTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.store = CeilingStore(Path(self.tmp.name) / 'ceilings.json')

    def test_unknown_experiment(self):
        """Unregistered names raise ExperimentError."""
        cfg = ExperimentConfig.from_dict({'experiment': {'name': 'nonsense'}})
        with self.assertRaises(ExperimentError):
            run_experiment(cfg, out=self.tmp.name, store=self.store)

    def test_norms_on_power_law(self):
        """The default norms run reproduces the closed-form anchors."""
        cfg = ExperimentConfig.from_dict({'experiment': {'name': 'norms'}, 'grid': {'n': 2, 'N': 256, 'L': 16}})
        report, files = run_experiment(cfg, out=Path(self.tmp.name) / 'norms', store=self.store)
        self.assertTrue(report.passed, [a.to_record() for a in report.assertions if not a.passed])
        self.assertEqual(report.results['tolerances']['norm_anchor_tol'], 0.03)
        self.assertTrue(files['summary'].exists())

    def test_inclusions(self):
        """Witness growth, bounded profile and Morrey growth all hold."""
        cfg = ExperimentConfig.from_dict({'experiment': {'name': 'inclusions'}})
        report, _ = run_experiment(cfg, out=Path(self.tmp.name) / 'inclusions', store=self.store)
        self.assertTrue(report.passed, [a.to_record() for a in report.assertions if not a.passed])
        self.assertEqual(report.results['witness_bumps'], 3)


# ceiling experiments on a two-level (64, 128) calibration with a tiny corpus
CEILING_RUN = {'experiment': {'calibration_N': 64, 'corpus': 2}, 'grid': {'N': 128, 'L': 16}}
SMALL_GRID = {'grid': {'N': 64, 'L': 8}}
SHORT_TIMES = {'rho': 2.0, 't_min': 0.01, 'T': 0.16}


def small_config(name, base=None, **sections):
    data = {section: dict(values) for section, values in (base or {}).items()}
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    data.setdefault('experiment', {})['name'] = name
    return ExperimentConfig.from_dict(data)


class ExperimentRunTests(SimpleTestCase):
    """Every registered experiment on small grids; only resolution-independent checks are asserted."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.store = CeilingStore(Path(self.tmp.name) / 'ceilings.json', strict=False)

    def run_config(self, cfg):
        report, files = run_experiment(cfg, out=Path(self.tmp.name) / cfg.name, store=self.store)
        self.assertTrue(files['summary'].exists())
        return report

    def assertPassed(self, report, *names):
        checks = {a.name: a for a in report.assertions}
        for name in names:
            self.assertIn(name, checks)
            self.assertTrue(checks[name].passed, checks[name].to_record())

    def assertCeilingsHold(self, report):
        """The measured value at N = 2 N_cal never exceeds its own inline ceiling."""
        self.assertTrue(report.results['ceilings'])
        for name, entry in report.results['ceilings'].items():
            self.assertEqual(entry['source'], 'inline')
            self.assertPassed(report, name)

    def test_registry_covers_ceiling_experiments(self):
        """Every experiment with frozen ceilings is registered."""
        self.assertLessEqual(set(CEILING_EXPERIMENTS), set(EXPERIMENTS))

    def test_holder(self):
        report = self.run_config(small_config('holder', CEILING_RUN))
        self.assertCeilingsHold(report)
        self.assertPassed(report, 'indicator Hölder ratio = 1', 'L-infinity factor ratio')

    def test_embeddings(self):
        report = self.run_config(small_config('embeddings', CEILING_RUN))
        self.assertCeilingsHold(report)
        self.assertPassed(report, 'zero field doubling ratio')
        self.assertIn('besov inclusion', report.results['ceilings'])

    def test_multiplier_bound(self):
        report = self.run_config(small_config('multiplier-bound', CEILING_RUN))
        self.assertCeilingsHold(report)
        self.assertPassed(report, 'blocks commute with multipliers')
        self.assertIn('multiplier besov set 2', report.results['ceilings'])

    def test_convolution_bound(self):
        report = self.run_config(small_config('convolution-bound', CEILING_RUN))
        self.assertCeilingsHold(report)
        self.assertPassed(report, 'heat-kernel convolution vs spectral heat')
        self.assertEqual(report.results['exponents']['r'], 2.0)

    def test_bilinear_k(self):
        report = self.run_config(small_config('bilinear-k', CEILING_RUN, solver=SHORT_TIMES))
        self.assertCeilingsHold(report)
        self.assertEqual(set(report.results['beta']), {'part1', 'part2'})

    def test_heat_decay(self):
        report = self.run_config(small_config('heat-decay', SMALL_GRID, space={'sigma': [1.0]}))
        self.assertIn('sigma=1 r_inf', report.results['fits'])
        self.assertIn('sigma=1 r_one', report.results['fits'])
        self.assertEqual(report.results['fits']['sigma=1 r_inf']['expected'], -0.5)
        self.assertTrue(all(a.value is not None and math.isfinite(a.value) for a in report.assertions))

    def test_solve_bisects_between_delta_bounds(self):
        """delta_max fails, delta_min passes, and each bisection step is recorded."""
        solver = {**SHORT_TIMES, 'rho': 2 ** 0.5, 'delta_min': 1e-3, 'delta_max': 50.0, 'bisection_steps': 2,
                  'reference_time': 0.16, 'reference_steps': 64}
        report = self.run_config(small_config('solve', SMALL_GRID, solver=solver))
        trials = report.results['bisection']
        self.assertEqual([t['delta'] for t in trials[:2]], [50.0, 1e-3])
        self.assertEqual([t['passed'] for t in trials[:2]], [False, True])
        self.assertEqual(len(trials), 4)
        self.assertEqual(report.results['delta'], max(t['delta'] for t in trials if t['passed']))
        self.assertEqual(report.results['status'], 'converged')
        self.assertPassed(report, 'converged', 'contraction ratio', 'fixed-point residual')
        self.assertGreater(report.results['reference']['nonlinear_share'], 0.0)

    def test_solve_matches_reference_nonlinear_part(self):
        """At a fixed small amplitude the Picard state matches RK4 in full and in its nonlinear part."""
        solver = {**SHORT_TIMES, 'rho': 2 ** 0.5, 'delta': 0.05, 'tol': 1e-9, 'reference_time': 0.16,
                  'reference_steps': 64}
        report = self.run_config(small_config('solve', SMALL_GRID, solver=solver))
        self.assertEqual(report.results['bisection'], [])
        self.assertPassed(report, 'converged', 'agreement with reference solver',
                          'nonlinear part vs reference solver')
        self.assertEqual(report.results['tolerances']['reference_nonlinear_tol'], 0.05)

    def test_self_similar(self):
        report = self.run_config(small_config('self-similar', SMALL_GRID))
        self.assertEqual(report.results['status'], 'converged')
        self.assertEqual(report.results['linear']['offset'], report.results['picard']['offset'])

    def test_weakstar(self):
        report = self.run_config(small_config('weakstar', SMALL_GRID))
        self.assertEqual(report.results['target'], 0.5)
        self.assertGreaterEqual(report.results['fit']['points'], 5)

    def test_asymptotic_heat_difference_decays(self):
        """The heat-carried perturbation decays and stays nonincreasing over the last decade."""
        solver = {'rho': 2.0, 't_min': 0.01, 'T': 1.28}
        report = self.run_config(small_config('asymptotic', SMALL_GRID, solver=solver))
        self.assertPassed(report, 'difference nonnegative', 'heat difference final/initial',
                          'heat difference decreasing over last decade')
        heat_curve = report.results['heat_curve']
        self.assertEqual(len(heat_curve['values']), 8)
        self.assertGreater(heat_curve['values'][0], 0.0)

    def test_criticality_sweep(self):
        report = self.run_config(small_config('criticality-sweep', SMALL_GRID))
        names = [a.name for a in report.assertions]
        self.assertEqual(names, ['critical norm invariance lambda=0.5', 'critical norm invariance lambda=2',
                                 'X-norm invariance lambda=2'])
        self.assertGreater(report.results['x_norm_ratio'], 0.0)

    def test_same_seed_same_bytes(self):
        """Two runs with one seed write identical summary and series files."""
        outputs = []
        for label in ('a', 'b'):
            store = CeilingStore(Path(self.tmp.name) / f'{label}.json', strict=False)
            _, files = run_experiment(small_config('holder', CEILING_RUN), out=Path(self.tmp.name) / label,
                                      store=store)
            outputs.append({key: files[key].read_bytes() for key in ('summary', 'series')})
        self.assertEqual(outputs[0], outputs[1])

    @override_settings(BHK_STRICT_CEILINGS=True)
    def test_strict_run_needs_frozen_ceilings(self):
        """A strict run fails on a missing ceiling and passes once calibrate_all froze it."""
        path = Path(self.tmp.name) / 'frozen.json'
        with override_settings(BHK_CEILINGS_FILE=path):
            with self.assertRaises(ConfigurationError):
                run_experiment(small_config('holder', CEILING_RUN), out=Path(self.tmp.name) / 'strict')
        configs = Path(self.tmp.name) / 'configs'
        configs.mkdir()
        for name in CEILING_EXPERIMENTS:
            text = f'[experiment]\nname = {name}\ncalibration_N = 64\ncorpus = 1\n\n[grid]\nN = 128\nL = 16\n'
            if name == 'bilinear-k':
                text += '\n[solver]\nrho = 2\nt_min = 0.01\nT = 0.16\n'
            (configs / f'{name}.ini').write_text(text)
        reports, written = calibrate_all(configs, store=CeilingStore(path, strict=False),
                                         out=Path(self.tmp.name) / 'calibration')
        self.assertEqual(written, path)
        self.assertEqual(set(reports), set(CEILING_EXPERIMENTS))
        frozen = json.loads(path.read_text())
        self.assertIn('holder', frozen)
        self.assertIn('bilinear K', frozen)
        report, _ = run_experiment(small_config('holder', CEILING_RUN), out=Path(self.tmp.name) / 'frozen',
                                   store=CeilingStore(path))
        self.assertEqual(report.results['ceilings']['holder']['source'], 'file')


class CommandTests(SimpleTestCase):
    def test_gen_then_norm(self):
        """bhk gen writes a field that bhk norm reads back."""
        with tempfile.TemporaryDirectory() as tmp:
            path = str(Path(tmp) / 'gauss.bhf')
            out = StringIO()
            call_command('bhk', 'gen', '--preset', 'gaussian', '--grid', '2,64,8', '--params', 'sigma=2',
                         '--out', path, stdout=out)
            self.assertIn('wrote gaussian', out.getvalue())
            out = StringIO()
            call_command('bhk', 'norm', '--field', path, '--p', '2', '--q', 'inf', stdout=out)
        record = json.loads(out.getvalue())
        self.assertEqual(record['space'], 'wk')
        self.assertGreater(record['aggregate'], 0.0)

    def test_besov_norm_of_preset(self):
        """bhk norm evaluates presets directly in the Besov-type space."""
        out = StringIO()
        call_command('bhk', 'norm', '--preset', 'mode', '--params', '{"m": [4, 0]}', '--grid', '2,64,8',
                     '--space', 'bwk', '--s', '0.5', stdout=out)
        record = json.loads(out.getvalue())
        self.assertEqual(record['space'], 'bwk')
        self.assertEqual(record['params']['s'], 0.5)

    def test_errors_become_command_errors(self):
        """Lab errors surface as CommandError."""
        with self.assertRaises(CommandError):
            call_command('bhk', 'gen', '--preset', 'nonsense', '--out', '/tmp/unused.bhf', stdout=StringIO())
        with self.assertRaises(CommandError):
            call_command('bhk', 'norm', stdout=StringIO())
