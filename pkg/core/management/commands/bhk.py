"""
bhk <experiment> --config <file> [--calibrate] [--strict-ceilings] [--out <dir>] [--seed <n>]
bhk calibrate [--configs <dir>] [--out <dir>]
bhk norm --field <bhf> --space {wk|swk|bwk} --alpha <f> --p <f> --q <f|inf> [--s <f>] [--r <f|inf>]
bhk gen --preset <name> --grid n,N,L --out <bhf> [--params <json>]
"""
import json

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.exceptions import BHKError, ConfigurationError
from core.services.experiments import EXPERIMENTS, ExperimentConfig, calibrate_all, parse_value, run_experiment
from core.services.herz_norms import HerzParams, parse_exponent, weak_herz_norm
from core.services.littlewood_paley import BesovParams, besov_wh_norm, sobolev_wh_norm
from core.utils.export import dumps
from core.utils.field_io import read_field, write_field
from core.utils.fields import make_grid
from core.utils.presets import preset_field


def parse_grid(text: str):
    try:
        n, N, L = (part.strip() for part in text.split(','))
        return make_grid(int(n), int(N), float(L))
    except ValueError:
        raise ConfigurationError(f"expected n,N,L, got {text!r}", key='grid')


def parse_params(text: str):
    if not text:
        return {}
    try:
        params = json.loads(text)
    except json.JSONDecodeError:
        params = dict(item.split('=', 1) for item in text.split(';') if item.strip())
        params = {k.strip(): parse_value(v) for k, v in params.items()}
    if not isinstance(params, dict):
        raise ConfigurationError("preset parameters must be a JSON object or k=v;k=v", key='params')
    return params


class Command(BaseCommand):
    help = 'Weak-Herz norm lab: run an experiment, evaluate a norm or generate a preset field'

    def add_arguments(self, parser):
        parser.add_argument('target', choices=sorted(EXPERIMENTS) + ['norm', 'gen', 'calibrate'])
        parser.add_argument('--config', help='INI experiment config')
        parser.add_argument('--calibrate', action='store_true', help='re-measure and freeze ceilings')
        parser.add_argument('--strict-ceilings', action='store_true', default=None,
                            help='fail instead of measuring a ceiling missing from the ceilings file')
        parser.add_argument('--configs', default=str(settings.BASE_DIR / 'configs'),
                            help='config directory read by calibrate')
        parser.add_argument('--out', help='output directory (experiments) or .bhf file (gen)')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--field', help='BHF1 field file')
        parser.add_argument('--preset')
        parser.add_argument('--grid', default='2,256,16', help='n,N,L')
        parser.add_argument('--params', default='', help='preset parameters, JSON or k=v;k=v')
        parser.add_argument('--space', choices=['wk', 'swk', 'bwk'], default='wk')
        parser.add_argument('--alpha', default='0')
        parser.add_argument('--p', default='2')
        parser.add_argument('--q', default='inf')
        parser.add_argument('--s', default='0')
        parser.add_argument('--r', default='inf')

    def handle(self, *args, **options):
        target = options['target']
        try:
            if target == 'norm':
                return self.handle_norm(options)
            if target == 'gen':
                return self.handle_gen(options)
            if target == 'calibrate':
                return self.handle_calibrate(options)
            return self.handle_experiment(target, options)
        except BHKError as exc:
            raise CommandError(str(exc))

    def handle_experiment(self, target, options):
        if options['config']:
            cfg = ExperimentConfig.from_file(options['config'])
            if cfg.name != target:
                raise ConfigurationError(f"config is for '{cfg.name}', not '{target}'", key='experiment.name')
        else:
            cfg = ExperimentConfig.from_dict({'experiment': {'name': target}})
        if options['seed'] is not None:
            cfg.seed = options['seed']
        report, files = run_experiment(cfg, calibrate=options['calibrate'], out=options['out'],
                                       strict=options['strict_ceilings'])
        for assertion in report.assertions:
            style = self.style.SUCCESS if assertion.passed else self.style.ERROR
            self.stdout.write(style(f"{'PASS' if assertion.passed else 'FAIL'} {assertion.name}: "
                                    f"{assertion.value} {assertion.op} {assertion.bound}"))
        self.stdout.write(f"summary written to {files['summary']}")
        if not report.passed:
            failed = sum(not a.passed for a in report.assertions)
            raise CommandError(f"{failed} assertion(s) failed", returncode=1)
        self.stdout.write(self.style.SUCCESS(f'{target}: all {len(report.assertions)} assertions passed'))

    def load_field(self, options):
        if options['field']:
            return read_field(options['field'])
        if options['preset']:
            return preset_field(options['preset'], parse_params(options['params']), parse_grid(options['grid']))
        raise ConfigurationError("give --field or --preset", key='field')

    def handle_norm(self, options):
        f = self.load_field(options)
        alpha = parse_exponent(options['alpha'], 'alpha')
        p, q = parse_exponent(options['p'], 'p'), parse_exponent(options['q'], 'q')
        if options['space'] == 'wk':
            result = weak_herz_norm(f, HerzParams(alpha, p, q)).to_record()
        else:
            bp = BesovParams(alpha, p, q, parse_exponent(options['s'], 's'), parse_exponent(options['r'], 'r'))
            if options['space'] == 'swk':
                result = {'space': 'swk', 'params': bp.to_dict(), 'aggregate': sobolev_wh_norm(f, bp)}
            else:
                result = besov_wh_norm(f, bp).to_record()
        self.stdout.write(dumps(result), ending='')

    def handle_gen(self, options):
        if not options['preset']:
            raise ConfigurationError("gen needs --preset", key='preset')
        if not options['out']:
            raise ConfigurationError("gen needs --out", key='out')
        f = self.load_field(options)
        path = write_field(f, options['out'], meta=f.meta)
        self.stdout.write(self.style.SUCCESS(f"wrote {options['preset']} on {f.grid.describe()} to {path}"))

    def handle_calibrate(self, options):
        reports, path = calibrate_all(options['configs'], out=options['out'])
        count = 0
        for name, report in reports.items():
            for label, entry in report.results.get('ceilings', {}).items():
                self.stdout.write(f"{name}: {label} = {entry['ceiling']:.6g} ({entry['source']})")
                count += 1
        self.stdout.write(self.style.SUCCESS(f"wrote {count} ceilings to {path}"))
