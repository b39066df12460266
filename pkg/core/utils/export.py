"""
Report writer for experiment runs: summary.json, series.csv (long format:
series, x, y) and meta.json. Only meta.json carries timestamps, so two runs
with the same seed produce byte-identical summary and series files.
"""
import json
import logging
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from django.utils import timezone

from core.exceptions import ExperimentError

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ['series', 'x', 'y']

COMPARISONS = {
    '<=': operator.le,
    '<': operator.lt,
    '>=': operator.ge,
    '>': operator.gt,
}


@dataclass
class Assertion:
    name: str
    value: Optional[float]
    bound: float
    op: str = '<='

    @property
    def passed(self) -> bool:
        if self.value is None or (isinstance(self.value, float) and math.isnan(self.value)):
            return False
        return bool(COMPARISONS[self.op](self.value, self.bound))

    def to_record(self) -> Dict[str, Any]:
        return {'name': self.name, 'value': self.value, 'bound': self.bound, 'op': self.op, 'passed': self.passed}


@dataclass
class Report:
    experiment: str
    seed: int
    config: Dict[str, Any] = field(default_factory=dict)
    results: Dict[str, Any] = field(default_factory=dict)
    assertions: List[Assertion] = field(default_factory=list)
    rows: List[tuple] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    def check(self, name: str, value: Optional[float], bound: float, op: str = '<=') -> bool:
        assertion = Assertion(name, None if value is None else float(value), float(bound), op)
        self.assertions.append(assertion)
        logger.info("[%s] %s: %s %s %s -> %s", self.experiment, name, value, op, bound,
                    'pass' if assertion.passed else 'FAIL')
        return assertion.passed

    def add_series(self, name: str, xs: Sequence[float], ys: Sequence[float]):
        self.rows.extend((name, float(x), float(y)) for x, y in zip(xs, ys))

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def summary(self) -> Dict[str, Any]:
        return {
            'experiment': self.experiment,
            'seed': self.seed,
            'config': self.config,
            'results': self.results,
            'assertions': [a.to_record() for a in self.assertions],
            'passed': self.passed,
        }

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=SERIES_COLUMNS)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return _plain(obj.item())
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return 'inf' if obj > 0 else ('-inf' if obj < 0 else 'nan')
    return obj


def dumps(data: Any) -> str:
    return json.dumps(_plain(data), sort_keys=True, indent=2) + '\n'


def write_report(report: Report, path: Union[str, Path]) -> Dict[str, Path]:
    """
    Writes the report into directory `path`.

    Returns:
        {'summary': ..., 'series': ..., 'meta': ...} file paths.
    """
    out = Path(path)
    files = {'summary': out / 'summary.json', 'series': out / 'series.csv', 'meta': out / 'meta.json'}
    meta = {'written_at': timezone.now().isoformat(), **report.meta}
    try:
        out.mkdir(parents=True, exist_ok=True)
        files['summary'].write_text(dumps(report.summary()))
        report.frame().to_csv(files['series'], index=False, float_format='%.17g', lineterminator='\n')
        files['meta'].write_text(dumps(meta))
    except OSError as exc:
        raise ExperimentError(f"cannot write report to {out}: {exc}") from exc
    logger.info("report for %s written to %s (%d assertions, %d series rows)",
                report.experiment, out, len(report.assertions), len(report.rows))
    return files
