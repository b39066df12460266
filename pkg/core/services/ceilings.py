"""
Measured ceilings for inequality constants.

An inequality lhs <= C rhs with an unknown C is checked by measuring the
largest ratio over a corpus at two resolutions N and 2N. The measurement is
accepted when the two agree within `ceiling_stability`, and the ceiling is
frozen at `ceiling_factor` times the larger one. `bhk --calibrate` writes the
frozen values to the ceilings file (configs/ceilings.json unless
BHK_CEILINGS_FILE says otherwise); normal runs read them back, and strict
runs refuse to measure a missing one.
"""
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Union

from django.conf import settings

from core.exceptions import ConfigurationError
from core.services.herz_norms import acceptance

logger = logging.getLogger(__name__)


@dataclass
class Ceiling:
    name: str
    coarse: float
    fine: float
    N: int
    factor: float
    stability: float

    @property
    def measured(self) -> float:
        return max(self.coarse, self.fine)

    @property
    def ceiling(self) -> float:
        return self.factor * self.measured

    @property
    def drift(self) -> float:
        """Relative disagreement between the two resolutions."""
        top = self.measured
        return abs(self.fine - self.coarse) / top if top > 0 else 0.0

    @property
    def stable(self) -> bool:
        return self.drift <= self.stability

    def to_record(self) -> Dict:
        return {**asdict(self), 'ceiling': self.ceiling, 'drift': self.drift, 'stable': self.stable}

    @classmethod
    def from_record(cls, record: Dict) -> 'Ceiling':
        try:
            return cls(record['name'], float(record['coarse']), float(record['fine']), int(record['N']),
                       float(record['factor']), float(record['stability']))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed ceiling record: {exc}", key='ceilings')


def measure_ceiling(name: str, measure: Callable[[int], float], N: int,
                    factor: Optional[float] = None, stability: Optional[float] = None) -> Ceiling:
    """Runs `measure` (largest ratio over the corpus at a resolution) at N and 2N."""
    factor = factor if factor is not None else acceptance('ceiling_factor', 1.5)
    stability = stability if stability is not None else acceptance('ceiling_stability', 0.2)
    coarse = float(measure(N))
    fine = float(measure(2 * N))
    ceiling = Ceiling(name, coarse, fine, N, factor, stability)
    logger.info("ceiling %s: %.4g at N=%d, %.4g at N=%d -> %.4g (drift %.1f%%)",
                name, coarse, N, fine, 2 * N, ceiling.ceiling, 100 * ceiling.drift)
    return ceiling


class CeilingStore:
    """JSON file of frozen ceilings keyed by name."""

    def __init__(self, path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, float]] = None,
                 strict: Optional[bool] = None):
        self.path = Path(path or getattr(settings, 'BHK_CEILINGS_FILE', 'ceilings.json'))
        self.strict = getattr(settings, 'BHK_STRICT_CEILINGS', False) if strict is None else strict
        self.overrides = dict(overrides or {})
        self.records: Dict[str, Ceiling] = {}
        if self.path.exists():
            try:
                data = json.loads(self.path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"unreadable ceilings file {self.path}: {exc}", key='ceilings')
            self.records = {name: Ceiling.from_record(rec) for name, rec in data.items()}

    def get(self, name: str) -> Optional[float]:
        if name in self.overrides:
            return float(self.overrides[name])
        record = self.records.get(name)
        return record.ceiling if record else None

    def put(self, ceiling: Ceiling):
        self.records[ceiling.name] = ceiling

    def save(self, path: Optional[Union[str, Path]] = None) -> Path:
        target = Path(path or self.path)
        target.parent.mkdir(parents=True, exist_ok=True)
        data = {name: rec.to_record() for name, rec in sorted(self.records.items())}
        target.write_text(json.dumps(data, sort_keys=True, indent=2) + '\n')
        logger.info("wrote %d ceilings to %s", len(data), target)
        return target

    def resolve(self, name: str, measure: Callable[[int], float], N: int, calibrate: bool = False) -> Dict:
        """
        Frozen ceiling for `name`. With calibrate=True, or when nothing is
        stored, it is measured now; an inline measurement is logged as a
        warning since it is not a regression check, and a strict store raises
        ConfigurationError instead.

        Returns:
            {'ceiling': float, 'source': 'override'|'file'|'calibrated'|'inline',
             'record': Ceiling record or None}
        """
        if not calibrate:
            if name in self.overrides:
                return {'ceiling': float(self.overrides[name]), 'source': 'override', 'record': None}
            if name in self.records:
                return {'ceiling': self.records[name].ceiling, 'source': 'file',
                        'record': self.records[name].to_record()}
            if self.strict:
                raise ConfigurationError(f"no frozen ceiling for '{name}' in {self.path}; run with --calibrate",
                                         key=f'ceilings.{name}')
            logger.warning("no frozen ceiling for %s; calibrating inline at N=%d", name, N)
        ceiling = measure_ceiling(name, measure, N)
        self.put(ceiling)
        return {'ceiling': ceiling.ceiling, 'source': 'calibrated' if calibrate else 'inline',
                'record': ceiling.to_record()}
