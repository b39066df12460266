from dataclasses import dataclass, asdict
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import FitError

MIN_POINTS = 5


@dataclass
class FitResult:
    slope: float
    intercept: float
    stderr: float
    window: Tuple[float, float]
    points: int

    def to_record(self) -> Dict:
        record = asdict(self)
        record['window'] = list(self.window)
        return record


def fit_exponent(t: Sequence[float], values: Sequence[float],
                 window: Optional[Tuple[float, float]] = None) -> FitResult:
    """
    Least-squares line through (log t, log value) for the points with t in
    `window` (inclusive; the whole series when None).

    Returns a FitResult; raises FitError for fewer than 5 points in the
    window or a nonpositive value.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise FitError(f"{t.size} times for {v.size} values")
    if window is not None:
        lo, hi = window
        keep = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
        t, v = t[keep], v[keep]
    if t.size < MIN_POINTS:
        raise FitError(f"fit window holds {t.size} points, need at least {MIN_POINTS}")
    if np.any(t <= 0):
        raise FitError("times must be positive")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise FitError("values must be positive and finite for a log-log fit")

    # Lazy import to keep the CLI start-up light
    from sklearn.linear_model import LinearRegression

    x = np.log(t)
    y = np.log(v)
    model = LinearRegression()
    model.fit(x.reshape(-1, 1), y)
    slope = float(model.coef_[0])
    intercept = float(model.intercept_)
    residuals = y - model.predict(x.reshape(-1, 1))
    spread = float(np.sum((x - x.mean()) ** 2))
    dof = max(x.size - 2, 1)
    stderr = float(np.sqrt(np.sum(residuals ** 2) / dof / spread)) if spread > 0 else 0.0
    return FitResult(slope, intercept, stderr, (float(t.min()), float(t.max())), int(t.size))
