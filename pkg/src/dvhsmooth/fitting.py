"""Power-law fits by least squares in log-log coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FitFailedError, InsufficientDataError

FIT_QUALITY_MIN = 0.98
# residual spread (natural-log units) treated as noise when judging a fit; keeps
# an essentially constant series (exponent 0) from scoring r^2 = 0
LOG_NOISE_FLOOR = 0.05


@dataclass(frozen=True)
class ExponentFit:
    """``y ~ coefficient * x**exponent`` over ``sample_range``."""

    exponent: float
    coefficient: float
    r_squared: float
    sample_range: tuple

    def to_dict(self) -> dict:
        return {
            "exponent": float(self.exponent),
            "coefficient": float(self.coefficient),
            "r_squared": float(self.r_squared),
            "sample_range": [float(v) for v in self.sample_range],
        }


def loglog_fit(x, y, fit_quality_min: float = FIT_QUALITY_MIN) -> ExponentFit:
    """Regress ``log|y|`` on ``log x``.

    The quality score is ``1 - SS_res / max(SS_tot, n * LOG_NOISE_FLOOR**2)``,
    i.e. the usual coefficient of determination except that a series whose
    total spread is below the noise floor is judged by its residuals alone.

    Raises
    ------
    InsufficientDataError
        Fewer than three usable (positive, finite) samples.
    FitFailedError
        Quality below ``fit_quality_min``.
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    ok = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 3:
        raise InsufficientDataError(f"need at least 3 positive samples, got {int(ok.sum())}")
    lx, ly = np.log(x[ok]), np.log(y[ok])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / max(ss_tot, lx.size * LOG_NOISE_FLOOR**2)
    fit = ExponentFit(float(slope), float(np.exp(intercept)), float(r2), (float(x[ok].min()), float(x[ok].max())))
    if r2 < fit_quality_min:
        raise FitFailedError(f"log-log fit quality {r2:.4f} below {fit_quality_min}", fit=fit)
    return fit
