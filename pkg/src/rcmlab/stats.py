"""Small statistical helpers: confidence intervals and least-squares fits."""

from dataclasses import dataclass

import numpy as np
from scipy import stats


def wilson_interval(successes, trials, level=0.95):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 1.0
    z = stats.norm.ppf(0.5 + level / 2)
    phat = successes / trials
    den = 1 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / den
    half = z * np.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / den
    return float(max(0.0, centre - half)), float(min(1.0, centre + half))


def mean_interval(values, level=0.95):
    """Sample mean, standard error and normal-approximation interval."""
    v = np.asarray(values, dtype=float)
    m = float(v.mean())
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("inf")
    z = stats.norm.ppf(0.5 + level / 2)
    return m, se, m - z * se, m + z * se


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float
    n: int

    def slope_interval(self, level=0.95):
        if self.n <= 2:
            return -np.inf, np.inf
        q = stats.t.ppf(0.5 + level / 2, self.n - 2)
        return self.slope - q * self.slope_se, self.slope + q * self.slope_se


def fit_line(x, y):
    """Ordinary least squares y = intercept + slope x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points")
    res = stats.linregress(x, y)
    r2 = float(res.rvalue**2) if np.isfinite(res.rvalue) else 1.0
    return LineFit(float(res.slope), float(res.intercept), r2, float(res.stderr), int(x.size))
