"""Box-Cox power transform with maximum-likelihood lambda selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveError, OutOfRangeError

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class BoxCoxTransform:
    lam: float
    fitted_on: str = ""


def _check_positive(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise NonPositiveError("empty input")
    if np.any(y <= 0):
        raise NonPositiveError("all values must be strictly positive")
    return y


def boxcox_apply(y, transform: BoxCoxTransform):
    """(y^lam - 1)/lam for lam != 0, ln y for lam = 0."""
    arr = _check_positive(np.atleast_1d(y))
    lam = transform.lam
    if lam == 0.0:
        out = np.log(arr)
    else:
        out = (np.power(arr, lam) - 1.0) / lam
    return float(out[0]) if np.isscalar(y) or np.ndim(y) == 0 else out


def boxcox_invert(z, transform: BoxCoxTransform):
    """Exact inverse of boxcox_apply."""
    arr = np.asarray(z, dtype=np.float64)
    lam = transform.lam
    if lam == 0.0:
        out = np.exp(arr)
    else:
        base = 1.0 + lam * arr
        if np.any(base <= 0):
            raise OutOfRangeError(f"1 + lam*z <= 0 for lam = {lam}")
        out = np.power(base, 1.0 / lam)
    return float(np.atleast_1d(out)[0]) if np.ndim(z) == 0 else out


def profile_loglik(y: np.ndarray, lam: float) -> float:
    """Profile log-likelihood of the Box-Cox model at a given lambda."""
    n = y.size
    z = boxcox_apply(y, BoxCoxTransform(lam))
    var = float(np.var(z))
    if var <= 0:
        return -np.inf
    return -0.5 * n * np.log(var) + (lam - 1.0) * float(np.sum(np.log(y)))


def fit_boxcox(values, fitted_on: str = "", lo: float = -2.0, hi: float = 2.0,
               grid_step: float = 0.01) -> BoxCoxTransform:
    """Pick lambda by maximizing the profile log-likelihood.

    Coarse grid over [lo, hi], then one golden-section pass around the best
    grid point.
    """
    y = _check_positive(values)
    grid = np.arange(lo, hi + grid_step / 2, grid_step)
    scores = [profile_loglik(y, lam) for lam in grid]
    best = int(np.argmax(scores))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, len(grid) - 1)]
    # golden-section refinement on the bracketing interval
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = profile_loglik(y, c)
    fd = profile_loglik(y, d)
    for _ in range(40):
        if b - a < 1e-8:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = profile_loglik(y, c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = profile_loglik(y, d)
    return BoxCoxTransform(lam=float(0.5 * (a + b)), fitted_on=fitted_on)
