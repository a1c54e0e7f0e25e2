import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from errors import (ConstantInput, DegenerateControl, InsufficientData, LengthMismatch,
                    NonFiniteInput, SignalTooShort, SolverFailure, WindowOutOfRange, WindowTooLarge,
                    ZeroVariance)
from models import CorrResult, LagResult, TTestResult

logger = logging.getLogger(__name__)

# |r| this close to 1 counts as a perfectly collinear control
DEGENERATE_TOL = 1e-12
TIME_TOL = 1e-9


def t_two_sided_p(t, df):
    """Two-sided tail probability of Student's t via the regularized incomplete beta"""
    if not np.isfinite(t):
        return 0.0
    p = special.betainc(df / 2.0, 0.5, df / (df + t * t))
    return float(np.clip(p, 0.0, 1.0))


def _as_pair(x, y, min_n):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y):
        raise LengthMismatch(f"Vectors differ in length: {len(x)} vs {len(y)}")
    if len(x) < min_n:
        raise InsufficientData(f"Need at least {min_n} samples, got {len(x)}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NonFiniteInput("Correlation inputs contain NaN or infinite values")
    return x, y


def _r(x, y):
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    sxy = np.dot(dx, dy)
    if not np.isfinite([sxx, syy, sxy]).all():
        raise SolverFailure("Correlation sums overflowed")
    if np.ptp(x) == 0 or sxx == 0:
        raise ConstantInput("First vector has zero variance")
    if np.ptp(y) == 0 or syy == 0:
        raise ConstantInput("Second vector has zero variance")
    return float(np.clip(sxy / (np.sqrt(sxx) * np.sqrt(syy)), -1.0, 1.0))


def _corr_result(r, n, df):
    if abs(r) >= 1.0:
        return CorrResult(r=r, n=n, p=0.0)
    t = r * np.sqrt(df / (1.0 - r * r))
    return CorrResult(r=r, n=n, p=t_two_sided_p(t, df))


def pearson(x, y):
    """Product-moment correlation with a two-sided t-test p-value (n - 2 df)"""
    x, y = _as_pair(x, y, 3)
    return _corr_result(_r(x, y), len(x), len(x) - 2)


def partial_correlation(x, y, z):
    """Correlation of x and y with the linear influence of z removed (n - 3 df)"""
    x, y = _as_pair(x, y, 4)
    x, z = _as_pair(x, z, 4)
    r_xy = _r(x, y)
    r_xz = _r(x, z)
    r_yz = _r(y, z)
    if abs(r_xz) >= 1 - DEGENERATE_TOL or abs(r_yz) >= 1 - DEGENERATE_TOL:
        raise DegenerateControl(
            f"Control is collinear with an input (r_xz={r_xz:.6f}, r_yz={r_yz:.6f})")
    r = (r_xy - r_xz * r_yz) / np.sqrt((1 - r_xz ** 2) * (1 - r_yz ** 2))
    r = float(np.clip(r, -1.0, 1.0))
    return _corr_result(r, len(x), len(x) - 3)


def _segment_r(a, b):
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt(np.dot(da, da) * np.dot(db, db))
    if denom == 0:
        return np.nan
    return np.dot(da, db) / denom


def cross_correlation_lag(x, y, max_lag=None, fs=1.0):
    """Lag maximising the normalized cross-correlation of x and y.

    Positive lag means y is delayed relative to x, i.e. y[t] ~ x[t - lag].
    Each lag correlates the mean-removed overlapping segments.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y):
        raise LengthMismatch(f"Vectors differ in length: {len(x)} vs {len(y)}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NonFiniteInput("Cross-correlation inputs contain NaN or infinite values")
    n = len(x)
    if max_lag is None:
        max_lag = (n - 1) // 2
    max_lag = int(max_lag)
    if max_lag < 0 or n <= 2 * max_lag:
        raise SignalTooShort(f"Cross-correlation over +/-{max_lag} lags needs > {2 * max_lag} "
                             f"samples, got {n}")

    lags = np.arange(-max_lag, max_lag + 1)
    corr = np.empty(len(lags))
    for i, k in enumerate(lags):
        if k >= 0:
            corr[i] = _segment_r(x[:n - k], y[k:])
        else:
            corr[i] = _segment_r(x[-k:], y[:n + k])

    if np.all(np.isnan(corr)):
        raise ConstantInput("Cross-correlation undefined at every lag")
    best = int(np.nanargmax(corr))
    lag = int(lags[best])
    return LagResult(lag_samples=lag, lag_seconds=lag / fs, peak_corr=float(corr[best]),
                     max_lag=max_lag)


def rolling_correlation(x, y, window):
    """Pearson r over each window [k, k + window); zero-variance windows are NaN"""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y):
        raise LengthMismatch(f"Vectors differ in length: {len(x)} vs {len(y)}")
    window = int(window)
    if window < 3:
        raise InsufficientData(f"Rolling window must be >= 3 samples, got {window}")
    if window > len(x):
        raise WindowTooLarge(f"Window of {window} samples exceeds series of {len(x)}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NonFiniteInput("Rolling correlation inputs contain NaN or infinite values")

    xw = sliding_window_view(x, window)
    yw = sliding_window_view(y, window)
    dx = xw - xw.mean(axis=1, keepdims=True)
    dy = yw - yw.mean(axis=1, keepdims=True)
    sxx = np.einsum('ij,ij->i', dx, dx)
    syy = np.einsum('ij,ij->i', dy, dy)
    sxy = np.einsum('ij,ij->i', dx, dy)

    flat = (np.ptp(xw, axis=1) == 0) | (np.ptp(yw, axis=1) == 0)
    with np.errstate(invalid='ignore', divide='ignore'):
        r = sxy / np.sqrt(sxx * syy)
    r[flat] = np.nan
    return np.clip(r, -1.0, 1.0)


def peak_in_window(series, fs, tmin, window, mode='max'):
    """Latency and value of the peak inside [lo, hi] seconds; ties go to the earliest"""
    series = np.asarray(series, dtype=float).ravel()
    lo, hi = window
    times = tmin + np.arange(len(series)) / fs
    if len(series) == 0 or lo < times[0] - TIME_TOL or hi > times[-1] + TIME_TOL or lo > hi:
        raise WindowOutOfRange(
            f"Window ({lo}, {hi}) s outside series span "
            f"({times[0] if len(times) else tmin}, {times[-1] if len(times) else tmin}) s")

    idx = np.flatnonzero((times >= lo - TIME_TOL) & (times <= hi + TIME_TOL))
    if idx.size == 0:
        raise WindowOutOfRange(f"No samples fall inside ({lo}, {hi}) s")

    if mode == 'max':
        scores = series[idx]
    elif mode == 'absmax':
        scores = np.abs(series[idx])
    else:
        raise ValueError(f"Unknown peak mode {mode!r}")
    if np.all(np.isnan(scores)):
        raise WindowOutOfRange(f"Series is undefined throughout ({lo}, {hi}) s")

    best = idx[int(np.nanargmax(scores))]
    return float(times[best]), float(series[best])


def one_sample_ttest(values, mu0=0.0):
    """Two-sided one-sample t-test (n - 1 df)"""
    values = np.asarray(values, dtype=float).ravel()
    n = len(values)
    if n < 2:
        raise InsufficientData(f"t-test needs at least 2 values, got {n}")
    if not np.isfinite(values).all():
        raise NonFiniteInput("t-test values contain NaN or infinite values")
    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    if sd == 0:
        raise ZeroVariance("t-test values have zero variance")
    t = (mean - mu0) / (sd / np.sqrt(n))
    return TTestResult(t=float(t), p=t_two_sided_p(t, n - 1), mean=mean, sd=sd, n=n)
