"""Two-sided hypothesis tests used by the drift detector, implemented from
first principles (no statistics library).

Special functions (regularized incomplete beta via Lentz's continued
fraction, the asymptotic Kolmogorov distribution, the normal CDF through
``math.erfc``) follow the classic numerical-recipes formulations and are
accurate to far better than the 1e-3 level the detector needs.

Small-sample conventions, fixed here so calibration is reproducible:

* lag-1 autocorrelation: the sample estimator has null mean about ``-1/n``
  and variance about ``(n-2)^2 / (n^2 (n-1))`` for white noise; the
  comparison z-statistic uses both corrections.
* two-sample Kolmogorov-Smirnov: Stephens' effective-sample-size correction
  ``(sqrt(ne) + 0.12 + 0.11/sqrt(ne)) * D``.
"""

from __future__ import annotations

import math

import numpy as np


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_two_sided_p(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz)."""
    max_it = 200
    eps = 3e-14
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_it + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betai(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided p-value of Student's t."""
    if not math.isfinite(t):
        return 0.0
    return betai(df / 2.0, 0.5, df / (df + t * t))


def f_cdf(f: float, d1: float, d2: float) -> float:
    if f <= 0.0:
        return 0.0
    return betai(d1 / 2.0, d2 / 2.0, d1 * f / (d1 * f + d2))


def kolmogorov_q(lam: float) -> float:
    """Asymptotic Kolmogorov survival function Q(lambda)."""
    if lam < 1e-8:
        return 1.0
    total = 0.0
    for j in range(1, 101):
        term = 2.0 * (-1.0) ** (j - 1) * math.exp(-2.0 * j * j * lam * lam)
        total += term
        if abs(term) < 1e-12:
            break
    return min(max(total, 0.0), 1.0)


def ks_cdf_exact(d: float, n: int) -> float:
    """Exact P(D_n < d) for the one-sample Kolmogorov-Smirnov statistic
    (Marsaglia-Tsang-Wang matrix-power algorithm); the asymptotic formula
    over-rejects at the window sizes the detector uses."""
    if d <= 0.0:
        return 0.0
    if d >= 1.0:
        return 1.0
    k = int(math.ceil(n * d))
    h = k - n * d
    m = 2 * k - 1
    H = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i - j + 1 >= 0:
                H[i, j] = 1.0
    for i in range(m):
        H[i, 0] -= h ** (i + 1)
        H[m - 1, i] -= h ** (m - i)
    H[m - 1, 0] += (2 * h - 1) ** m if 2 * h - 1 > 0 else 0.0
    for i in range(m):
        for j in range(m):
            if i - j + 1 > 0:
                for g in range(1, i - j + 2):
                    H[i, j] /= g
    # direct log-scaled matrix powering (window sizes are small)
    power = np.eye(m)
    log_scale = 0.0
    for _ in range(n):
        power = power @ H
        mx = power[k - 1, k - 1]
        if mx > 1e140:
            power /= 1e140
            log_scale += 140.0 * math.log(10.0)
    val = power[k - 1, k - 1]
    if val <= 0.0:
        return 0.0
    log_p = math.lgamma(n + 1) - n * math.log(n) + math.log(val) + log_scale
    return min(1.0, math.exp(log_p))


# ---------------------------------------------------------------------------
# The four detector tests.  Each returns (statistic, p_value).
# ---------------------------------------------------------------------------

def lag1_autocorr(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    xc = x - x.mean()
    denom = float(np.sum(xc * xc))
    if denom <= 0.0:
        return 0.0
    return float(np.sum(xc[:-1] * xc[1:]) / denom)


def _r1_null_var(n: int) -> float:
    return (n - 2.0) ** 2 / (n**2 * (n - 1.0))


def autocorr_test(window: np.ndarray, reference_r1: float, n_ref: int) -> tuple[float, float]:
    """z-test comparing the window's lag-1 autocorrelation against the
    training reference, with white-noise bias and variance corrections."""
    n = len(window)
    rp = lag1_autocorr(window)
    z = ((rp + 1.0 / n) - (reference_r1 + 1.0 / n_ref)) / math.sqrt(
        _r1_null_var(n) + _r1_null_var(n_ref)
    )
    return z, normal_two_sided_p(z)


def ks_2samp(sample: np.ndarray, reference_sorted: np.ndarray) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov test (two-sided by construction).

    For the detector's regime (small window against a large reference) the
    exact finite-n one-sample distribution is used; otherwise Stephens'
    corrected asymptotic."""
    a = np.sort(np.asarray(sample, dtype=float))
    b = reference_sorted
    n1, n2 = len(a), len(b)
    pooled = np.concatenate([a, b])
    cdf1 = np.searchsorted(a, pooled, side="right") / n1
    cdf2 = np.searchsorted(b, pooled, side="right") / n2
    d = float(np.max(np.abs(cdf1 - cdf2)))
    n_small, n_big = min(n1, n2), max(n1, n2)
    if n_small <= 140 and n_big >= 20 * n_small:
        return d, 1.0 - ks_cdf_exact(d, n_small)
    ne = n1 * n2 / (n1 + n2)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    return d, kolmogorov_q(lam)


def variance_f_test(window: np.ndarray, ref_var: float, n_ref: int) -> tuple[float, float]:
    """Two-sided F-test for equality of variances."""
    n = len(window)
    s2 = float(np.var(window, ddof=1))
    if ref_var <= 0.0:
        return math.inf, 0.0
    f = s2 / ref_var
    cdf = f_cdf(f, n - 1, n_ref - 1)
    return f, min(1.0, 2.0 * min(cdf, 1.0 - cdf))


def welch_t_test(
    window: np.ndarray, ref_mean: float, ref_var: float, n_ref: int
) -> tuple[float, float]:
    """Two-sided Welch t-test for equality of means."""
    n = len(window)
    m = float(np.mean(window))
    s2 = float(np.var(window, ddof=1))
    se2 = s2 / n + ref_var / n_ref
    if se2 <= 0.0:
        return 0.0, 1.0
    t = (m - ref_mean) / math.sqrt(se2)
    df = se2**2 / ((s2 / n) ** 2 / (n - 1) + (ref_var / n_ref) ** 2 / (n_ref - 1))
    return t, t_two_sided_p(t, df)
