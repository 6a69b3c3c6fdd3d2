"""Correlation statistics for IQA benchmarks: SROCC, PLCC after a
five-parameter logistic mapping, and Welch's two-sided t-test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class UndefinedStatisticError(ValueError):
    pass


def _pairs(pred, target, min_n: int = 3) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(target, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} predictions vs {y.size} targets")
    if x.size < min_n:
        raise ValueError(f"need at least {min_n} pairs, got {x.size}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("scores must be finite")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedStatisticError("correlation undefined for a constant vector")
    return x, y


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    den = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if den == 0:
        raise UndefinedStatisticError("correlation undefined for a constant vector")
    return float(np.clip((xc @ yc) / den, -1.0, 1.0))


def rank_average(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.size)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srocc(pred, target) -> float:
    x, y = _pairs(pred, target)
    return _pearson(rank_average(x), rank_average(y))


def logistic5(x, b) -> np.ndarray:
    b1, b2, b3, b4, b5 = b
    z = np.clip(b2 * (np.asarray(x) - b3), -700, 700)
    return b1 * (0.5 - 1.0 / (1.0 + np.exp(z))) + b4 * x + b5


def _logistic_jacobian(x, b) -> np.ndarray:
    b1, b2, b3, _, _ = b
    z = np.clip(b2 * (x - b3), -700, 700)
    s = 1.0 / (1.0 + np.exp(-z))  # d/dz of -1/(1+e^z) is s(1-s)
    ds = s * (1 - s)
    return np.column_stack([
        0.5 - 1.0 / (1.0 + np.exp(z)),
        b1 * ds * (x - b3),
        -b1 * ds * b2,
        x,
        np.ones_like(x),
    ])


@dataclass
class LogisticFit:
    beta: np.ndarray
    sse: float
    iterations: int
    converged: bool

    def __call__(self, x):
        return logistic5(np.asarray(x, dtype=np.float64), self.beta)


def logistic_init(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    r = np.corrcoef(x, y)[0, 1]
    sign = 1.0 if not np.isfinite(r) or r >= 0 else -1.0
    sd = x.std()
    return np.array([y.max() - y.min(), sign * 4.0 / sd, np.median(x), 0.0, y.mean()])


def logistic_fit(pred, target, max_iter: int = 500, rtol: float = 1e-10) -> LogisticFit:
    """Least-squares fit of the 5-parameter logistic by Levenberg-Marquardt."""
    x, y = _pairs(pred, target, min_n=5)
    beta = logistic_init(x, y)
    r = y - logistic5(x, beta)
    sse = float(r @ r)
    lam = 1e-3
    floor = 1e-30 * max(float(y @ y), 1e-300)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _logistic_jacobian(x, beta)
        A = J.T @ J
        g = J.T @ r
        improved = False
        while lam < 1e16:
            step = np.linalg.lstsq(A + lam * np.diag(np.diag(A) + 1e-12), g, rcond=None)[0]
            cand = beta + step
            rc = y - logistic5(x, cand)
            sc = float(rc @ rc)
            if np.isfinite(sc) and sc <= sse:
                improved = True
                break
            lam *= 10
        if not improved:
            converged = True  # no descent direction left at machine precision
            break
        change = (sse - sc) / max(sse, 1e-300)
        beta, r, sse = cand, rc, sc
        lam = max(lam / 10, 1e-12)
        if change < rtol or sse <= floor:
            converged = True
            break
    return LogisticFit(beta, sse, it, converged)


def plcc(pred, target, fitted: bool = True) -> float:
    x, y = _pairs(pred, target)
    if fitted:
        x = logistic_fit(x, y)(x)
        if np.all(x == x[0]):
            raise UndefinedStatisticError("logistic mapping collapsed to a constant")
    return _pearson(x, y)


# ---------------------------------------------------------------------------
# Student t distribution via the regularized incomplete beta function

def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-16) -> float:
    """Continued fraction for I_x(a, b) (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if t == 0:
        return 1.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: float


def ttest_two_sided(sample_a, sample_b) -> TTestResult:
    """Welch's unequal-variance two-sample t-test."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    if va + vb == 0:
        raise UndefinedStatisticError("both samples have zero variance")
    t = diff / math.sqrt(va + vb)
    df = (va + vb) ** 2 / ((va ** 2 / (a.size - 1) if va else 0.0) + (vb ** 2 / (b.size - 1) if vb else 0.0))
    return TTestResult(float(t), t_two_sided_p(float(t), float(df)), float(df))
