import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from ranqa.stats import (
    UndefinedStatisticError,
    betainc,
    logistic5,
    logistic_fit,
    plcc,
    rank_average,
    srocc,
    t_two_sided_p,
    ttest_two_sided,
)


def _brute_srocc(x, y):
    """Rank by explicit sorting, ties get the mean position, then Pearson by definition."""
    def ranks(v):
        out = []
        srt = sorted(v)
        for a in v:
            pos = [i + 1 for i, b in enumerate(srt) if b == a]
            out.append(sum(pos) / len(pos))
        return out

    rx, ry = ranks(list(x)), ranks(list(y))
    n = len(rx)
    mx, my = sum(rx) / n, sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den


def test_srocc_basic_cases() -> None:
    assert srocc([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0
    assert srocc([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    assert srocc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)


def test_srocc_matches_brute_force() -> None:
    rng = np.random.default_rng(0)
    done = 0
    while done < 1000:
        n = int(rng.integers(3, 9))
        # small integer range forces ties regularly
        x = rng.integers(0, 5, n).astype(float)
        y = rng.integers(0, 5, n).astype(float)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        assert srocc(x, y) == pytest.approx(_brute_srocc(x, y), abs=1e-12)
        done += 1


def test_rank_average_ties() -> None:
    assert rank_average([3, 1, 3, 2]).tolist() == [3.5, 1.0, 3.5, 2.0]


@pytest.mark.parametrize("x,y", [([1, 1, 1], [1, 2, 3]), ([1, 2, 3], [5, 5, 5])])
def test_constant_vectors_undefined(x, y) -> None:
    with pytest.raises(UndefinedStatisticError):
        srocc(x, y)
    with pytest.raises(UndefinedStatisticError):
        plcc(x, y, fitted=False)


def test_input_validation() -> None:
    with pytest.raises(ValueError):
        srocc([1, 2], [1, 2])
    with pytest.raises(ValueError):
        srocc([1, 2, 3], [1, 2])
    with pytest.raises(ValueError):
        srocc([1, 2, float("nan")], [1, 2, 3])


def test_plcc_unfitted_affine() -> None:
    x = np.linspace(0, 1, 10)
    assert plcc(x, 2 * x + 1, fitted=False) == pytest.approx(1.0, abs=1e-15)
    assert plcc(x, -x, fitted=False) == pytest.approx(-1.0, abs=1e-15)


def test_logistic_recovery_noiseless() -> None:
    x = np.linspace(-3, 3, 50)
    beta = np.array([2.0, 1.5, 0.3, 0.1, 0.5])
    y = logistic5(x, beta)
    fit = logistic_fit(x, y)
    assert fit.sse < 1e-8 * float(y @ y)
    assert fit.converged


def test_plcc_linear_data_fitted() -> None:
    x = np.linspace(0, 5, 30)
    assert plcc(x, 3 * x - 2) == pytest.approx(1.0, abs=1e-9)


def test_plcc_shift_invariant_after_fit() -> None:
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, 40)
    y = np.tanh(3 * (x - 0.5)) + rng.normal(0, 0.05, 40)
    assert plcc(x + 7.0, y) == pytest.approx(plcc(x, y), abs=1e-6)


def test_plcc_fitted_helps_cubic() -> None:
    x = np.linspace(-1, 1, 20)
    y = x ** 3
    assert plcc(x, y, fitted=True) >= plcc(x, y, fitted=False)


def test_logistic_fit_needs_five() -> None:
    with pytest.raises(ValueError):
        logistic_fit([1, 2, 3, 4], [1, 2, 3, 4])


@pytest.mark.parametrize("a,b,x", [(0.5, 0.5, 0.3), (7.5, 0.5, 0.9), (2.0, 3.0, 0.01), (40.0, 0.5, 0.999)])
def test_betainc_against_mpmath(a, b, x) -> None:
    ref = float(mpmath.betainc(a, b, 0, x, regularized=True))
    assert betainc(a, b, x) == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("t,df", [(0.5, 3.0), (2.1, 10.0), (-4.0, 6.5), (12.0, 28.0)])
def test_t_p_value_against_scipy(t, df) -> None:
    assert t_two_sided_p(t, df) == pytest.approx(2 * sps.t.sf(abs(t), df), abs=1e-10)


def test_ttest_identical_samples() -> None:
    r = ttest_two_sided([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert (r.t, r.p) == (0.0, 1.0)


def test_ttest_separated_samples() -> None:
    jitter = np.array([1e-3, -1e-3, 2e-3, -2e-3])
    r = ttest_two_sided(np.zeros(4) + jitter, np.ones(4) - jitter)
    ref = sps.ttest_ind(np.zeros(4) + jitter, np.ones(4) - jitter, equal_var=False)
    assert r.p < 0.01
    assert r.t == pytest.approx(ref.statistic, rel=1e-12)
    assert r.p == pytest.approx(ref.pvalue, rel=1e-8)


def test_ttest_swap_negates_t() -> None:
    a, b = [0.1, 0.4, 0.3, 0.2], [0.5, 0.2, 0.6, 0.7, 0.5]
    r1, r2 = ttest_two_sided(a, b), ttest_two_sided(b, a)
    assert r1.t == -r2.t
    assert r1.p == r2.p


def test_ttest_errors() -> None:
    with pytest.raises(UndefinedStatisticError):
        ttest_two_sided([1, 1], [2, 2])
    with pytest.raises(ValueError):
        ttest_two_sided([1], [2, 3])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-100, 100), min_size=3, max_size=12, unique=True),
       st.integers(0, 2 ** 32 - 1))
def test_srocc_monotone_transform_invariance(x, seed) -> None:
    y = np.random.default_rng(seed).permutation(len(x)).astype(float)
    x = np.array(x, dtype=float)
    base = srocc(x, y)
    assert srocc(np.exp(x / 50), y) == pytest.approx(base, abs=1e-12)
    assert srocc(x, y ** 3 + 2) == pytest.approx(base, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 10), st.floats(-5, 5))
def test_plcc_unfitted_affine_invariance(seed, scale, shift) -> None:
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 10))
    assert plcc(scale * x + shift, y, fitted=False) == pytest.approx(plcc(x, y, fitted=False), abs=1e-9)
