import math

import numpy as np
import pytest

from sdstab.filters import make_minimal_filter
from sdstab.quantizer import run_batch_constant
from sdstab.stability import (
    DomainError,
    classical_criterion,
    constant_input_bound,
    gap,
    gap_value,
    lambda0,
    prop_threshold,
    stability_report,
    stabilizing_check,
    theorem_threshold,
    y_star,
)
from sdstab.trajectory import parabola_max, sharp_bound


def test_classical_examples():
    f3 = make_minimal_filter(3)
    assert classical_criterion(f3, 1 / 3)
    assert not classical_criterion(f3, 0.5)
    for k in range(2, 40):
        assert classical_criterion(make_minimal_filter(k), 1 - 2 / k)
    with pytest.raises(DomainError):
        classical_criterion(f3, -0.1)


def test_gap_components():
    M, yt, g = gap(3, 0.7)
    assert M == parabola_max(0.7, 3)
    assert yt == 1 / 3 - 1 + M / 3
    assert g == 0.7 - yt


def test_gap_at_classical_edge():
    for k in range(3, 129):
        assert gap_value(1 - 2 / k, k) > 0.5


@pytest.mark.parametrize("k", [3, 4, 10, 50])
def test_gap_decreasing_and_concave(k):
    ys = np.linspace(1 - 2 / k, 1, 1000, endpoint=False)
    g = np.array([gap_value(y, k) for y in ys])
    assert np.all(np.diff(g) < 0)
    assert np.max(np.diff(g, 2)) <= 1e-9


def test_gap_diverges_near_one():
    for k in (3, 8, 30):
        assert gap_value(1 - 1e-8, k) < -1e3


def test_gap_domain():
    with pytest.raises(DomainError):
        gap(3, 0.2)
    with pytest.raises(DomainError):
        gap(2, 0.5)
    with pytest.raises(DomainError):
        gap(3, 1.0)


def test_y_star_examples():
    assert y_star(3) > 1 - math.e**2 / 16
    assert 1 - math.e**2 / 16 == pytest.approx(0.5382, abs=1e-4)
    assert y_star(19) > 1 - math.e**2 / 400
    assert 1 - math.e**2 / 400 == pytest.approx(0.98153, abs=1e-5)


def test_y_star_root_and_bracket():
    for k in (3, 7, 40, 128):
        ys = y_star(k)
        assert 1 - 2 / k < ys < 1
        assert gap_value(ys, k) >= 0
        assert gap_value(ys + 2e-12, k) < 0
        # the tolerance is on y: |g(y_star)| is at most the slope times the bracket width
        slope = (gap_value(ys - 1e-6, k) - gap_value(ys, k)) / 1e-6
        assert abs(gap_value(ys, k)) <= 2e-12 * slope


def test_y_star_monotone():
    vals = [y_star(k) for k in range(3, 65)]
    assert np.all(np.diff(vals) > 0)


def test_y_star_above_theorem_threshold():
    for k in range(3, 129):
        assert y_star(k) > theorem_threshold(k)


def test_stabilizing_check_examples():
    for k in (3, 6, 20):
        assert stabilizing_check(k, 1 - 2 / k + 1e-6)
        assert stabilizing_check(k, y_star(k))
        assert not stabilizing_check(k, (1 + y_star(k)) / 2)


def test_stabilizing_equivalence_on_grid():
    for k in (3, 5, 12):
        for y in np.linspace(1 - 2 / k + 1e-9, 1 - 1e-9, 300):
            assert stabilizing_check(k, y) == (gap_value(y, k) >= 0)


def test_constant_input_bound_examples():
    assert constant_input_bound(3, 0.3) == 1.0
    assert constant_input_bound(3, 0.5) == parabola_max(0.5, 3)
    y10 = 1 - math.e**2 / 121
    assert y10 == pytest.approx(0.9389, abs=1e-4)
    assert constant_input_bound(10, y10) == parabola_max(y10, 10)
    with pytest.raises(DomainError):
        constant_input_bound(3, 0.6)
    with pytest.raises(DomainError):
        constant_input_bound(3, 0.0)


@pytest.mark.parametrize("k,y", [(3, 0.5), (10, 1 - math.e**2 / 121)])
def test_constant_input_bound_simulated(k, y):
    rng = np.random.default_rng(11)
    bound = constant_input_bound(k, y)
    lo, hi = run_batch_constant(make_minimal_filter(k), rng.uniform(-1, 1, (100, k + 1)), y, 100_000)
    assert lo.min() >= -1 and hi.max() <= bound


def test_sharp_mode():
    ys = y_star(3)
    assert constant_input_bound(3, ys, sharp=True) == sharp_bound(3, ys)
    assert constant_input_bound(3, 0.6, sharp=True) <= parabola_max(0.6, 3)
    with pytest.raises(DomainError):
        constant_input_bound(3, ys + 1e-6, sharp=True)


def test_lambda0_examples():
    expected = 16 * math.e * 0.5 / (3 * 0.5 * (1 - math.e**2 / 16 - 0.5))
    assert lambda0(3, 0.5) == pytest.approx(expected, rel=1e-15)
    assert lambda0(3, 0.5) == pytest.approx(379.67, abs=0.01)
    with pytest.raises(DomainError):
        lambda0(3, 0.6)
    with pytest.raises(DomainError):
        lambda0(3, 0.0)


def test_prop_threshold_classical_is_zero():
    assert prop_threshold(5, 0.5) == 0.0


def test_lambda0_dominates_prop_threshold():
    for k in (3, 4, 6, 10, 19, 40):
        thr = theorem_threshold(k)
        for f in np.linspace(1 - 2 / k + 1e-3, thr - 1e-3, 12):
            assert lambda0(k, f) >= prop_threshold(k, f), (k, f)


def test_report_regimes():
    r = stability_report(3, 0.3)
    assert r.regime == "classical" and r.M == 1.0 and r.classical_ok
    r = stability_report(3, 0.6)
    assert r.regime == "gap-stable" and r.M == parabola_max(0.6, 3) and r.lambda0 is None
    assert r.gap == r.y - r.y_tilde
    r = stability_report(3, 0.8)
    assert r.regime == "unstable-region" and r.gap < 0
    assert set(r.to_dict()) >= {"k", "y", "M", "M_sharp", "y_tilde", "gap", "y_star", "lambda0", "classical_ok", "regime"}
