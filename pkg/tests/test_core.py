import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize_scalar

from qfnet.core import (BoxSet, ConfigurationError, PerturbationSchedule, StepSchedule,
                        perturbation_scale, project_box, step_value, stream)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def _clamp_oracle(x, lo, hi):
    # per-coordinate 1-D minimization of (z - x)^2 over [lo, hi]
    return np.array([minimize_scalar(lambda z: (z - v) ** 2, bounds=(lo, hi), method="bounded",
                                     options={"xatol": 1e-12}).x for v in x])


def test_project_box_examples():
    assert np.array_equal(project_box([2.0, -0.5], BoxSet(0, 1, 2)), [1.0, 0.0])
    assert np.array_equal(project_box([0.3, 0.7], BoxSet(0, 1, 2)), [0.3, 0.7])
    x = np.array([1.5, 0.2, -3.0])
    out = project_box(x, BoxSet(-1, 1, 3))
    assert np.array_equal(out, [1.0, 0.2, -1.0])
    np.testing.assert_allclose(out, _clamp_oracle(x, -1, 1), atol=1e-8)


def test_project_box_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        project_box([1.0, 2.0], BoxSet(0, 1, 3))


def test_box_validation():
    with pytest.raises(ConfigurationError):
        BoxSet(1.0, 1.0, 2)
    with pytest.raises(ConfigurationError):
        BoxSet(0.0, 1.0, 0)
    assert BoxSet(-1, 1, 4).diameter == pytest.approx(4.0)


@settings(max_examples=200, deadline=None)
@given(arrays(float, 5, elements=finite), arrays(float, 5, elements=finite))
def test_project_box_idempotent_nonexpansive(x, y):
    X = BoxSet(-1.0, 2.0, 5)
    px, py = project_box(x, X), project_box(y, X)
    assert np.array_equal(project_box(px, X), px)
    assert np.all((px >= -1) & (px <= 2))
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) * (1 + 1e-12) + 1e-300


def test_step_value_examples():
    assert step_value(StepSchedule.power_law(1.0), 0) == 1.0
    assert step_value(StepSchedule.power_law(0.51), 3) == pytest.approx(math.exp(-0.51 * math.log(4)), rel=1e-14)
    # frozen from the log-domain evaluation above
    assert step_value(StepSchedule.power_law(0.51), 3) == pytest.approx(0.4931163522466796, rel=1e-14)
    s = StepSchedule.staircase(50, 0.51)
    assert step_value(s, 49) == 1.0
    assert step_value(s, 50) == 2.0 ** -0.51


def test_step_schedule_rejects_bad_alpha():
    with pytest.raises(ConfigurationError):
        StepSchedule.power_law(0.5)
    with pytest.raises(ConfigurationError):
        StepSchedule.power_law(1.2)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.51, 1.0), st.sampled_from(["power_law", "staircase"]))
def test_step_values_in_unit_interval_and_nonincreasing(alpha, kind):
    s = StepSchedule(kind=kind, alpha=alpha, block=1 if kind == "power_law" else 50)
    b = s(np.arange(5000))
    assert np.all(b > 0) and np.all(b <= 1)
    assert np.all(np.diff(b) <= 0)


def test_step_square_summable_not_summable():
    s = StepSchedule.power_law(0.75)
    b = s(np.arange(2_000_000))
    sq = np.cumsum(b**2)
    lin = np.cumsum(b)
    # squares stabilise, plain sums keep growing
    assert sq[-1] - sq[-1_000_000] < 1e-3
    assert lin[-1] - lin[-1_000_000] > 20


def test_perturbation_scale_examples():
    p = PerturbationSchedule(1e-6, 100)
    assert perturbation_scale(p, 0) == 1e-6
    assert perturbation_scale(p, 250) == pytest.approx(1e-6 / 3, rel=1e-15)
    zero = PerturbationSchedule(0.0, 100)
    assert np.all(zero(np.arange(1000)) == 0)


@pytest.mark.parametrize("horizon", [1, 99, 100, 1000, 12345])
def test_perturbation_partial_sum_bound(horizon):
    p = PerturbationSchedule(1e-6, 100)
    z = p(np.arange(horizon))
    assert np.all(z >= 0) and np.all(np.diff(z) <= 0)
    assert z.sum() <= p.partial_sum_bound(horizon)


def test_perturbation_exponent_makes_summable():
    p = PerturbationSchedule(1.0, 1, exponent=2.0)
    z = p(np.arange(10**6))
    assert z.sum() < math.pi**2 / 6


def test_stream_reproducible_and_independent():
    a = stream(7, 1, 2).random(5)
    b = stream(7, 1, 2).random(5)
    c = stream(7, 1, 3).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
