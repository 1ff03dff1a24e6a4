import numpy as np
import pytest
from hypothesis import given, strategies as st

from ana import quantizer as qz


def test_ternary_values():
    f = qz.ternary()
    assert f(0.0) == 0.0
    assert f(-0.5) == 0.0  # boundary takes the upper level
    assert f(-0.7) == -1.0
    assert f(2.0) == 1.0
    assert f(0.5) == 1.0


def test_strict_variant_takes_lower_level():
    f = qz.ternary(closed=False)
    assert f(-0.5) == -1.0
    assert f(0.5) == 0.0
    assert f(0.4) == 0.0


def test_heaviside_eval():
    assert qz.heaviside_eval(0.0, -1.0, 1.0, 0.3) == 1.0
    assert qz.heaviside_eval(0.0, 0.0, 1.0, 0.0) == 1.0
    assert qz.heaviside_eval(0.5, -1.0, 1.0, 0.4) == -1.0
    with pytest.raises(ValueError):
        qz.heaviside(0.0, 1.0, 1.0)


def test_quantize_tensor():
    f = qz.ternary()
    np.testing.assert_array_equal(qz.quantize_tensor(f, [-0.8, 0.1, 0.9]), [-1, 0, 1])
    np.testing.assert_array_equal(qz.quantize_tensor(f, [-0.5, 0.5]), [0, 1])


def test_idempotent_on_grid():
    grid = np.round(np.arange(-2.0, 2.0 + 5e-4, 1e-3), 3)
    for f in (qz.ternary(), qz.sign()):
        once = qz.quantize_tensor(f, grid)
        np.testing.assert_array_equal(qz.quantize_tensor(f, once), once)


@pytest.mark.parametrize("th, lv", [((0.0, 0.0), (0, 1, 2)), ((1.0, 0.0), (0, 1, 2)),
                                    ((0.0,), (1.0, 1.0)), ((0.0,), (0.0, 1.0, 2.0)),
                                    ((np.nan,), (0.0, 1.0))])
def test_invalid_staircases(th, lv):
    with pytest.raises(ValueError):
        qz.MultiStepFn(th, lv)


def test_shape_and_scalar_handling():
    f = qz.ternary()
    assert isinstance(f(0.3), float)
    x = np.linspace(-1, 1, 12).reshape(3, 4)
    assert f(x).shape == (3, 4)


@st.composite
def staircases(draw):
    k = draw(st.integers(1, 5))
    th = sorted(draw(st.lists(st.floats(-5, 5), min_size=k, max_size=k, unique=True)))
    steps = draw(st.lists(st.floats(0.1, 3), min_size=k, max_size=k))
    q0 = draw(st.floats(-3, 3))
    lv = np.concatenate([[q0], q0 + np.cumsum(steps)])
    return qz.MultiStepFn(tuple(th), tuple(lv))


@given(staircases(), st.lists(st.floats(-10, 10), min_size=2, max_size=30))
def test_monotone_and_valued_in_levels(f, xs):
    xs = np.sort(np.asarray(xs))
    v = f(xs)
    assert np.all(np.diff(v) >= 0)
    assert np.all(np.isin(v, f.levels))


@given(staircases(), st.floats(-10, 10))
def test_matches_heaviside_sum(f, x):
    ref = f.levels[0] + sum(dq * (x >= t) for t, dq in zip(f.thresholds, f.jumps))
    assert f(x) == pytest.approx(ref, abs=1e-12)
