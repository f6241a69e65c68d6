import math

import numpy as np
import pytest

from dcgaze.geometry import (
    GazeDirection,
    UnitVector3,
    angular_error,
    gaze_l1_difference,
    pitch_yaw_to_unit_vector,
)


def test_zero_angles_point_into_camera():
    v = pitch_yaw_to_unit_vector(GazeDirection(0.0, 0.0))
    assert (v.x, v.y, v.z) == pytest.approx((0.0, 0.0, -1.0), abs=1e-12)


def test_pure_pitch():
    v = pitch_yaw_to_unit_vector(GazeDirection(math.pi / 2, 0.0))
    assert (v.x, v.y, v.z) == pytest.approx((0.0, -1.0, 0.0), abs=1e-12)


def test_unit_vector_matches_trig_oracle():
    # frozen from an independent evaluation of the stated trig formula
    v = pitch_yaw_to_unit_vector(GazeDirection(0.3, -0.4))
    assert v.x == pytest.approx(0.3720255519422596, abs=1e-12)
    assert v.y == pytest.approx(-0.29552020666133955, abs=1e-12)
    assert v.z == pytest.approx(-0.879923176281257, abs=1e-12)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        GazeDirection(float("nan"), 0.0)
    with pytest.raises(ValueError):
        GazeDirection(0.0, float("inf"))


def test_unit_vector_norm_property():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        p = rng.uniform(-math.pi / 2, math.pi / 2)
        y = rng.uniform(-math.pi, math.pi)
        v = pitch_yaw_to_unit_vector(GazeDirection(p, y))
        assert abs(v.x ** 2 + v.y ** 2 + v.z ** 2 - 1.0) < 1e-9


def test_angular_error_identical_is_zero():
    g = GazeDirection(0.2, 0.1)
    assert angular_error(g, g) == pytest.approx(0.0, abs=1e-9)


def test_angular_error_quarter_turn():
    assert angular_error(GazeDirection(0, 0), GazeDirection(0, math.pi / 2)) == \
        pytest.approx(90.0, abs=1e-9)


def test_angular_error_antipodal():
    assert angular_error(GazeDirection(0, 0), GazeDirection(0, math.pi)) == \
        pytest.approx(180.0, abs=1e-9)


def test_angular_error_symmetric_nonnegative():
    rng = np.random.default_rng(11)
    for _ in range(200):
        a = GazeDirection(rng.uniform(-1.2, 1.2), rng.uniform(-2, 2))
        b = GazeDirection(rng.uniform(-1.2, 1.2), rng.uniform(-2, 2))
        e = angular_error(a, b)
        assert 0 <= e <= 180
        assert e == pytest.approx(angular_error(b, a), abs=1e-9)


def test_l1_difference_worked_example():
    d = gaze_l1_difference(GazeDirection(0.54, -0.20), GazeDirection(0.24, -0.43))
    assert d == pytest.approx(0.53, abs=1e-12)


def test_l1_difference_zero_iff_equal():
    g = GazeDirection(0.1, -0.7)
    assert gaze_l1_difference(g, g) == 0.0
    assert gaze_l1_difference(GazeDirection(0.1, 0), GazeDirection(0, 0.1)) == \
        pytest.approx(0.2, abs=1e-12)


def test_l1_difference_triangle_inequality():
    rng = np.random.default_rng(3)
    for _ in range(500):
        a, b, c = (GazeDirection(rng.uniform(-1, 1), rng.uniform(-2, 2)) for _ in range(3))
        assert gaze_l1_difference(a, c) <= \
            gaze_l1_difference(a, b) + gaze_l1_difference(b, c) + 1e-12


def test_unit_vector_type_rejects_non_unit():
    with pytest.raises(ValueError):
        UnitVector3(1.0, 1.0, 0.0)


def test_normalized_wraps_yaw():
    g = GazeDirection(0.1, math.pi + 0.2).normalized()
    assert -math.pi <= g.yaw <= math.pi
    assert -math.pi / 2 <= g.pitch <= math.pi / 2
