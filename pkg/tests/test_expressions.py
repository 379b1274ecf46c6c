"""The restricted expression language for config-defined systems."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alphasde.errors import ConfigError
from alphasde.expressions import parse_expression, system_from_config
from alphasde.model import drift_at, nid_drift, noise_at


def ev(text, x, dim=1):
    fn = parse_expression(text, dim)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    return fn(pts)


class TestParser:
    def test_arithmetic(self):
        assert ev("1 + 2*3", [[0.0]])[0] == 7.0
        assert ev("(1 + 2)*3", [[0.0]])[0] == 9.0
        assert ev("2^3^2", [[0.0]])[0] == 512.0  # right associative
        assert ev("-x^2", [[3.0]])[0] == -9.0
        assert ev("10/4", [[0.0]])[0] == 2.5
        assert ev("2**4", [[0.0]])[0] == 16.0

    def test_functions_and_constants(self):
        assert ev("sin(pi/2)", [[0.0]])[0] == pytest.approx(1.0)
        assert ev("log(e)", [[0.0]])[0] == pytest.approx(1.0)
        assert ev("sqrt(x)", [[4.0]])[0] == 2.0
        assert ev("exp(0)", [[0.0]])[0] == 1.0

    def test_variables(self):
        assert ev("x", [[2.5]])[0] == 2.5
        assert ev("x1", [[2.5]])[0] == 2.5
        pts = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ev("x1*x2", pts, dim=2)
        np.testing.assert_array_equal(out, [2.0, 12.0])

    def test_vectorized_broadcast(self):
        fn = parse_expression("3.5", 1)
        out = fn(np.zeros((4, 1)))
        np.testing.assert_array_equal(out, np.full(4, 3.5))

    def test_rejections(self):
        with pytest.raises(ConfigError):
            parse_expression("x + ", 1)
        with pytest.raises(ConfigError):
            parse_expression("import os", 1)
        with pytest.raises(ConfigError):
            parse_expression("x2", 1)
        with pytest.raises(ConfigError):
            parse_expression("foo(x)", 1)
        with pytest.raises(ConfigError):
            parse_expression("x $ 2", 1)
        with pytest.raises(ConfigError):
            parse_expression("(x", 1)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_matches_numpy_reference(self, a, b):
        pts = np.array([[a, b]])
        got = ev("sin(x1) + cos(x2)*x1 - x2/2", pts, dim=2)
        want = np.sin(a) + np.cos(b) * a - b / 2
        assert got[0] == pytest.approx(want, rel=1e-12, abs=1e-12)


class TestSystemFromConfig:
    def test_temperature_profile_equivalent(self):
        spec = {
            "dim": 1,
            "drift": ["0"],
            "noise": [["sqrt(1 + 0.9*sin(pi*x1))"]],
            "domain": [[0.0, 1.0]],
            "boundary": ["reflecting"],
            "name": "custom-profile",
        }
        sys = system_from_config(spec)
        from alphasde.systems import temperature_profile_1d
        ref = temperature_profile_1d()
        pts = np.linspace(0.1, 0.9, 7).reshape(-1, 1)
        np.testing.assert_allclose(noise_at(sys, pts), noise_at(ref, pts),
                                   rtol=1e-12)
        np.testing.assert_allclose(nid_drift(sys, pts),
                                   nid_drift(ref, pts), rtol=1e-6,
                                   atol=1e-12)
        assert sys.name == "custom-profile"

    def test_2d_system(self):
        spec = {
            "dim": 2,
            "noise_dim": 2,
            "drift": ["-x1", "-x2"],
            "noise": [["1", "0"], ["0", "1 + x1^2/10"]],
            "domain": [[-2, 2], [-2, 2]],
            "boundary": ["reflecting", "reflecting"],
        }
        sys = system_from_config(spec)
        pts = np.array([[1.0, -0.5]])
        np.testing.assert_array_equal(drift_at(sys, pts), [[-1.0, 0.5]])
        assert noise_at(sys, pts)[0, 1, 1] == pytest.approx(1.1)

    def test_strict_keys(self):
        with pytest.raises(ConfigError):
            system_from_config({"dim": 1, "drift": ["0"], "noise": [["1"]],
                                "domain": [[0, 1]],
                                "boundary": ["reflecting"],
                                "fancy": True})
        with pytest.raises(ConfigError):
            system_from_config({"dim": 1, "noise": [["1"]],
                                "domain": [[0, 1]],
                                "boundary": ["reflecting"]})
