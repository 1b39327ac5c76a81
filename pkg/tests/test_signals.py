import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dpnet import signals as S, streams
from dpnet.errors import EmptyInput, OutOfSupport, UnboundedSensitivity


def test_sampling_deterministic():
    m = S.gaussian_known_var(0, 1)
    a = m.sample(streams.stream(5, "signal", 0), 4)
    b = m.sample(streams.stream(5, "signal", 0), 4)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("mu,sigma", [(10, 1), (1.67, 1.04)])
def test_lognormal_positive(mu, sigma):
    x = S.lognormal_known_var(mu, sigma).sample(streams.stream(0, "signal", 1), 10_000)
    assert np.all(x > 0)


def test_gaussian_mean_stat():
    m = S.gaussian_known_var(3.0, 2.0)
    assert m.mean_stat == 3.0
    x = m.xi(m.sample(streams.stream(1, "signal"), 100_000))
    assert abs(x.mean() - 3.0) <= 5 * 2.0 / math.sqrt(100_000)


class TestGlobalSensitivity:
    def test_gaussian(self):
        assert S.global_sensitivity(S.gaussian_known_var(0, 1)) == 1.0

    def test_lognormal_unbounded(self):
        assert S.is_unbounded(S.global_sensitivity(S.lognormal_known_var(0, 1)))

    def test_lognormal_floor(self):
        assert S.global_sensitivity(S.lognormal_known_var(0, 1, s_min=0.5)) == 2.0

    def test_custom_square(self):
        m = S.custom(lambda s: s**2, lambda s: 2 * s, None, 1 / 3, 4 / 45, support=(0.0, 1.0))
        assert S.global_sensitivity(m) == pytest.approx(2.0, abs=1e-9)

    def test_custom_unbounded_support(self):
        m = S.custom(lambda s: s**2, lambda s: 2 * s, None, 0, 1)
        assert S.is_unbounded(S.global_sensitivity(m))


class TestSmooth:
    def test_closed_form_example(self):
        m = S.lognormal_known_var(0, 1)
        want = 2 * math.log(200) / (math.e * 2)
        assert S.smooth_sensitivity(m, 2.0, 1.0, 0.01) == pytest.approx(want, rel=1e-15)
        assert want == pytest.approx(1.94914, abs=1e-5)

    def test_monotone_decreasing(self):
        m = S.lognormal_known_var(0, 1)
        v = S.smooth_sensitivity(m, np.geomspace(0.01, 1e6, 50), 1.0, 0.01)
        assert np.all(np.diff(v) < 0)

    def test_out_of_support(self):
        with pytest.raises(OutOfSupport):
            S.smooth_sensitivity(S.lognormal_known_var(0, 1), 0.0, 1.0, 0.01)

    def test_bounded_model_uses_global_path(self):
        spec = S.sensitivity_spec(S.gaussian_known_var(0, 1))
        assert spec.kind == "global" and spec.delta_global == 1.0
        assert S.sensitivity_spec(S.lognormal_known_var(0, 1)).kind == "smooth"

    def test_unbounded_without_fallback(self):
        m = S.custom(np.log, lambda s: 1 / s, None, 0, 1, support=(0, math.inf))
        with pytest.raises(UnboundedSensitivity):
            S.sensitivity_spec(m)

    @given(st.floats(0.01, 100), st.floats(0.05, 10), st.floats(1e-4, 0.5))
    def test_numeric_maximiser_matches(self, s, eps, delta):
        # max_k exp(-gamma k) * log((s + k)/s) is bounded by the linearised k/s; the closed form maximises the latter
        gamma = S.smoothing_parameter(eps, delta)
        num = S.smooth_sensitivity_numeric(lambda k: k / s, gamma, 40 / gamma)
        closed = 1 / (math.e * gamma * s)
        assert num == pytest.approx(closed, rel=1e-9)
        assert closed == pytest.approx(S.smooth_sensitivity(S.lognormal_known_var(0, 1), s, eps, delta), rel=1e-12)

    def test_gamma(self):
        assert S.smoothing_parameter(1.0, 0.01) == pytest.approx(1 / (2 * math.log(200)))


class TestTarget:
    def test_small(self):
        assert S.mvue_target([1, 2, 3]) == 2
        assert S.mvue_target([4.5] * 7) == 4.5

    def test_empty(self):
        with pytest.raises(EmptyInput):
            S.mvue_target([])

    def test_clt(self):
        x = streams.stream(11, "signal").standard_normal(1000)
        assert abs(S.mvue_target(x)) <= 4 / math.sqrt(1000)
