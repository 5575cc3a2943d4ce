import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semmec.channel import (
    ChannelAssignment,
    ChannelState,
    UnreachableServer,
    channel_gain,
    offload_rate,
    sample_fading,
    transmission_latency,
)

pos = st.floats(1e-6, 1e6, allow_nan=False)


def test_fading_is_seed_deterministic():
    a = sample_fading(np.random.default_rng(42), 2, 2)
    b = sample_fading(np.random.default_rng(42), 2, 2)
    assert a.shape == (2, 2)
    assert np.array_equal(a, b)


def test_fading_is_unit_mean_exponential():
    draws = sample_fading(np.random.default_rng(0), 1000, 1000).ravel()
    assert abs(draws.mean() - 1.0) < 0.01
    # CDF of Exp(1) at 1, computed independently
    assert abs(np.mean(draws <= 1.0) - (1.0 - math.exp(-1.0))) < 0.005
    assert draws.min() >= 0


def test_fading_rejects_empty_shape():
    with pytest.raises(ValueError):
        sample_fading(np.random.default_rng(0), 0, 3)


@pytest.mark.parametrize(
    "h_sq,d,alpha,expected",
    [(1.0, 1.0, 3.0, 1.0), (2.0, 10.0, 3.0, 2e-3), (0.0, 100.0, 3.0, 0.0)],
)
def test_channel_gain_examples(h_sq, d, alpha, expected):
    assert channel_gain(h_sq, d, alpha) == pytest.approx(expected, rel=1e-12, abs=0)


def test_channel_gain_rejects_bad_distance():
    with pytest.raises(ValueError):
        channel_gain(1.0, 0.0, 3.0)
    with pytest.raises(ValueError):
        channel_gain(1.0, -5.0, 3.0)


def test_rate_examples():
    assert offload_rate([0, 0], [5.0, 5.0], 90.0, 10e6, 2.0) == 0.0
    # gain * p / noise = 3 -> B log2(4)
    assert offload_rate([0, 1, 0], [0.0, 3.0 * 2.0 / 50.0, 9.0], 50.0, 10e6, 2.0) == pytest.approx(20e6, rel=1e-12)
    assert offload_rate([1], [2.0 / 90.0], 90.0, 10e6, 2.0) == pytest.approx(10e6, rel=1e-12)


def test_transmission_latency_examples():
    assert transmission_latency(0, 1e6, 0.3, 1.0, 0.0) == 0.0
    assert transmission_latency(1, 1e6, 1.0, 1.0, 20e6) == pytest.approx(0.05, rel=1e-12)
    assert transmission_latency(1, 1e6, 0.5, 1.0, 20e6) == pytest.approx(0.025, rel=1e-12)


def test_zero_rate_offload_is_unreachable():
    with pytest.raises(UnreachableServer):
        transmission_latency(1, 1e6, 1.0, 1.0, 0.0)


def test_assignment_invariants():
    ChannelAssignment(np.eye(3, dtype=int))
    with pytest.raises(ValueError):
        ChannelAssignment(np.array([[1, 1], [0, 0]]))  # one channel, two UEs
    with pytest.raises(ValueError):
        ChannelAssignment(np.array([[1, 0], [1, 0]]))  # one UE, two channels
    x = ChannelAssignment.from_choices([1, 1, 0], [True, False, True], 2).x
    assert x.tolist() == [[0, 0, 1], [1, 0, 0]]


def test_channel_state_validation():
    ChannelState(np.ones((2, 2)), np.array([50.0, 60.0]), 3.0, 2.0, 10e6)
    with pytest.raises(ValueError):
        ChannelState(-np.ones((2, 2)), np.array([50.0, 60.0]), 3.0, 2.0, 10e6)
    with pytest.raises(ValueError):
        ChannelState(np.ones((2, 2)), np.array([0.0, 60.0]), 3.0, 2.0, 10e6)


@given(g=pos, p1=pos, p2=pos, g2=pos)
def test_rate_monotone_in_power_and_gain(g, p1, p2, g2):
    lo_p, hi_p = sorted((p1, p2))
    assert offload_rate([1], [g], lo_p, 1e6, 2.0) <= offload_rate([1], [g], hi_p, 1e6, 2.0)
    lo_g, hi_g = sorted((g, g2))
    assert offload_rate([1], [lo_g], p1, 1e6, 2.0) <= offload_rate([1], [hi_g], p1, 1e6, 2.0)


@given(r1=pos, r2=pos, m1=st.floats(0.1, 1.0), m2=st.floats(0.1, 1.0), p_exp=st.floats(0.1, 3.0))
def test_latency_monotone_in_rate_and_mu(r1, r2, m1, m2, p_exp):
    lo_r, hi_r = sorted((r1, r2))
    assert transmission_latency(1, 1e5, m1, p_exp, hi_r) <= transmission_latency(1, 1e5, m1, p_exp, lo_r)
    lo_m, hi_m = sorted((m1, m2))
    assert transmission_latency(1, 1e5, lo_m, p_exp, r1) <= transmission_latency(1, 1e5, hi_m, p_exp, r1)
