import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semmec.compute import (
    es_energy,
    es_energy_shares,
    gpu_capability,
    local_compute_latency,
    server_latency,
    task_energy,
    task_latency,
    ue_energy,
)
from semmec.config import ComputeProfile


@pytest.mark.parametrize(
    "cores,clock,expected",
    [(1280, 1.5e9, 3.84e12), (65536, 2.2e9, 2.8835840e14), (1, 1.0, 2.0)],
)
def test_gpu_capability(cores, clock, expected):
    assert gpu_capability(ComputeProfile(cores=cores, flops_per_cycle=2.0), clock) == pytest.approx(expected, rel=1e-12)


def test_local_latency_examples():
    c = 3.84e12
    assert local_compute_latency(1, 1.0, 3.84e9, 1.92e9, 1.0, c) == 0.0
    assert local_compute_latency(0, 1.0, 3.84e9, 1.92e9, 1.0, c) == pytest.approx(1e-3, rel=1e-12)
    assert local_compute_latency(1, 0.5, 3.84e9, 1.92e9, 1.0, c) == pytest.approx(1e-3, rel=1e-12)
    # halving mu doubles the extraction cost
    assert local_compute_latency(1, 0.25, 3.84e9, 1.92e9, 1.0, c) == pytest.approx(2e-3, rel=1e-12)


def test_local_latency_rejects_zero_capability():
    with pytest.raises(ValueError):
        local_compute_latency(0, 1.0, 1e9, 1e8, 1.0, 0.0)


def test_server_latency_examples():
    assert server_latency([], 2.88e14) == 0.0
    assert server_latency([2.88e11], 2.88e14) == pytest.approx(1e-3, rel=1e-12)
    assert server_latency([1e11, 2e11], 3e14) == pytest.approx(1e-3, rel=1e-12)


def test_task_latency_examples():
    assert task_latency(0, 0.0, 1e-3, 0.0) == pytest.approx(1e-3)
    assert task_latency(1, 0.05, 0.0, 0.001) == pytest.approx(0.051, rel=1e-12)
    assert task_latency(1, 0.025, 1e-3, 1e-3) == pytest.approx(0.027, rel=1e-12)


def test_energy_examples():
    assert ue_energy(1e-26, 1e-3, 1.5e9, 0.0, 0.0) == pytest.approx(0.03375, rel=1e-12)
    assert ue_energy(1e-26, 0.0, 1.5e9, 90.0, 0.05) == pytest.approx(4.5e-3, rel=1e-12)
    assert ue_energy(0.0, 0.0, 0.0, 0.0, 0.0) == 0.0
    assert es_energy(1.2e-26, 0.0, 2.2e9) == 0.0
    assert es_energy(1.2e-26, 1e-3, 2.2e9) == pytest.approx(1.2e-26 * 1e-3 * 1.0648e28, rel=1e-12)
    assert es_energy(1.2e-26, 2e-3, 2.2e9) == pytest.approx(2 * es_energy(1.2e-26, 1e-3, 2.2e9), rel=1e-14)
    assert task_energy(0.03375, 0.0) == pytest.approx(0.03375)
    assert task_energy(0.0045, 0.1278) == pytest.approx(0.1323, rel=1e-12)
    assert task_energy(0.0, 0.0) == 0.0


def test_es_shares_full_mode_charges_everyone():
    shares = es_energy_shares(0.3, np.array([1.0, 2.0, 3.0]), np.array([True, False, True]), mode="full")
    assert shares.tolist() == [0.3, 0.0, 0.3]


@given(
    loads=st.lists(st.floats(1e6, 1e12), min_size=1, max_size=6),
    mask=st.lists(st.booleans(), min_size=6, max_size=6),
    total=st.floats(0.0, 10.0),
)
def test_es_shares_conserve_total(loads, mask, total):
    loads = np.array(loads)
    off = np.array(mask[: loads.size])
    shares = es_energy_shares(total, loads, off)
    assert np.all(shares[~off] == 0)
    expected = total if off.any() else 0.0
    assert shares.sum() == pytest.approx(expected, rel=1e-12, abs=1e-300)


@given(mu=st.floats(0.1, 0.999), dmu=st.floats(1e-4, 0.5))
def test_extraction_cost_falls_as_mu_grows(mu, dmu):
    hi = min(mu + dmu, 0.9999)
    a = local_compute_latency(1, mu, 1e9, 1e8, 1.0, 1e12)
    b = local_compute_latency(1, hi, 1e9, 1e8, 1.0, 1e12)
    assert b <= a
    # mu = 1 drops extraction entirely
    assert local_compute_latency(1, 1.0, 1e9, 1e8, 1.0, 1e12) == 0.0


@given(
    t_u=st.floats(1e-6, 1.0),
    f=st.floats(1e8, 3e9),
    p=st.floats(1.0, 100.0),
    t_tx=st.floats(1e-6, 1.0),
    scale=st.floats(1.01, 3.0),
)
def test_ue_energy_strictly_increasing(t_u, f, p, t_tx, scale):
    base = ue_energy(1e-26, t_u, f, p, t_tx)
    assert base >= 0
    assert ue_energy(1e-26, t_u * scale, f, p, t_tx) > base
    assert ue_energy(1e-26, t_u, f * scale, p, t_tx) > base
    assert ue_energy(1e-26, t_u, f, p * scale, t_tx) > base
    assert ue_energy(1e-26, t_u, f, p, t_tx * scale) > base
