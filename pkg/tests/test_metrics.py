import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from masnet.errors import InvalidArgument
from masnet.metrics import mean_snr_db, snr_db


def sine(n=4000):
    return np.sin(2 * np.pi * 440 * np.arange(n) / 16000)


def noise_with_ratio(clean, ratio, seed=0):
    n = np.random.default_rng(seed).normal(size=clean.shape)
    return n * np.sqrt(ratio * np.sum(clean ** 2) / np.sum(n ** 2))


def test_perfect_is_capped():
    r = snr_db(sine(), sine())
    assert r.snr_db == 120.0 and r.clipped


def test_equal_energy_is_zero_db():
    c = sine()
    r = snr_db(c, c + noise_with_ratio(c, 1.0))
    assert r.snr_db == pytest.approx(0.0, abs=1e-9) and not r.clipped


def test_ten_db():
    c = sine()
    assert snr_db(c, c + noise_with_ratio(c, 0.1)).snr_db == pytest.approx(10.0, abs=1e-6)


def test_errors():
    with pytest.raises(InvalidArgument):
        snr_db(np.ones(3), np.ones(4))
    with pytest.raises(InvalidArgument):
        snr_db(np.zeros(3), np.ones(3))
    with pytest.raises(InvalidArgument):
        mean_snr_db([])


def test_mean_is_unweighted():
    c1, c2 = sine(1000), sine(8000)
    pairs = [(c1, c1 + noise_with_ratio(c1, 0.1)), (c2, c2 + noise_with_ratio(c2, 1.0))]
    assert mean_snr_db(pairs) == pytest.approx(5.0, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1e3, 1e3).filter(lambda a: abs(a) > 1e-3), st.integers(0, 100))
def test_scale_invariance(a, seed):
    c = sine(500)
    n = noise_with_ratio(c, 0.3, seed)
    assert abs(snr_db(a * c, a * c + a * n).snr_db - snr_db(c, c + n).snr_db) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(1.01, 100.0), st.integers(0, 100))
def test_monotone_in_residual(k, seed):
    c = sine(500)
    n = noise_with_ratio(c, 0.3, seed)
    assert snr_db(c, c + k * n).snr_db < snr_db(c, c + n).snr_db
