import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kactransport.rng import RandomStream, SeedSpec, derive_stream, stream_id


def test_same_spec_same_draws():
    a = RandomStream(SeedSpec(7, 3)).uniform(100)
    b = derive_stream(SeedSpec(7, 3)).uniform(100)
    assert np.array_equal(a, b)


def test_distinct_streams_differ():
    a = RandomStream(SeedSpec(7, 3)).uniform(100)
    b = RandomStream(SeedSpec(7, 4)).uniform(100)
    c = RandomStream(SeedSpec(8, 3)).uniform(100)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stream_id_layout():
    sid = stream_id("family", 12)
    assert sid & 0xFFFFFFFF == 12
    assert sid >> 32 == stream_id("family", 0) >> 32
    assert stream_id("family", 1) != stream_id("lemma31", 1)
    with pytest.raises(ValueError):
        stream_id("x", -1)
    with pytest.raises(ValueError):
        stream_id("x", 1 << 32)


@pytest.mark.parametrize("bad", [-1, 1 << 64, 1.5, "3"])
def test_seed_spec_rejects_non_u64(bad):
    with pytest.raises(ValueError):
        SeedSpec(bad, 0)
    with pytest.raises(ValueError):
        SeedSpec(0, bad)


def test_variate_ranges_and_means():
    s = RandomStream(SeedSpec(1, 1))
    u = s.uniform(200_000)
    assert u.min() >= 0 and u.max() < 1
    e = s.exponential(4.0, 200_000)
    assert e.min() >= 0
    assert abs(e.mean() - 0.25) < 3 * 0.25 / np.sqrt(e.size) * 1.5
    signs = s.signs(100_000)
    assert set(np.unique(signs)) == {-1, 1}
    assert abs(signs.mean()) < 0.02
    assert s.bernoulli(0.0, 10).sum() == 0
    assert s.bernoulli(1.0, 10).sum() == 10


@pytest.mark.parametrize("rate", [0.0, -1.0, float("inf"), float("nan")])
def test_exponential_rate_validated(rate):
    with pytest.raises(ValueError):
        RandomStream(SeedSpec(1, 1)).exponential(rate, 3)


def test_bernoulli_p_validated():
    with pytest.raises(ValueError):
        RandomStream(SeedSpec(1, 1)).bernoulli(1.5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), sid=st.integers(0, 2**64 - 1))
def test_streams_are_pure_functions_of_the_spec(seed, sid):
    a = RandomStream(SeedSpec(seed, sid)).normal(5)
    b = RandomStream(SeedSpec(seed, sid)).normal(5)
    assert np.array_equal(a, b)


def test_exponential_and_bernoulli_means_at_scale():
    s = RandomStream(SeedSpec(1, 0))
    e = s.exponential(2.0, 1_000_000)
    assert abs(e.mean() - 0.5) <= 3 * e.std() / np.sqrt(e.size)
    b = s.bernoulli(0.5, 1_000_000)
    assert abs(b.mean() - 0.5) <= 3 * 0.5 / np.sqrt(b.size)


def test_first_uniforms_repeat():
    a = RandomStream(SeedSpec(1, 0)).uniform(100)
    assert np.array_equal(a, RandomStream(SeedSpec(1, 0)).uniform(100))


def test_cross_stream_correlation():
    n = 100_000
    a = RandomStream(SeedSpec(1, stream_id("a", 0))).uniform(n)
    b = RandomStream(SeedSpec(1, stream_id("a", 1))).uniform(n)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / np.sqrt(n)


def test_exponential_ks():
    from scipy import stats
    x = RandomStream(SeedSpec(2, 0)).exponential(3.0, 10_000)
    assert stats.kstest(x, lambda v: 1 - np.exp(-3.0 * v)).pvalue >= 0.01
