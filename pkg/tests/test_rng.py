import numpy as np

from citysim import rng


def test_uniform_is_subset_stable():
    ids = np.arange(1000)
    full = rng.uniform(7, "stream", 3, ids)
    part = rng.uniform(7, "stream", 3, ids[500:510])
    assert np.array_equal(full[500:510], part)


def test_uniform_range_and_moments():
    u = rng.uniform(1, "x", 0, np.arange(200_000))
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.003
    assert abs(u.var() - 1 / 12) < 0.001


def test_streams_differ_by_name_day_and_seed():
    ids = np.arange(100)
    base = rng.uniform(1, "a", 0, ids)
    for other in (rng.uniform(1, "b", 0, ids), rng.uniform(1, "a", 1, ids), rng.uniform(2, "a", 0, ids)):
        assert not np.allclose(base, other)


def test_generator_is_reproducible_and_independent():
    a = rng.generator(5, "transmission", 3).random(10)
    b = rng.generator(5, "transmission", 3).random(10)
    c = rng.generator(5, "transmission", 4).random(10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stream_key_is_64_bit():
    k = rng.stream_key(0, "x")
    assert 0 <= k < 2 ** 64
