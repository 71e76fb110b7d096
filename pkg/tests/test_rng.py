import numpy as np
from scipy import stats

from bbmlab import rng


def test_streams_are_pure_functions():
    a = rng.uniforms(12345, 1000)
    b = rng.uniforms(12345, 1000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, rng.uniforms(12346, 1000))
    # a block starting mid-stream is a slice of the full stream
    assert np.array_equal(rng.uniforms(12345, 10, start=500), a[500:510])


def test_uniforms_open_interval_and_flat():
    u = rng.uniforms(7, 200_000)
    assert u.min() > 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_normals_moments():
    z = rng.normals(99, 200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.01
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_replication_keys_distinct():
    keys = {rng.replication_key(0, i) for i in range(10_000)}
    assert len(keys) == 10_000
    assert rng.replication_key(1, 0) != rng.replication_key(0, 0)
    assert rng.replication_key(5, 17) == rng.replication_key(5, 17)
