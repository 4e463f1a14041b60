import numpy as np
from hypothesis import given, strategies as st
from scipy import stats

from socis import rng

seeds = st.integers(min_value=0, max_value=2 ** 64 - 1)


@given(seeds, st.integers(0, 10 ** 9))
def test_keys_are_pure_functions(seed, i):
    a = rng.path_keys(seed, [i, i + 1])
    b = rng.path_keys(seed, [i + 1])
    assert a[1] == b[0]
    assert a[0] != a[1]


@given(seeds, st.integers(0, 1000), st.integers(1, 7))
def test_rows_do_not_depend_on_batch(seed, step, width):
    keys = rng.path_keys(seed, np.arange(9))
    full = rng.normals(keys, step, width)
    for i in (0, 4, 8):
        np.testing.assert_array_equal(full[i], rng.normals(keys[i:i + 1], step, width)[0])


@given(seeds)
def test_uniforms_in_open_interval(seed):
    u = rng.uniforms(rng.path_keys(seed, np.arange(100)), 3, 5)
    assert np.all(u > 0) and np.all(u < 1)


def test_derive_seed_separates_labels():
    vals = {rng.derive_seed(7, k, i) for k in range(5) for i in range(5)}
    assert len(vals) == 25
    assert rng.derive_seed(7, 1, 2) == rng.derive_seed(7, 1, 2)


def test_normal_moments_and_independence():
    keys = rng.path_keys(11, np.arange(20000))
    z = rng.normals(keys, 0, 5)
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1) < 0.02
    assert stats.kstest(z.ravel(), "norm").pvalue > 1e-3
    c = np.corrcoef(np.hstack([z, rng.normals(keys, 1, 5)]).T)
    assert np.abs(c - np.eye(10)).max() < 0.05
