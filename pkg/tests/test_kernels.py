import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ehopt import kernels

backends = ["numpy"] + (["numba"] if kernels.NUMBA_AVAILABLE else [])

vec = st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=12)


def naive_maxplus(a, c, out_len):
    out = np.full(out_len, -np.inf)
    arg = np.full(out_len, -1)
    for j in range(out_len):
        for i in range(len(a)):
            if 0 <= j - i < len(c) and a[i] + c[j - i] > out[j]:
                out[j], arg[j] = a[i] + c[j - i], i
    return out, arg


@pytest.mark.parametrize("backend", backends)
@given(a=vec, c=vec, extra=st.integers(-3, 3))
def test_maxplus_matches_naive(backend, a, c, extra):
    n = max(1, len(a) + len(c) - 1 + extra)
    got = kernels.maxplus_conv(a, c, n, backend=backend)
    want = naive_maxplus(a, c, n)
    assert np.array_equal(got[0], want[0])
    assert np.array_equal(got[1], want[1])


def test_maxplus_ties_go_to_smallest_index():
    out, arg = kernels.maxplus_conv([1.0, 1.0, 1.0], [0.0, 0.0, 0.0], 5, backend="numpy")
    assert list(arg) == [0, 0, 0, 1, 2]


def test_maxplus_neg_inf_gaps():
    c = np.array([0.0, -np.inf, 0.0])
    for b in backends:
        out, arg = kernels.maxplus_conv([0.0], c, 3, backend=b)
        assert out[1] == -np.inf and arg[1] == -1


def naive_serve(need, cap, tol=1e-9):
    T = len(need)
    best = None
    for k in range(T, -1, -1):
        for sub in itertools.combinations(range(T), k):
            p = np.zeros(T)
            p[list(sub)] = need[list(sub)]
            if np.all(np.cumsum(p) <= cap + tol):
                return sub
    return best


@pytest.mark.parametrize("backend", backends)
def test_serve_set_matches_combinations(backend, rng):
    for _ in range(40):
        T = int(rng.integers(1, 9))
        need = rng.uniform(0.1, 2.0, T)
        need[rng.random(T) < 0.1] = np.inf
        cap = np.cumsum(rng.uniform(0, 1.2, T))
        mask, count = kernels.best_serve_set(need, cap, backend=backend)
        sub = naive_serve(need, cap)
        # combinations() yields the lexicographically earliest set of each size first
        assert count == len(sub)
        assert mask == sum(1 << t for t in sub)


def test_backends_agree_on_large_serve_set(rng):
    if len(backends) < 2:
        pytest.skip("numba not installed")
    need = rng.uniform(0.2, 2.0, 18)
    cap = np.cumsum(rng.uniform(0, 1, 18))
    assert kernels.best_serve_set(need, cap, backend="numba") == kernels.best_serve_set(need, cap, backend="numpy")


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.maxplus_conv([0.0], [0.0], backend="cuda")
