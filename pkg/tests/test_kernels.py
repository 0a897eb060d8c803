"""The compiled and pure-Python backends must agree bit for bit."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from undercrowd import _pycore, kernels

_core = pytest.importorskip("undercrowd._core")

coords = st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=1, max_size=40)


@settings(max_examples=100, deadline=None)
@given(coords)
def test_depth_backends_agree(pts):
    a = np.array(pts, dtype=np.float64)
    uniq, mult = np.unique(a, axis=0, return_counts=True)
    args = (uniq[:, 0].copy(), uniq[:, 1].copy(), mult.astype(np.int64))
    assert np.array_equal(_core.depth_all(*args), _pycore.depth_all(*args))


@settings(max_examples=50, deadline=None)
@given(coords)
def test_line_side_backends_agree(pts):
    a = np.array(pts, dtype=np.float64)
    uniq, mult = np.unique(a, axis=0, return_counts=True)
    args = (uniq[:, 0].copy(), uniq[:, 1].copy(), mult.astype(np.int64))
    for u, v in zip(_core.line_side_weights(*args), _pycore.line_side_weights(*args)):
        assert np.array_equal(u, v)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 4), st.integers(1, 8))
def test_tree_backends_agree(seed, mtry, min_leaf):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(120, 4)), 1)  # rounding creates ties
    y = X[:, 0] - (X[:, 1] > 0) + 0.1 * rng.normal(size=120)
    w = rng.uniform(0.0, 1.0, size=120)
    a = _core.grow_tree(X, y, w, mtry, min_leaf, -1, seed)
    b = _pycore.grow_tree(X, y, w, mtry, min_leaf, -1, seed)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)
    roots = np.array([0], dtype=np.int64)
    assert np.array_equal(_core.predict_forest(X, *a, roots), _pycore.predict_forest(X, *b, roots))


def test_dispatch_exposes_a_backend():
    assert kernels.BACKEND in ("cython", "python")
    assert callable(kernels.depth_all)


def test_pure_python_switch(monkeypatch):
    import importlib

    monkeypatch.setenv("UNDERCROWD_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("UNDERCROWD_PURE_PYTHON")
        importlib.reload(kernels)


def test_splitmix_reference_values():
    # first outputs of SplitMix64 seeded with 0, from the reference C implementation
    g = _pycore.SplitMix64(0)
    assert [g.next() for _ in range(3)] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
