import os
import subprocess
import sys

import numpy as np
import pytest

from pedfuse import _gru_py, kernels
from pedfuse import layers as L
from pedfuse import tensor as tn

needs_ext = pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled extension not built")


def _problem(rng, B=3, T=7, I=5, H=4):
    return (
        rng.normal(size=(B, T, I)), rng.normal(size=(B, H)), 0.5 * rng.normal(size=(3 * H, I)),
        0.5 * rng.normal(size=(3 * H, H)), 0.1 * rng.normal(size=3 * H),
    )


@needs_ext
@pytest.mark.parametrize("shape", [(1, 1, 1, 1), (3, 7, 5, 4), (2, 16, 12, 9)])
def test_backends_agree(rng, shape):
    B, T, I, H = shape
    xs, h0, W, U, b = _problem(rng, B, T, I, H)
    ext = kernels.BACKENDS["cython"]
    fwd_py = _gru_py.gru_forward(xs, h0, W, U, b)
    fwd_c = ext.gru_forward(xs, h0, W, U, b)
    for a, c in zip(fwd_py, fwd_c):
        np.testing.assert_allclose(c, a, rtol=0, atol=1e-13)
    ghs = rng.normal(size=(B, T, H))
    back_py = _gru_py.gru_backward(xs, h0, *fwd_py, W, U, ghs)
    back_c = ext.gru_backward(xs, h0, *fwd_c, W, U, ghs)
    for a, c in zip(back_py, back_c):
        np.testing.assert_allclose(c, a, rtol=0, atol=1e-12)


@pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
def test_layer_gradient_under_each_backend(backend, rng):
    before = kernels.BACKEND
    kernels.use_backend(backend)
    try:
        layer = L.GRULayer(3, 4, rng=rng)
        xs = tn.parameter(rng.normal(size=(2, 5, 3)))
        err = tn.finite_diff_check(lambda: tn.sum(L.gru_sequence(layer, xs)), {**dict(layer.named_parameters()), "x": xs})
        assert err < 1e-4
    finally:
        kernels.use_backend(before)


def test_long_double_goes_through_numpy(rng):
    xs, h0, W, U, b = (a.astype(np.longdouble) for a in _problem(rng))
    hs, *_ = kernels.gru_forward(xs, h0, W, U, b)
    assert hs.dtype == np.longdouble


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_pure_python_fallback_selected_by_environment():
    env = {**os.environ, "PEDFUSE_PURE_PYTHON": "1"}
    out = subprocess.run(
        [sys.executable, "-c", "from pedfuse import kernels; print(kernels.BACKEND, sorted(kernels.BACKENDS))"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python ['python']"
