import os
import subprocess
import sys

import numpy as np
import pytest

from pedmotion import _gru_py, kernels


def random_case(rng, T=7, B=3, H=5):
    x = [rng.normal(size=(T, B, H)) for _ in range(3)]
    W = [rng.normal(0, 0.5, size=(H, H)) for _ in range(3)]
    h0 = rng.uniform(-0.5, 0.5, size=(B, H))
    return x, W, h0


def test_fallback_always_available():
    assert "python" in kernels.available_backends()
    assert kernels.get_backend("python") is _gru_py


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_forward_matches_stepwise_definition(rng):
    (xr, xz, xn), (Wr, Wz, Wh), h0 = random_case(rng)
    hs, r, z, n = kernels.gru_forward(xr, xz, xn, Wr, Wz, Wh, h0, backend="python")
    h = h0
    for t in range(xr.shape[0]):
        rt = 1 / (1 + np.exp(-(xr[t] + h @ Wr.T)))
        zt = 1 / (1 + np.exp(-(xz[t] + h @ Wz.T)))
        nt = np.tanh(xn[t] + (rt * h) @ Wh.T)
        h = (1 - zt) * h + zt * nt
        np.testing.assert_allclose(hs[t + 1], h, atol=1e-13)


@pytest.mark.skipif("cython" not in kernels.available_backends(), reason="extension not built")
@pytest.mark.parametrize("shape", [(1, 1, 1), (7, 3, 5), (30, 32, 64)])
def test_backends_agree(rng, shape):
    T, B, H = shape
    (xr, xz, xn), (Wr, Wz, Wh), h0 = random_case(rng, T, B, H)
    fc = kernels.gru_forward(xr, xz, xn, Wr, Wz, Wh, h0, backend="cython")
    fp = kernels.gru_forward(xr, xz, xn, Wr, Wz, Wh, h0, backend="python")
    for a, b in zip(fc, fp):
        np.testing.assert_allclose(a, b, atol=1e-13)
    dh = rng.normal(size=(T, B, H))
    bc = kernels.gru_backward(dh, *fp, Wr, Wz, Wh, backend="cython")
    bp = kernels.gru_backward(dh, *fp, Wr, Wz, Wh, backend="python")
    for a, b in zip(bc, bp):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_backward_matches_finite_differences(rng):
    (xr, xz, xn), (Wr, Wz, Wh), h0 = random_case(rng, T=4, B=2, H=3)
    dh = rng.normal(size=xr.shape)

    def objective(xr_, Wh_):
        hs = _gru_py.gru_forward(xr_, xz, xn, Wr, Wz, Wh_, h0)[0]
        return float(np.sum(hs[1:] * dh))

    fwd = _gru_py.gru_forward(xr, xz, xn, Wr, Wz, Wh, h0)
    dxr, _, _, _, _, dWh, _ = _gru_py.gru_backward(dh, *fwd, Wr, Wz, Wh)
    eps = 1e-6
    for idx in [(0, 0, 0), (3, 1, 2), (2, 0, 1)]:
        a, b = xr.copy(), xr.copy()
        a[idx] += eps
        b[idx] -= eps
        assert dxr[idx] == pytest.approx((objective(a, Wh) - objective(b, Wh)) / (2 * eps), rel=1e-6, abs=1e-9)
    for idx in [(0, 0), (2, 1)]:
        a, b = Wh.copy(), Wh.copy()
        a[idx] += eps
        b[idx] -= eps
        assert dWh[idx] == pytest.approx((objective(xr, a) - objective(xr, b)) / (2 * eps), rel=1e-6, abs=1e-9)


def test_env_var_forces_fallback():
    env = dict(os.environ, PEDMOTION_BACKEND="python")
    code = "import pedmotion.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_default_prefers_compiled():
    expected = "cython" if "cython" in kernels.available_backends() else "python"
    env = {k: v for k, v in os.environ.items() if k != "PEDMOTION_BACKEND"}
    code = "import pedmotion.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
