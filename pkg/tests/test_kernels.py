import numpy as np
import pytest

from hamlearn import _pykernels as py
from hamlearn import kernels

pytestmark = pytest.mark.skipif(not kernels.compiled_available(), reason="compiled kernels not built")


@pytest.fixture(scope="module")
def ck():
    from hamlearn import _ckernels

    return _ckernels


def _pairs(rng):
    a = rng.normal(size=(7, 5))
    x, g = rng.normal(size=5), rng.normal(size=7)
    z = rng.normal(size=6) * 10
    t = np.abs(rng.normal(size=6))
    return [
        ("matvec", (a, x)),
        ("rmatvec", (a, g)),
        ("outer", (g, x)),
        ("tanh", (z,)),
        ("tanh_vjp", (z[:6], np.tanh(z))),
        ("relu", (z,)),
        ("relu_vjp", (t, z)),
        ("softmax", (z,)),
    ]


def test_backends_agree_to_1e12(ck):
    rng = np.random.default_rng(0)
    for _ in range(50):
        for name, args in _pairs(rng):
            a = np.asarray(getattr(py, name)(*args))
            b = np.asarray(getattr(ck, name)(*args))
            assert a.shape == b.shape
            assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a))), name


def test_softmax_xent_backends_agree(ck):
    rng = np.random.default_rng(1)
    for _ in range(50):
        z = rng.normal(size=5) * 20
        t = np.zeros(5)
        t[rng.integers(5)] = 1.0
        la, ga = py.softmax_xent(z, t)
        lb, gb = ck.softmax_xent(z, t)
        assert abs(la - lb) <= 1e-12 * max(1.0, abs(la))
        assert np.max(np.abs(np.asarray(ga) - np.asarray(gb))) <= 1e-12


def test_compiled_kernels_accept_read_only_inputs(ck):
    a = np.ones((2, 2))
    a.flags.writeable = False
    x = np.ones(2)
    x.flags.writeable = False
    assert np.asarray(ck.matvec(a, x)).tolist() == [2.0, 2.0]


def test_softmax_is_stable_for_large_logits():
    for mod in (py, kernels):
        p = np.asarray(mod.softmax(np.array([1000.0, 1000.0])))
        assert p.tolist() == [0.5, 0.5]


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")


def test_environment_variable_forces_fallback():
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-c", "from hamlearn import kernels; print(kernels.BACKEND)"],
                         env={**__import__("os").environ, "HAMLEARN_PURE_PYTHON": "1"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
