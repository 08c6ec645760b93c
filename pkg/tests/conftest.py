import numpy as np
import pytest

from salescast.tensor import RngStream


def central_diff(f, x, eps=1e-5):
    """Central finite-difference gradient of scalar f() wrt array x (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2.0 * eps)
    return g


def assert_grads_close(analytic, numeric, rel=1e-6, abs_floor=1e-8, label=""):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), abs_floor / rel)
    err = np.max(np.abs(analytic - numeric) / denom)
    assert err < rel, f"{label}: max relative gradient error {err:.3e} >= {rel:.0e}"


@pytest.fixture
def rng():
    return RngStream(12345)
