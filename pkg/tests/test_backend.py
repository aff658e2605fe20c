import os
import subprocess
import sys

import numpy as np
import pytest

from dynrecon import backend
from dynrecon.backend import get_backend


def _compiled_available():
    try:
        get_backend("cython")
    except ImportError:
        return False
    return True


needs_compiled = pytest.mark.skipif(not _compiled_available(), reason="extension not built")


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("geom", [(4, 2, 1, 3, 5), (3, 1, 1, 4, 4), (5, 2, 0, 2, 3), (1, 1, 0, 6, 2)])
def test_backends_agree(dtype, geom):
    k, stride, pad, H, W = geom
    rng = np.random.default_rng(0)
    Ho, Wo = (H - 1) * stride - 2 * pad + k, (W - 1) * stride - 2 * pad + k
    cols = rng.standard_normal((3, k, k, 2, H, W)).astype(dtype)
    grad = rng.standard_normal((2, 3, Ho, Wo)).astype(dtype)
    py, cy = get_backend("python"), get_backend("cython")
    a = py.col2im(cols, stride, pad, Ho, Wo)
    b = cy.col2im(cols, stride, pad, Ho, Wo)
    assert a.dtype == b.dtype == dtype
    np.testing.assert_allclose(a, b, rtol=1e-5 if dtype == np.float32 else 1e-13, atol=1e-6)
    np.testing.assert_array_equal(py.im2col(grad, k, stride, pad, H, W),
                                  cy.im2col(grad, k, stride, pad, H, W))


def test_col2im_im2col_are_adjoint():
    rng = np.random.default_rng(1)
    k, stride, pad, H, W = 4, 2, 1, 3, 4
    Ho, Wo = (H - 1) * stride - 2 * pad + k, (W - 1) * stride - 2 * pad + k
    cols = rng.standard_normal((2, k, k, 3, H, W))
    grad = rng.standard_normal((3, 2, Ho, Wo))
    lhs = np.sum(backend.col2im(cols, stride, pad, Ho, Wo) * grad)
    rhs = np.sum(cols * backend.im2col(grad, k, stride, pad, H, W))
    assert abs(lhs - rhs) < 1e-12 * abs(lhs)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        get_backend("fortran")


def test_environment_forces_fallback():
    env = dict(os.environ, DYNRECON_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from dynrecon import backend; print(backend.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
