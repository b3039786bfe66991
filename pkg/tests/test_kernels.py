"""Cross-checks between the compiled and pure-numpy kernel backends."""

import numpy as np
import pytest

from calseg import kernels
from calseg.kernels import _reference

pytestmark = pytest.mark.skipif(
    not kernels.HAVE_COMPILED, reason="compiled kernels not built")


def cases(rng):
    shapes = [
        # (N, Cin, H, W, Cout, k, stride)
        (2, 3, 8, 9, 4, 3, 1),
        (1, 13, 12, 12, 8, 3, 1),
        (2, 4, 10, 10, 6, 2, 2),
        (3, 1, 7, 5, 2, 1, 1),
        (1, 8, 6, 6, 8, 3, 3),
    ]
    for n, cin, h, w, cout, k, stride in shapes:
        xp = rng.normal(size=(n, cin, h, w))
        kernel = rng.normal(size=(cout, cin, k, k))
        ho = (h - k) // stride + 1
        wo = (w - k) // stride + 1
        dy = rng.normal(size=(n, cout, ho, wo))
        yield xp, kernel, dy, stride, h, w, k


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-5), (np.float64, 1e-12)])
def test_backends_agree(rng, dtype, tol):
    compiled = kernels.backends()["compiled"]
    for xp, kernel, dy, stride, h, w, k in cases(rng):
        xp = xp.astype(dtype)
        kernel = kernel.astype(dtype)
        dy = dy.astype(dtype)
        for fn_name, args in [
            ("conv_fwd", (xp, kernel, stride)),
            ("conv_grad_input", (dy, kernel, stride, h, w)),
            ("conv_grad_kernel", (dy, xp, stride, k, k)),
        ]:
            a = getattr(_reference, fn_name)(*args)
            b = getattr(compiled, fn_name)(*args)
            assert a.dtype == b.dtype == dtype
            np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


def test_each_backend_is_deterministic(rng):
    for name, backend in kernels.backends().items():
        xp = rng.normal(size=(2, 3, 9, 9)).astype(np.float32)
        kernel = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        first = backend.conv_fwd(xp, kernel, 1)
        second = backend.conv_fwd(xp, kernel, 1)
        assert first.tobytes() == second.tobytes(), name


def test_active_backend_exports_the_contract():
    assert kernels.BACKEND in ("python", "compiled")
    for fn in ("conv_fwd", "conv_grad_input", "conv_grad_kernel"):
        assert callable(getattr(kernels, fn))
