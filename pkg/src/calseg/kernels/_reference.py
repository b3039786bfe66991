"""Pure-numpy convolution kernels (fallback backend).

All three functions take pre-padded inputs, accumulate in float64 and
return the caller's dtype. They are the contract the compiled backend
must match (up to summation-order round-off).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND_NAME = "python"


def conv_fwd(xp: np.ndarray, kernel: np.ndarray, stride: int) -> np.ndarray:
    """Cross-correlate padded input (N,Cin,Hp,Wp) with kernel (Cout,Cin,kH,kW)."""
    n, cin, hp, wp = xp.shape
    cout, _, kh, kw = kernel.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    patches = as_strided(
        xp,
        shape=(n, ho, wo, cin, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
    )
    cols = patches.reshape(n * ho * wo, cin * kh * kw).astype(np.float64)
    out = cols @ kernel.reshape(cout, cin * kh * kw).astype(np.float64).T
    return out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2).astype(xp.dtype)


def conv_grad_input(dy: np.ndarray, kernel: np.ndarray, stride: int,
                    hp: int, wp: int) -> np.ndarray:
    """Gradient of conv_fwd w.r.t. the padded input; dy is (N,Cout,Ho,Wo)."""
    n, cout, ho, wo = dy.shape
    _, cin, kh, kw = kernel.shape
    dy64 = dy.astype(np.float64)
    k64 = kernel.astype(np.float64)
    dxp = np.zeros((n, cin, hp, wp), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            # (N,Ho,Wo,Cout) x (Cout,Cin) -> (N,Ho,Wo,Cin)
            contrib = np.tensordot(dy64, k64[:, :, i, j], axes=([1], [0]))
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    return dxp.astype(dy.dtype)


def conv_grad_kernel(dy: np.ndarray, xp: np.ndarray, stride: int,
                     kh: int, kw: int) -> np.ndarray:
    """Gradient of conv_fwd w.r.t. the kernel."""
    n, cout, ho, wo = dy.shape
    _, cin, _, _ = xp.shape
    dy64 = dy.astype(np.float64)
    x64 = xp.astype(np.float64)
    dk = np.empty((cout, cin, kh, kw), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            window = x64[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            dk[:, :, i, j] = np.tensordot(dy64, window, axes=([0, 2, 3], [0, 2, 3]))
    return dk.astype(dy.dtype)
