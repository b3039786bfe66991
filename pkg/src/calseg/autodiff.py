"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Ops record onto the innermost active ``Tape`` (a context manager) whenever
any input requires gradients; ``Tape.backward`` replays the records in
exact reverse execution order. Gradients accumulate into ``Variable.grad``
until explicitly zeroed, so parameter updates control their own lifecycle.

Arrays stay in whatever float dtype they were created with (float32 in the
production path); reductions accumulate in float64 regardless. Ops running
outside any tape are plain forward computations with zero bookkeeping.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ShapeError

_TAPE_STACK: list["Tape"] = []


class Variable:
    """A dense tensor plus its accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False, dtype=None):
        arr = np.asarray(value, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.value = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return (f"Variable(shape={self.value.shape}, dtype={self.value.dtype}, "
                f"requires_grad={self.requires_grad})")


class Tape:
    """Ordered record of executed primitives; backward walks it in reverse."""

    def __init__(self):
        self._records: list[tuple[Variable, tuple[Variable, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Variable, parents: tuple[Variable, ...],
               backward_fn: Callable) -> None:
        self._records.append((out, parents, backward_fn))

    def backward(self, loss: Variable) -> None:
        """Accumulate d(loss)/d(var) into .grad for every tracked Variable."""
        if loss.value.ndim != 0:
            raise ShapeError(f"loss must be scalar, got shape {loss.value.shape}")
        seed = np.ones((), dtype=loss.value.dtype)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        for out, parents, backward_fn in reversed(self._records):
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            for parent, grad in zip(parents, grads):
                if grad is None or not parent.requires_grad:
                    continue
                grad = np.asarray(grad, dtype=parent.value.dtype)
                parent.grad = grad if parent.grad is None else parent.grad + grad


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Variable) -> None:
    """Run backward on the innermost active tape."""
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward() called with no active Tape")
    tape.backward(loss)


def _as_variable(x, dtype) -> Variable:
    if isinstance(x, Variable):
        return x
    return Variable(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple[Variable, Variable]:
    """Coerce a binary op's operands; constants adopt the Variable's dtype."""
    if isinstance(a, Variable):
        return a, _as_variable(b, a.dtype)
    if isinstance(b, Variable):
        return _as_variable(a, b.dtype), b
    a = _as_variable(a, None)
    return a, _as_variable(b, a.dtype)


def _record(out: Variable, parents: tuple[Variable, ...], backward_fn) -> None:
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, backward_fn)


def _reduce_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)), dtype=np.float64)
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True, dtype=np.float64)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Variable:
    a, b = _pair(a, b)
    out = Variable(a.value + b.value)
    _record(out, (a, b), lambda g: (_reduce_to_shape(g, a.value.shape),
                                    _reduce_to_shape(g, b.value.shape)))
    return out


def sub(a, b) -> Variable:
    a, b = _pair(a, b)
    out = Variable(a.value - b.value)
    _record(out, (a, b), lambda g: (_reduce_to_shape(g, a.value.shape),
                                    _reduce_to_shape(-g, b.value.shape)))
    return out


def mul(a, b) -> Variable:
    a, b = _pair(a, b)
    out = Variable(a.value * b.value)

    def _bwd(g):
        ga = _reduce_to_shape(g * b.value, a.value.shape) if a.requires_grad else None
        gb = _reduce_to_shape(g * a.value, b.value.shape) if b.requires_grad else None
        return ga, gb

    _record(out, (a, b), _bwd)
    return out


def div(a, b) -> Variable:
    a, b = _pair(a, b)
    out = Variable(a.value / b.value)

    def _bwd(g):
        ga = _reduce_to_shape(g / b.value, a.value.shape) if a.requires_grad else None
        gb = (_reduce_to_shape(-g * a.value / (b.value * b.value), b.value.shape)
              if b.requires_grad else None)
        return ga, gb

    _record(out, (a, b), _bwd)
    return out


def neg(a) -> Variable:
    a = _as_variable(a, None)
    out = Variable(-a.value)
    _record(out, (a,), lambda g: (-g,))
    return out


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def log(a) -> Variable:
    a = _as_variable(a, None)
    out = Variable(np.log(a.value))
    _record(out, (a,), lambda g: (g / a.value,))
    return out


def exp(a) -> Variable:
    a = _as_variable(a, None)
    out = Variable(np.exp(a.value))
    _record(out, (a,), lambda g: (g * out.value,))
    return out


def clamp(a, lo: float, hi: float) -> Variable:
    """Clip values to [lo, hi]; gradient passes only where unclipped."""
    a = _as_variable(a, None)
    out = Variable(np.clip(a.value, lo, hi))
    inside = ((a.value >= lo) & (a.value <= hi)).astype(a.value.dtype)
    _record(out, (a,), lambda g: (g * inside,))
    return out


def leaky_relu(a, alpha: float = 0.01) -> Variable:
    """max(v, alpha*v); the subgradient at exactly 0 is alpha."""
    a = _as_variable(a, None)
    out = Variable(np.where(a.value >= 0, a.value, a.value * a.dtype.type(alpha)))
    slope = np.where(a.value > 0, a.dtype.type(1.0), a.dtype.type(alpha))
    _record(out, (a,), lambda g: (g * slope,))
    return out


def sigmoid(a) -> Variable:
    a = _as_variable(a, None)
    v = a.value
    out_val = np.empty_like(v)
    pos = v >= 0
    out_val[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out_val[~pos] = ev / (1.0 + ev)
    out = Variable(out_val)
    _record(out, (a,), lambda g: (g * out.value * (1.0 - out.value),))
    return out


def softplus(a) -> Variable:
    """ln(1 + e^v), evaluated stably; gradient is sigmoid(v)."""
    a = _as_variable(a, None)
    out = Variable(np.logaddexp(0.0, a.value).astype(a.dtype))

    def _bwd(g):
        v = a.value
        s = np.empty_like(v)
        pos = v >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        s[~pos] = ev / (1.0 + ev)
        return (g * s,)

    _record(out, (a,), _bwd)
    return out


# ---------------------------------------------------------------------------
# reductions and shape ops


def tensor_sum(a) -> Variable:
    a = _as_variable(a, None)
    out = Variable(np.asarray(a.value.sum(dtype=np.float64), dtype=a.dtype))
    _record(out, (a,), lambda g: (np.broadcast_to(g, a.value.shape).copy(),))
    return out


def tensor_mean(a) -> Variable:
    a = _as_variable(a, None)
    n = a.value.size
    out = Variable(np.asarray(a.value.mean(dtype=np.float64), dtype=a.dtype))
    _record(out, (a,), lambda g: (np.broadcast_to(g / n, a.value.shape).copy(),))
    return out


def concat_channels(a, b) -> Variable:
    """Concatenate two N,C,H,W tensors along the channel axis."""
    a = _as_variable(a, None)
    b = _as_variable(b, a.dtype)
    if a.value.ndim != 4 or b.value.ndim != 4:
        raise ShapeError("concat_channels expects rank-4 tensors")
    if (a.value.shape[0], a.value.shape[2], a.value.shape[3]) != (
            b.value.shape[0], b.value.shape[2], b.value.shape[3]):
        raise ShapeError(f"incompatible shapes {a.value.shape} and {b.value.shape}")
    split = a.value.shape[1]
    out = Variable(np.concatenate([a.value, b.value], axis=1))
    _record(out, (a, b), lambda g: (g[:, :split], g[:, split:]))
    return out


# ---------------------------------------------------------------------------
# structured ops


def _check_conv_geometry(size: int, k: int, stride: int, padding: int, axis: str) -> int:
    span = size + 2 * padding - k
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"conv geometry invalid along {axis}: size={size}, kernel={k}, "
            f"stride={stride}, padding={padding} gives non-integral output"
        )
    return span // stride + 1


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Variable:
    """2D cross-correlation (no kernel flip) over N,Cin,H,W input."""
    x = _as_variable(x, None)
    kernel = _as_variable(kernel, x.dtype)
    if x.value.ndim != 4 or kernel.value.ndim != 4:
        raise ShapeError("conv2d expects x (N,Cin,H,W) and kernel (Cout,Cin,kH,kW)")
    n, cin, h, w = x.value.shape
    cout, kcin, kh, kw = kernel.value.shape
    if kcin != cin:
        raise ShapeError(f"kernel expects {kcin} input channels, input has {cin}")
    _check_conv_geometry(h, kh, stride, padding, "H")
    _check_conv_geometry(w, kw, stride, padding, "W")
    if bias is not None:
        bias = _as_variable(bias, x.dtype)
        if bias.value.shape != (cout,):
            raise ShapeError(f"bias must have shape ({cout},), got {bias.value.shape}")

    if padding:
        xp = np.pad(x.value, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = np.ascontiguousarray(x.value)
    y = kernels.conv_fwd(xp, np.ascontiguousarray(kernel.value), stride)
    if bias is not None:
        y = y + bias.value[None, :, None, None]
    out = Variable(y)

    hp, wp = xp.shape[2], xp.shape[3]

    def _bwd(g):
        g = np.ascontiguousarray(g)
        gx = gk = gb = None
        if x.requires_grad:
            dxp = kernels.conv_grad_input(g, np.ascontiguousarray(kernel.value), stride, hp, wp)
            gx = dxp[:, :, padding:hp - padding, padding:wp - padding] if padding else dxp
        if kernel.requires_grad:
            gk = kernels.conv_grad_kernel(g, xp, stride, kh, kw)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)
        return (gx, gk) if bias is None else (gx, gk, gb)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    _record(out, parents, _bwd)
    return out


def conv_transpose2d(x, kernel, bias=None, stride: int = 2, padding: int = 0) -> Variable:
    """Adjoint of conv2d: upsamples (N,A,H,W) with kernel (A,B,kH,kW) to (N,B,H',W').

    H' = (H-1)*stride - 2*padding + kH. Forward equals the
    gradient-w.r.t.-input map of the matching conv2d, so
    <conv2d(v, K), x> == <v, conv_transpose2d(x, K)>.
    """
    x = _as_variable(x, None)
    kernel = _as_variable(kernel, x.dtype)
    if x.value.ndim != 4 or kernel.value.ndim != 4:
        raise ShapeError("conv_transpose2d expects x (N,A,H,W), kernel (A,B,kH,kW)")
    n, a, h, w = x.value.shape
    ka, b, kh, kw = kernel.value.shape
    if ka != a:
        raise ShapeError(f"kernel expects {ka} input channels, input has {a}")
    hp = (h - 1) * stride + kh
    wp = (w - 1) * stride + kw
    ho, wo = hp - 2 * padding, wp - 2 * padding
    if ho < 1 or wo < 1:
        raise ShapeError(f"output {ho}x{wo} collapsed by padding={padding}")
    if bias is not None:
        bias = _as_variable(bias, x.dtype)
        if bias.value.shape != (b,):
            raise ShapeError(f"bias must have shape ({b},), got {bias.value.shape}")

    # Scatter = conv gradient-w.r.t.-input with kernel roles (A,B) <-> (Cout,Cin).
    full = kernels.conv_grad_input(np.ascontiguousarray(x.value),
                                   np.ascontiguousarray(kernel.value), stride, hp, wp)
    y = full[:, :, padding:hp - padding, padding:wp - padding] if padding else full
    if bias is not None:
        y = y + bias.value[None, :, None, None]
    out = Variable(np.ascontiguousarray(y))

    def _bwd(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
            if padding else np.ascontiguousarray(g)
        gx = gk = gb = None
        if x.requires_grad:
            gx = kernels.conv_fwd(gp, np.ascontiguousarray(kernel.value), stride)
        if kernel.requires_grad:
            gk = kernels.conv_grad_kernel(np.ascontiguousarray(x.value), gp, stride, kh, kw)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)
        return (gx, gk) if bias is None else (gx, gk, gb)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    _record(out, parents, _bwd)
    return out


class RunningStats:
    """Mutable per-channel running mean/variance for batch norm."""

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batch_norm2d(x, gamma, beta, mode: str, running: RunningStats,
                 momentum: float = 0.1, epsilon: float = 1e-5) -> Variable:
    """Per-channel batch normalization over an N,C,H,W tensor.

    Train mode normalizes by batch statistics (population variance) and
    folds them into the running stats; eval mode uses the running stats.
    """
    x = _as_variable(x, None)
    gamma = _as_variable(gamma, x.dtype)
    beta = _as_variable(beta, x.dtype)
    if x.value.ndim != 4:
        raise ShapeError(f"batch_norm2d expects N,C,H,W input, got {x.value.shape}")
    c = x.value.shape[1]
    if gamma.value.shape != (c,) or beta.value.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    if mode == "train":
        x64 = x.value.astype(np.float64)
        mu = x64.mean(axis=(0, 2, 3))
        var = ((x64 - mu[None, :, None, None]) ** 2).mean(axis=(0, 2, 3))
        running.mean = ((1.0 - momentum) * running.mean.astype(np.float64)
                        + momentum * mu).astype(running.mean.dtype)
        running.var = ((1.0 - momentum) * running.var.astype(np.float64)
                       + momentum * var).astype(running.var.dtype)
    else:
        mu = running.mean.astype(np.float64)
        var = running.var.astype(np.float64)

    inv_std = (1.0 / np.sqrt(var + epsilon)).astype(x.dtype)
    mu_c = mu.astype(x.dtype)
    xhat = (x.value - mu_c[None, :, None, None]) * inv_std[None, :, None, None]
    out = Variable(gamma.value[None, :, None, None] * xhat
                   + beta.value[None, :, None, None])

    m = x.value.shape[0] * x.value.shape[2] * x.value.shape[3]

    def _bwd(g):
        gb = (g.sum(axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)
              if beta.requires_grad else None)
        gg = ((g * xhat).sum(axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)
              if gamma.requires_grad else None)
        gx = None
        if x.requires_grad:
            scale = (gamma.value * inv_std)[None, :, None, None]
            if mode == "train":
                g_mean = g.mean(axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)
                gx_hat_mean = ((g * xhat).sum(axis=(0, 2, 3), dtype=np.float64)
                               / m).astype(g.dtype)
                gx = scale * (g - g_mean[None, :, None, None]
                              - xhat * gx_hat_mean[None, :, None, None])
            else:
                gx = scale * g
        return gx, gg, gb

    _record(out, (x, gamma, beta), _bwd)
    return out
