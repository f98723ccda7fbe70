"""Differentiable ops used by the autoencoder.

Activations are laid out ``(batch, channels, length)``. Convolutions follow
the cross-correlation convention.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor

__all__ = ["conv1d", "tconv1d", "maxpool1d", "tanh_op", "rnn_forward", "l1_loss", "add", "mul"]


def _pair(pad) -> tuple[int, int]:
    if isinstance(pad, (tuple, list)):
        left, right = pad
    else:
        left = right = pad
    return int(left), int(right)


def conv1d(x, w, b=None, stride: int = 1, pad=(0, 0), dilation: int = 1) -> Tensor:
    """Strided, dilated 1-D cross-correlation.

    ``x`` is ``(B, Cin, L)``, ``w`` is ``(Cout, Cin, K)``, ``b`` is ``(Cout,)``.
    Output length is ``(L + left + right - dilation*(K-1) - 1) // stride + 1``.
    """
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    B, cin, L = x.shape
    cout, wcin, K = w.shape
    if wcin != cin:
        raise ValueError(f"conv1d: input has {cin} channels, weight expects {wcin}")
    if b is not None and b.shape != (cout,):
        raise ValueError("conv1d: bias shape mismatch")
    left, right = _pair(pad)
    span = dilation * (K - 1) + 1
    Lp = L + left + right
    if Lp < span:
        raise ValueError("conv1d: input shorter than kernel span")
    lout = (Lp - span) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    # windows: (B, Cin, Lout, K)
    win = sliding_window_view(xp, span, axis=2)[:, :, : (lout - 1) * stride + 1 : stride, ::dilation]
    cols = win.transpose(0, 2, 1, 3).reshape(B * lout, cin * K)
    wmat = w.data.reshape(cout, cin * K)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(B, lout, cout).transpose(0, 2, 1)

    def backward(g):
        gflat = g.transpose(0, 2, 1).reshape(B * lout, cout)
        gw = (gflat.T @ cols).reshape(w.shape) if w.requires_grad else None
        gb = gflat.sum(axis=0) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gflat @ wmat).reshape(B, lout, cin, K)
            gxp = np.zeros_like(xp)
            stop = (lout - 1) * stride + 1
            for k in range(K):
                off = k * dilation
                gxp[:, :, off : off + stop : stride] += gcols[:, :, :, k].transpose(0, 2, 1)
            gx = gxp[:, :, left : left + L]
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(np.ascontiguousarray(out), parents, backward)


def tconv1d(x, w, b=None, stride: int = 1, pad: int = 0, out_pad: int = 0) -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv1d`.

    ``x`` is ``(B, Cin, L)``, ``w`` is ``(Cin, Cout, K)``. Output length is
    ``(L - 1) * stride + K - 2 * pad + out_pad``.
    """
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    if stride < 1 or not 0 <= out_pad < stride:
        raise ValueError("tconv1d: out_pad must be smaller than stride")
    B, cin, L = x.shape
    wcin, cout, K = w.shape
    if wcin != cin:
        raise ValueError(f"tconv1d: input has {cin} channels, weight expects {wcin}")
    if b is not None and b.shape != (cout,):
        raise ValueError("tconv1d: bias shape mismatch")
    lout = (L - 1) * stride + K - 2 * pad + out_pad
    if lout <= 0:
        raise ValueError("tconv1d: non-positive output length")
    full_len = max((L - 1) * stride + K, pad + lout)
    wmat = w.data.reshape(cin, cout * K)
    xt = x.data.transpose(0, 2, 1).reshape(B * L, cin)
    contrib = (xt @ wmat).reshape(B, L, cout, K)
    full = np.zeros((B, cout, full_len))
    stop = (L - 1) * stride + 1
    for k in range(K):
        full[:, :, k : k + stop : stride] += contrib[:, :, :, k].transpose(0, 2, 1)
    out = full[:, :, pad : pad + lout]
    if b is not None:
        out = out + b.data[None, :, None]

    def backward(g):
        gfull = np.zeros((B, cout, full_len))
        gfull[:, :, pad : pad + lout] = g
        # the adjoint of the scatter is a strided window gather: (B, Cout, L, K)
        win = sliding_window_view(gfull, K, axis=2)[:, :, :stop:stride]
        gc = win.transpose(0, 2, 1, 3).reshape(B * L, cout * K)
        gx = (gc @ wmat.T).reshape(B, L, cin).transpose(0, 2, 1) if x.requires_grad else None
        gw = (xt.T @ gc).reshape(w.shape) if w.requires_grad else None
        gb = g.sum(axis=(0, 2)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(np.ascontiguousarray(out), parents, backward)


def maxpool1d(x, size: int = 2, stride: int | None = None) -> Tensor:
    """Window maxima; ties route the gradient to the lowest index."""
    x = as_tensor(x)
    stride = size if stride is None else stride
    if size < 1 or stride < 1:
        raise ValueError("maxpool1d: size and stride must be >= 1")
    B, C, L = x.shape
    if size > L:
        raise ValueError("maxpool1d: window larger than input")
    lout = (L - size) // stride + 1
    win = sliding_window_view(x.data, size, axis=2)[:, :, ::stride][:, :, :lout]
    arg = win.argmax(axis=3)  # first maximum on ties
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    src = np.arange(lout) * stride + arg

    def backward(g):
        gx = np.zeros_like(x.data)
        bi, ci, _ = np.indices(src.shape)
        np.add.at(gx, (bi, ci, src), g)
        return (gx,)

    return Tensor.from_op(out, (x,), backward)


def tanh_op(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * (1.0 - y * y),))


def rnn_forward(x, wx, wh, b) -> Tensor:
    """Elman recurrence ``h_t = tanh(Wx x_t + Wh h_{t-1} + b)`` with ``h_0 = 0``.

    ``x`` is ``(B, Cin, T)``; returns the hidden sequence ``(B, H, T)``.
    Backward is full backpropagation through time.
    """
    x, wx, wh, b = as_tensor(x), as_tensor(wx), as_tensor(wh), as_tensor(b)
    B, cin, T = x.shape
    H = wh.shape[0]
    if wx.shape != (H, cin) or wh.shape != (H, H) or b.shape != (H,):
        raise ValueError("rnn_forward: parameter shapes do not match input")
    xs = x.data.transpose(2, 0, 1)  # (T, B, Cin)
    pre_x = xs @ wx.data.T + b.data  # (T, B, H)
    hs = np.zeros((T + 1, B, H))
    for t in range(T):
        hs[t + 1] = np.tanh(pre_x[t] + hs[t] @ wh.data.T)
    out = hs[1:].transpose(1, 2, 0)

    def backward(g):
        gs = g.transpose(2, 0, 1)  # (T, B, H)
        dpre = np.empty((T, B, H))
        carry = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = gs[t] + carry
            dpre[t] = dh * (1.0 - hs[t + 1] ** 2)
            carry = dpre[t] @ wh.data
        flat = dpre.reshape(T * B, H)
        gx = (dpre @ wx.data).transpose(1, 2, 0) if x.requires_grad else None
        gwx = flat.T @ xs.reshape(T * B, cin)
        gwh = flat.T @ hs[:-1].reshape(T * B, H)
        gb = flat.sum(axis=0)
        return gx, gwx, gwh, gb

    return Tensor.from_op(np.ascontiguousarray(out), (x, wx, wh, b), backward)


def l1_loss(pred, target) -> Tensor:
    """Mean absolute error; the subgradient at zero is 0."""
    pred = as_tensor(pred)
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        s = np.sign(diff) * (g / n)
        return s, -s

    return Tensor.from_op(np.mean(np.abs(diff)), (pred, target), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError("add: shape mismatch")
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError("mul: shape mismatch")
    return Tensor.from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
