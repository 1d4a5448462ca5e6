"""Differentiable operations.

Each op computes its forward value with numpy and registers a closure that
returns one gradient per parent (``None`` for parents that need none).
"""

from __future__ import annotations

import math

import numpy as np

from ..exceptions import DimensionError
from .tensor import Tensor, as_tensor, make_result, unbroadcast

_sliding = np.lib.stride_tricks.sliding_window_view


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else tuple(v)


def _binary_shape(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _binary_shape("add", a, b)
    return make_result(a.data + b.data, (a, b),
                       lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _binary_shape("sub", a, b)
    return make_result(a.data - b.data, (a, b),
                       lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _binary_shape("mul", a, b)

    def back(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _binary_shape("div", a, b)
    out = a.data / b.data

    def back(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), back)


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    return make_result(a.data**exponent, (a,),
                       lambda g: (g * exponent * a.data ** (exponent - 1),))


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),))


def atanh(a: Tensor) -> Tensor:
    return make_result(np.arctanh(a.data), (a,), lambda g: (g / (1.0 - a.data * a.data),))


def relu(a: Tensor) -> Tensor:
    return make_result(np.maximum(a.data, 0), (a,), lambda g: (g * (a.data > 0),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return make_result(out, (a,), back)


def silu(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    return make_result(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),))


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def ste_round(a: Tensor, n: int) -> Tensor:
    """``round(n * a) / n`` forward, identity Jacobian backward."""
    return make_result(round_half_away(n * a.data) / n, (a,), lambda g: (g,))


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data)


# reductions and shape ops ---------------------------------------------------------


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(np.asarray(out), (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis, keepdims) * (1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return make_result(out, (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g) if _is_advanced(index) else full.__setitem__(index, g)
        return (full,)

    return make_result(np.array(out), (a,), back)


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


slice_ = getitem


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tuple(tensors), back)


def broadcast_to(a: Tensor, shape) -> Tensor:
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}") from None
    return make_result(np.ascontiguousarray(out), (a,), lambda g: (unbroadcast(g, a.shape),))


def pad_time(a: Tensor, pad_width) -> Tensor:
    out = np.pad(a.data, pad_width)
    slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return make_result(out, (a,), lambda g: (g[slices],))


# linear algebra ------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_result(out, (a, b), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with weight stored ``[in, out]``."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return make_result(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply optional elementwise affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data
    parents = tuple(t for t in (x, weight, bias) if t is not None)

    def back(g):
        grads = []
        gx = g * weight.data if weight is not None else g
        if x.requires_grad:
            grads.append(inv * (gx - gx.mean(axis=-1, keepdims=True)
                                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))
        else:
            grads.append(None)
        if weight is not None:
            grads.append(unbroadcast(g * xhat, weight.shape) if weight.requires_grad else None)
        if bias is not None:
            grads.append(unbroadcast(g, bias.shape) if bias.requires_grad else None)
        return tuple(grads)

    return make_result(out, parents, back)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax attention over ``[..., N, d]`` inputs with an additive ``[N, N]`` mask.

    Blocked entries (``-inf``) get exactly zero weight, so the output rows
    never depend on the values at blocked key positions.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: incompatible q {q.shape}, k {k.shape}, v {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    if mask is not None:
        if mask.shape != scores.shape[-2:]:
            raise DimensionError(f"attention: mask {mask.shape} does not match scores {scores.shape[-2:]}")
        scores = scores + mask
    scores -= scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ v.data

    def back(g):
        gv = np.swapaxes(p, -1, -2) @ g
        gp = g @ np.swapaxes(v.data, -1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ k.data
        gk = np.swapaxes(gs, -1, -2) @ q.data
        return gq, gk, gv

    return make_result(out, (q, k, v), back)


# convolutions -------------------------------------------------------------------------


def _col2im(cols: np.ndarray, out_hw: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
    """Scatter-add ``cols [B, Ho, Wo, C, kh, kw]`` onto a ``[B, C, H, W]`` grid."""
    b, ho, wo, c, kh, kw = cols.shape
    sh, sw = stride
    out = np.zeros((b, c) + out_hw, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of ``x [B, Cin, H, W]`` with ``weight [Cout, Cin, kh, kw]``."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    bsz, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise DimensionError(f"conv2d: input {x.shape} smaller than kernel {weight.shape[2:]}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    win = _sliding(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    ho, wo = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * ho * wo, cin * kh * kw)
    w2 = weight.data.reshape(cout, -1)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(weight.shape)
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(bsz, ho, wo, cin, kh, kw)
            gxp = _col2im(gcols, xp.shape[2:], (sh, sw))
            gx = gxp[:, :, ph : ph + h, pw : pw + w]
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, back)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Adjoint of :func:`conv2d`; ``weight [Cin, Cout, kh, kw]``.

    Output size per axis is ``(H - 1) * stride - 2 * padding + k``.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"conv_transpose2d: input {x.shape} incompatible with weight {weight.shape}")
    bsz, cin, h, w = x.shape
    _, cout, kh, kw = weight.shape
    hf, wf = (h - 1) * sh + kh, (w - 1) * sw + kw
    x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    w2 = weight.data.reshape(cin, -1)
    cols = (x2 @ w2).reshape(bsz, h, w, cout, kh, kw)
    full = _col2im(cols, (hf, wf), (sh, sw))
    out = full[:, :, ph : hf - ph, pw : wf - pw]
    if bias is not None:
        out = out + bias.data[:, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else g
        win = _sliding(gfull, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        gcols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * h * w, cout * kh * kw)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.ascontiguousarray((gcols @ w2.T).reshape(bsz, h, w, cin).transpose(0, 3, 1, 2))
        if weight.requires_grad:
            gw = (x2.T @ gcols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, back)


def pseudo_huber(a: Tensor, b, c: float, axis=None) -> Tensor:
    """``sqrt(||a - b||^2 + c^2) - c``; the norm runs over ``axis`` (all axes by default)."""
    diff = sub(a, b)
    sq = sum(diff * diff, axis=axis)
    return sqrt(sq + c * c) - c


# channels-last fast paths used by the networks -------------------------------------


def conv2d_same(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 'same' convolution of ``x [B, H, W, Cin]`` with ``weight [kh, kw, Cin, Cout]``.

    Works on the zero-padded input flattened to rows: tap ``(i, j)`` is a
    contiguous row offset ``i * Wp + j``, so each tap is one matmul on a view.
    Rows that fall in the padding margin are computed and discarded.
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[-1] != weight.shape[2]:
        raise DimensionError(f"conv2d_same: input {x.shape} incompatible with weight {weight.shape}")
    bsz, h, w, cin = x.shape
    kh, kw, _, cout = weight.shape
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    n = bsz * hp * wp
    extra = (kh - 1) * wp + (kw - 1)
    xf = np.zeros((n + extra, cin), dtype=x.dtype)
    xf[:n].reshape(bsz, hp, wp, cin)[:, ph : ph + h, pw : pw + w] = x.data
    wd = weight.data
    full = np.zeros((n, cout), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            off = i * wp + j
            full += xf[off : off + n] @ wd[i, j]
    out = full.reshape(bsz, hp, wp, cout)[:, :h, :w]
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gf = np.zeros((n, cout), dtype=g.dtype)
        gf.reshape(bsz, hp, wp, cout)[:, :h, :w] = g
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.empty_like(wd)
        if x.requires_grad:
            gxf = np.zeros_like(xf)
        for i in range(kh):
            for j in range(kw):
                off = i * wp + j
                if x.requires_grad:
                    gxf[off : off + n] += gf @ wd[i, j].T
                if gw is not None:
                    gw[i, j] = xf[off : off + n].T @ gf
        if x.requires_grad:
            gx = gxf[:n].reshape(bsz, hp, wp, cin)[:, ph : ph + h, pw : pw + w]
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, cout).sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, back)


def patch_down(x: Tensor, weight: Tensor, bias: Tensor | None, stride) -> Tensor:
    """Strided conv with kernel == stride on ``[B, H, W, Cin]``; ``weight [sh * sw * Cin, Cout]``."""
    sh, sw = _pair(stride)
    bsz, h, w, c = x.shape
    if h % sh or w % sw or weight.shape[0] != sh * sw * c:
        raise DimensionError(f"patch_down: input {x.shape}, stride {(sh, sw)}, weight {weight.shape}")
    patches = x.reshape(bsz, h // sh, sh, w // sw, sw, c).transpose(0, 1, 3, 2, 4, 5)
    patches = patches.reshape(bsz, h // sh, w // sw, sh * sw * c)
    return linear(patches, weight, bias)


def patch_up(x: Tensor, weight: Tensor, bias: Tensor | None, stride) -> Tensor:
    """Transposed conv with kernel == stride; ``weight [Cin, sh * sw * Cout]``, ``bias [Cout]``."""
    sh, sw = _pair(stride)
    bsz, h, w, c = x.shape
    if weight.shape[0] != c or weight.shape[1] % (sh * sw):
        raise DimensionError(f"patch_up: input {x.shape}, stride {(sh, sw)}, weight {weight.shape}")
    cout = weight.shape[1] // (sh * sw)
    y = matmul(x, weight).reshape(bsz, h, w, sh, sw, cout).transpose(0, 1, 3, 2, 4, 5)
    y = y.reshape(bsz, h * sh, w * sw, cout)
    return y if bias is None else add(y, bias)
