"""Differentiable primitives over `Tensor` values.

Forwards are plain numpy in float64 with direct (no transform tricks)
convolution semantics. Every op validates shapes, rejects non-finite
outputs, and records a backward closure on the active tape when any input
is being tracked. Backward closures return one gradient array per parent,
already reduced to the parent's shape.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericsError
from .tensor import Array, Tensor, active_tape


def _data(x) -> Array:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def lift(name: str, data: Array, parents: tuple, backward_fn) -> Tensor:
    """Wrap an externally computed forward as a tracked primitive.

    `backward_fn(grad_out)` must return one gradient per parent. Used by
    higher-level modules (e.g. the box-loss bridge) to register custom
    primitives without reimplementing tape plumbing.
    """
    if not np.all(np.isfinite(data)):
        raise NumericsError(f"{name} produced non-finite values")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(isinstance(p, Tensor) and p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, tuple(parents), backward_fn)
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum out broadcast axes so `grad` matches `shape` (numpy's inverse)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def bwd(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)

    return lift("add", ad + bd, (a, b), bwd)


def sub(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def bwd(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape)

    return lift("sub", ad - bd, (a, b), bwd)


def mul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return lift("mul", ad * bd, (a, b), bwd)


def neg(a) -> Tensor:
    ad = _data(a)
    return lift("neg", -ad, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NumericsError in lift
        out = np.exp(_data(a))
    return lift("exp", out, (a,), lambda g: (g * out,))


def minimum_const(a, cap: float) -> Tensor:
    """Elementwise min(a, cap); on exact ties the gradient stays with `a`."""
    ad = _data(a)
    mask = ad <= cap

    def bwd(g):
        return (g * mask,)

    return lift("minimum_const", np.where(mask, ad, cap), (a,), bwd)


def maximum(a, b) -> Tensor:
    """Elementwise max; on exact ties the gradient routes to the first branch."""
    ad, bd = _data(a), _data(b)
    mask = ad >= bd

    def bwd(g):
        return _unbroadcast(g * mask, ad.shape), _unbroadcast(g * ~mask, bd.shape)

    return lift("maximum", np.where(mask, ad, bd), (a, b), bwd)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def _sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(a) -> Tensor:
    ad = _data(a)
    mask = ad > 0

    def bwd(g):
        return (g * mask,)

    return lift("relu", np.where(mask, ad, 0.0), (a,), bwd)


def sigmoid(a) -> Tensor:
    s = _sigmoid(_data(a))

    def bwd(g):
        return (g * s * (1.0 - s),)

    return lift("sigmoid", s, (a,), bwd)


def swish(a) -> Tensor:
    """x * sigmoid(x)."""
    ad = _data(a)
    s = _sigmoid(ad)

    def bwd(g):
        return (g * (s + ad * s * (1.0 - s)),)

    return lift("swish", ad * s, (a,), bwd)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "swish": swish}


def activation(a, kind: str) -> Tensor:
    """Elementwise nonlinearity dispatch: relu | sigmoid | swish."""
    try:
        return _ACTIVATIONS[kind](a)
    except KeyError:
        raise DimensionError(f"unknown activation kind {kind!r}") from None


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    if ad.ndim != 2 or bd.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[1] != bd.shape[0]:
        raise DimensionError(
            f"matmul inner dims differ: {ad.shape[1]} (a axis 1) vs {bd.shape[0]} (b axis 0)"
        )

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return lift("matmul", ad @ bd, (a, b), bwd)


def _normalize_axis(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = _data(a)
    axes = _normalize_axis(axis, ad.ndim)
    out = ad.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gk, ad.shape).copy(),)

    return lift("sum", out, (a,), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = _data(a)
    axes = _normalize_axis(axis, ad.ndim)
    count = float(np.prod([ad.shape[i] for i in axes])) if axes else 1.0
    out = ad.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gk / count, ad.shape).copy(),)

    return lift("mean", out, (a,), bwd)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    ad = _data(a)
    return lift("reshape", ad.reshape(shape), (a,), lambda g: (g.reshape(ad.shape),))


def transpose(a, axes) -> Tensor:
    ad = _data(a)
    inverse = np.argsort(axes)
    return lift("transpose", ad.transpose(axes).copy(), (a,), lambda g: (g.transpose(inverse),))


def concat(tensors, axis: int) -> Tensor:
    datas = [_data(t) for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(datas))
        )

    return lift("concat", np.concatenate(datas, axis=axis), tuple(tensors), bwd)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis` starting at `start`."""
    ad = _data(a)
    if start < 0 or start + length > ad.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}] exceeds axis {axis} of size {ad.shape[axis]}"
        )
    index = [slice(None)] * ad.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def bwd(g):
        full = np.zeros_like(ad)
        full[index] = g
        return (full,)

    return lift("narrow", ad[index].copy(), (a,), bwd)


def split(a, sizes, axis: int) -> list[Tensor]:
    """Split into consecutive chunks of the given sizes along `axis`."""
    total = int(np.sum(sizes))
    if total != _data(a).shape[axis]:
        raise DimensionError(
            f"split sizes sum to {total} but axis {axis} has {_data(a).shape[axis]}"
        )
    out, start = [], 0
    for size in sizes:
        out.append(narrow(a, axis, start, size))
        start += size
    return out


def upsample2x(a) -> Tensor:
    """Nearest-neighbour 2x upsampling of an N,C,H,W tensor."""
    ad = _data(a)
    if ad.ndim != 4:
        raise DimensionError(f"upsample2x needs N,C,H,W input, got {ad.shape}")
    n, c, h, w = ad.shape
    out = ad.repeat(2, axis=2).repeat(2, axis=3)

    def bwd(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return lift("upsample2x", out, (a,), bwd)


# ---------------------------------------------------------------------------
# spatial primitives
# ---------------------------------------------------------------------------


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 2-D convolution (cross-correlation) with zero padding.

    Computed as an unrolled window/matrix product, which realizes the
    direct-convolution sum exactly; no FFT or Winograd transforms.
    """
    xd, wd = _data(x), _data(weight)
    if xd.ndim != 4:
        raise DimensionError(f"conv2d input must be N,C,H,W, got {xd.shape}")
    if wd.ndim != 4:
        raise DimensionError(f"conv2d weight must be Co,C,Kh,Kw, got {wd.shape}")
    if stride < 1:
        raise DimensionError(f"conv2d stride must be >= 1, got {stride}")
    n, c, h, w = xd.shape
    co, cw, kh, kw = wd.shape
    if c != cw:
        raise DimensionError(
            f"conv2d channel mismatch: input has {c} (axis 1), weight expects {cw} (axis 1)"
        )
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"kernel {kh}x{kw} exceeds padded spatial dims {hp}x{wp} (axes 2,3)"
        )
    bd = None
    if bias is not None:
        bd = _data(bias)
        if bd.shape != (co,):
            raise DimensionError(f"conv2d bias must have shape ({co},), got {bd.shape}")

    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # N,C,Ho,Wo,Kh,Kw
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = wd.reshape(co, -1)
    out_flat = cols @ wmat.T
    if bd is not None:
        out_flat = out_flat + bd
    out = out_flat.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)

    def bwd(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)
        grad_w = (g2.T @ cols).reshape(wd.shape)
        grad_b = g2.sum(axis=0) if bd is not None else None
        grad_cols = g2 @ wmat
        grad_win = grad_cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        grad_xp = np.zeros((n, c, hp, wp))
        for i in range(kh):
            for j in range(kw):
                grad_xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                    grad_win[:, :, :, :, i, j]
                )
        grad_x = grad_xp[:, :, padding : padding + h, padding : padding + w] if padding else grad_xp
        return grad_x, grad_w, grad_b

    return lift("conv2d", out, (x, weight, bias), bwd)


def global_avg_pool(x) -> Tensor:
    """Mean over the spatial dims: N,C,H,W -> N,C."""
    xd = _data(x)
    if xd.ndim != 4:
        raise DimensionError(f"global_avg_pool needs N,C,H,W input, got {xd.shape}")
    n, c, h, w = xd.shape

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), xd.shape).copy(),)

    return lift("global_avg_pool", xd.mean(axis=(2, 3)), (x,), bwd)


def batchnorm2d_train(x, gamma, beta, eps: float) -> tuple[Tensor, Array, Array]:
    """Per-channel standardization with batch statistics, then affine.

    Returns (output, batch_mean, biased_batch_var); the caller owns the
    running-statistics update.
    """
    xd, gd, bd = _data(x), _data(gamma), _data(beta)
    if xd.ndim != 4:
        raise DimensionError(f"batchnorm2d needs N,C,H,W input, got {xd.shape}")
    n, c, h, w = xd.shape
    if gd.shape != (c,) or bd.shape != (c,):
        raise DimensionError(
            f"batchnorm2d affine params must have shape ({c},), got {gd.shape} and {bd.shape}"
        )
    m = n * h * w
    if m < 2:
        raise DimensionError("batchnorm2d in train mode needs more than one value per channel")
    mean = xd.mean(axis=(0, 2, 3))
    var = xd.var(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gd[None, :, None, None] * xhat + bd[None, :, None, None]

    def bwd(g):
        grad_beta = g.sum(axis=(0, 2, 3))
        grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
        gxh = g * gd[None, :, None, None]
        sum_gxh = gxh.sum(axis=(0, 2, 3))
        sum_gxh_xhat = (gxh * xhat).sum(axis=(0, 2, 3))
        grad_x = (inv_std[None, :, None, None] / m) * (
            m * gxh - sum_gxh[None, :, None, None] - xhat * sum_gxh_xhat[None, :, None, None]
        )
        return grad_x, grad_gamma, grad_beta

    return lift("batchnorm2d_train", out, (x, gamma, beta), bwd), mean, var


def batchnorm2d_eval(x, gamma, beta, running_mean: Array, running_var: Array, eps: float) -> Tensor:
    """Per-channel affine standardization with frozen running statistics."""
    xd, gd, bd = _data(x), _data(gamma), _data(beta)
    if xd.ndim != 4:
        raise DimensionError(f"batchnorm2d needs N,C,H,W input, got {xd.shape}")
    c = xd.shape[1]
    if gd.shape != (c,):
        raise DimensionError(f"batchnorm2d gamma must have shape ({c},), got {gd.shape}")
    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (xd - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gd[None, :, None, None] * xhat + bd[None, :, None, None]

    def bwd(g):
        grad_beta = g.sum(axis=(0, 2, 3))
        grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
        grad_x = g * (gd * inv_std)[None, :, None, None]
        return grad_x, grad_gamma, grad_beta

    return lift("batchnorm2d_eval", out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# indexing and losses
# ---------------------------------------------------------------------------


def gather_cells(t, idx_n: Array, idx_a: Array, idx_h: Array, idx_w: Array) -> Tensor:
    """Pick (n, a, :, h, w) rows from an N,A,D,H,W tensor -> P,D."""
    td = _data(t)
    if td.ndim != 5:
        raise DimensionError(f"gather_cells needs N,A,D,H,W input, got {td.shape}")
    d = td.shape[2]
    out = td[idx_n, idx_a, :, idx_h, idx_w]

    def bwd(g):
        grad = np.zeros_like(td)
        for k in range(d):
            np.add.at(grad[:, :, k], (idx_n, idx_a, idx_h, idx_w), g[:, k])
        return (grad,)

    return lift("gather_cells", out, (t,), bwd)


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy on logits (numerically stable)."""
    xd = _data(logits)
    z = np.asarray(targets, dtype=np.float64)
    if z.shape != xd.shape:
        raise DimensionError(f"bce targets shape {z.shape} != logits shape {xd.shape}")
    out = np.maximum(xd, 0.0) - xd * z + np.log1p(np.exp(-np.abs(xd)))

    def bwd(g):
        return (g * (_sigmoid(xd) - z), None)

    return lift("bce_with_logits", out, (logits, None), bwd)
