"""Dense-tensor engine with reverse-mode automatic differentiation.

Everything is double precision and CPU-only. A ``Tensor`` is a node in a
computation graph: it owns a numpy array, an (initially unset) gradient
buffer, references to its parent nodes and a closure that propagates its
gradient to those parents. Operations that involve at least one
gradient-tracking tensor extend the graph; operations on constants produce
plain constant nodes so evaluation-only code pays no graph cost.

Broadcasting is deliberately limited to bias addition; every other binary
operation requires exactly matching shapes.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor",
    "ParameterSet",
    "constant",
    "parameter",
    "backward",
    "finite_diff_check",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "add_scalar",
    "neg",
    "abs_",
    "exp",
    "log",
    "sqrt",
    "softplus",
    "leaky_relu",
    "matmul",
    "transpose2d",
    "reshape",
    "total_sum",
    "mean",
    "sum_axis",
    "min_axis",
    "max_axis",
    "repeat_axis",
    "concat_channels",
    "narrow_channels",
    "add_bias",
    "conv2d",
    "pixel_shuffle",
    "pixel_unshuffle",
    "reflect_pad2d",
]


def _as_f64(data):
    arr = np.asarray(data, dtype=np.float64)
    # ascontiguousarray would promote 0-d to 1-d, so only call it when needed.
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """Computation-graph node holding a float64 array and its gradient.

    External data passed to the public constructor must be finite; NaN and
    Inf are rejected there. Internal operations build nodes through
    :func:`make_node`, which skips that check for speed.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_rule")

    def __init__(self, data, requires_grad=False):
        arr = _as_f64(data)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor data must be finite (got NaN or Inf)")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = ()
        self.backward_rule = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() requires a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """Constant view of this tensor's value, cut out of the graph."""
        return make_node(self.data.copy(), (), None, requires_grad=False)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        backward(self)

    # Convenience arithmetic; same-shape or scalar operands only.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def sum(self):
        return total_sum(self)

    def mean(self):
        return mean(self)


def make_node(data, parents, backward_rule, requires_grad=None):
    """Build a graph node without re-validating finiteness.

    ``backward_rule(grad)`` must accumulate into each parent's ``grad``.
    When no parent tracks gradients the node degrades to a constant.
    """
    t = Tensor.__new__(Tensor)
    t.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 else _as_f64(data)
    t.grad = None
    if requires_grad is None:
        requires_grad = any(p.requires_grad for p in parents)
    t.requires_grad = requires_grad
    if requires_grad:
        t.parents = tuple(parents)
        t.backward_rule = backward_rule
    else:
        t.parents = ()
        t.backward_rule = None
    return t


def constant(data):
    """Finite-checked constant tensor (no gradient tracking)."""
    return Tensor(data, requires_grad=False)


def parameter(data):
    """Finite-checked leaf tensor that tracks gradients."""
    return Tensor(data, requires_grad=True)


class ParameterSet:
    """Named map of gradient-tracking leaf tensors.

    Iteration is always in sorted-name order so that optimizer sweeps,
    checkpoints and finite-difference scans are deterministic.
    """

    def __init__(self, entries=None):
        self._params = {}
        if entries:
            for name, tensor in entries.items():
                self.add(name, tensor)

    def add(self, name, tensor):
        if name in self._params:
            raise ContractError(f"duplicate parameter name: {name!r}")
        if not isinstance(tensor, Tensor) or not tensor.requires_grad:
            raise ContractError(f"parameter {name!r} must be a gradient-tracking Tensor")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(name, self._params[name]) for name in self.names()]

    def tensors(self):
        return [self._params[name] for name in self.names()]

    def zero_grad(self):
        for _, p in self.items():
            p.zero_grad()

    def copy_values(self):
        """Snapshot of all parameter arrays, keyed by name."""
        return {name: p.data.copy() for name, p in self.items()}

    def load_values(self, values):
        for name, p in self.items():
            if name not in values:
                raise ContractError(f"missing value for parameter {name!r}")
            src = np.asarray(values[name], dtype=np.float64)
            if src.shape != p.data.shape:
                raise DimensionError(
                    f"parameter {name!r}: stored shape {src.shape} != model shape {p.data.shape}"
                )
            p.data[...] = src

    def count(self):
        return sum(p.data.size for p in self._params.values())


# ---------------------------------------------------------------------------
# backward driver


def _topo_order(root):
    """Iterative post-order over the graph reachable from ``root``."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss):
    """Propagate d(loss)/d(node) into every reachable gradient-tracking node.

    Gradients of leaf tensors accumulate across calls; interior node
    gradients are reset per call, so running backward twice on the same
    graph exactly doubles every leaf gradient.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    for node in order:
        if node.parents:
            node.grad = np.zeros_like(node.data)
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)
    for node in reversed(order):
        if node.backward_rule is not None:
            node.backward_rule(node.grad)


# ---------------------------------------------------------------------------
# elementwise operations


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a, b):
    _check_same_shape(a, b, "add")
    out_data = a.data + b.data

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return make_node(out_data, (a, b), rule)


def sub(a, b):
    _check_same_shape(a, b, "sub")
    out_data = a.data - b.data

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    return make_node(out_data, (a, b), rule)


def mul(a, b):
    _check_same_shape(a, b, "mul")
    out_data = a.data * b.data

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return make_node(out_data, (a, b), rule)


def div(a, b):
    _check_same_shape(a, b, "div")
    out_data = a.data / b.data

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(g / b.data)
        if b.requires_grad:
            b.accumulate_grad(-g * a.data / (b.data * b.data))

    return make_node(out_data, (a, b), rule)


def scale(x, c):
    c = float(c)
    out_data = x.data * c

    def rule(g):
        x.accumulate_grad(g * c)

    return make_node(out_data, (x,), rule)


def add_scalar(x, c):
    c = float(c)
    out_data = x.data + c

    def rule(g):
        x.accumulate_grad(g)

    return make_node(out_data, (x,), rule)


def neg(x):
    def rule(g):
        x.accumulate_grad(-g)

    return make_node(-x.data, (x,), rule)


def abs_(x):
    # Subgradient 0 at exact zeros (np.sign convention).
    sign = np.sign(x.data)

    def rule(g):
        x.accumulate_grad(g * sign)

    return make_node(np.abs(x.data), (x,), rule)


def exp(x):
    out_data = np.exp(x.data)

    def rule(g):
        x.accumulate_grad(g * out_data)

    return make_node(out_data, (x,), rule)


def log(x):
    out_data = np.log(x.data)

    def rule(g):
        x.accumulate_grad(g / x.data)

    return make_node(out_data, (x,), rule)


def sqrt(x):
    out_data = np.sqrt(x.data)

    def rule(g):
        x.accumulate_grad(g * 0.5 / out_data)

    return make_node(out_data, (x,), rule)


def softplus(x):
    """log(1 + exp(x)) in overflow-safe form; gradient is the sigmoid."""
    out_data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))

    def rule(g):
        z = x.data
        sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        x.accumulate_grad(g * sig)

    return make_node(out_data, (x,), rule)


def leaky_relu(x, slope):
    """Elementwise max(x, slope*x); at 0 the negative-side slope is used."""
    slope = float(slope)
    if not 0.0 <= slope < 1.0:
        raise ContractError(f"leaky_relu slope must be in [0, 1), got {slope}")
    positive = x.data > 0
    out_data = np.where(positive, x.data, slope * x.data)

    def rule(g):
        x.accumulate_grad(g * np.where(positive, 1.0, slope))

    return make_node(out_data, (x,), rule)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def rule(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return make_node(out_data, (a, b), rule)


def transpose2d(x):
    if x.data.ndim != 2:
        raise DimensionError(f"transpose2d expects a matrix, got shape {x.data.shape}")

    def rule(g):
        x.accumulate_grad(np.ascontiguousarray(g.T))

    return make_node(np.ascontiguousarray(x.data.T), (x,), rule)


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    out_data = x.data.reshape(shape)

    def rule(g):
        x.accumulate_grad(g.reshape(x.data.shape))

    return make_node(np.ascontiguousarray(out_data), (x,), rule)


def total_sum(x):
    out_data = np.asarray(x.data.sum())

    def rule(g):
        x.accumulate_grad(np.full_like(x.data, g.reshape(-1)[0]))

    return make_node(out_data, (x,), rule)


def mean(x):
    n = x.data.size
    out_data = np.asarray(x.data.mean())

    def rule(g):
        x.accumulate_grad(np.full_like(x.data, g.reshape(-1)[0] / n))

    return make_node(out_data, (x,), rule)


def sum_axis(x, axis, keepdims=True):
    axis = int(axis)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        x.accumulate_grad(np.broadcast_to(gg, x.data.shape).copy())

    return make_node(out_data, (x,), rule)


def _extreme_axis(x, axis, keepdims, argfn, reducefn):
    axis = int(axis)
    idx = argfn(x.data, axis=axis)
    out_data = reducefn(x.data, axis=axis, keepdims=keepdims)

    def rule(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        buf = np.zeros_like(x.data)
        np.put_along_axis(buf, np.expand_dims(idx, axis), gg, axis=axis)
        x.accumulate_grad(buf)

    return make_node(out_data, (x,), rule)


def min_axis(x, axis, keepdims=True):
    """Minimum along an axis; ties route the gradient to the first minimizer."""
    return _extreme_axis(x, axis, keepdims, np.argmin, np.min)


def max_axis(x, axis, keepdims=True):
    """Maximum along an axis; ties route the gradient to the first maximizer."""
    return _extreme_axis(x, axis, keepdims, np.argmax, np.max)


def repeat_axis(x, axis, reps):
    """Tile a singleton axis ``reps`` times (explicit stand-in for broadcasting)."""
    axis = int(axis)
    if x.data.shape[axis] != 1:
        raise DimensionError(f"repeat_axis needs size-1 axis {axis}, got shape {x.data.shape}")
    out_data = np.repeat(x.data, int(reps), axis=axis)

    def rule(g):
        x.accumulate_grad(g.sum(axis=axis, keepdims=True))

    return make_node(out_data, (x,), rule)


def concat_channels(tensors):
    """Concatenate [N,C_i,H,W] tensors along the channel axis."""
    shapes = [t.data.shape for t in tensors]
    base = shapes[0]
    for s in shapes:
        if len(s) != 4 or s[0] != base[0] or s[2:] != base[2:]:
            raise DimensionError(f"concat_channels: incompatible shapes {shapes}")
    out_data = np.concatenate([t.data for t in tensors], axis=1)
    offsets = np.cumsum([0] + [s[1] for s in shapes])

    def rule(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.accumulate_grad(g[:, lo:hi])

    return make_node(out_data, tuple(tensors), rule)


def narrow_channels(x, start, length):
    """Channel slice [N, start:start+length, H, W]."""
    start, length = int(start), int(length)
    if x.data.ndim != 4 or start < 0 or start + length > x.data.shape[1]:
        raise DimensionError(
            f"narrow_channels: slice [{start}:{start + length}] out of {x.data.shape}"
        )
    out_data = np.ascontiguousarray(x.data[:, start : start + length])

    def rule(g):
        buf = np.zeros_like(x.data)
        buf[:, start : start + length] = g
        x.accumulate_grad(buf)

    return make_node(out_data, (x,), rule)


def add_bias(x, b):
    """Bias broadcast: [N,C,H,W] + [C] or [N,D] + [D]. The engine's only broadcast."""
    if x.data.ndim == 4 and b.data.shape == (x.data.shape[1],):
        out_data = x.data + b.data[None, :, None, None]
        reduce_axes = (0, 2, 3)
    elif x.data.ndim == 2 and b.data.shape == (x.data.shape[1],):
        out_data = x.data + b.data[None, :]
        reduce_axes = (0,)
    else:
        raise DimensionError(f"add_bias: input {x.data.shape} with bias {b.data.shape}")

    def rule(g):
        if x.requires_grad:
            x.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=reduce_axes))

    return make_node(out_data, (x, b), rule)


# ---------------------------------------------------------------------------
# convolution and pixel rearrangement


def _conv_windows(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, ho, wo, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def conv2d(x, w, b=None, stride=1, pad=0):
    """2-D cross-correlation with zero padding.

    input [N,C,H,W] * weight [O,C,kH,kW] (+ bias [O]) -> [N,O,H',W'] with
    H' = (H + 2*pad - kH)//stride + 1. Differentiable in input, weight, bias.
    """
    stride, pad = int(stride), int(pad)
    if stride < 1:
        raise ContractError(f"conv2d stride must be >= 1, got {stride}")
    if pad < 0:
        raise ContractError(f"conv2d pad must be >= 0, got {pad}")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d: input {x.data.shape}, weight {w.data.shape}")
    n, c, h, wd = x.data.shape
    o, cw, kh, kw = w.data.shape
    if cw != c:
        raise DimensionError(f"conv2d: input channels {c} != weight channels {cw}")
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * pad}x{wd + 2 * pad}"
        )
    if b is not None and b.data.shape != (o,):
        raise DimensionError(f"conv2d: bias shape {b.data.shape} != ({o},)")

    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1

    if pad:
        xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
        xp[:, :, pad : pad + h, pad : pad + wd] = x.data
    else:
        xp = x.data
    windows = _conv_windows(xp, kh, kw, stride, ho, wo)
    # im2col: one GEMM for the whole batch.
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    out = cols @ wmat.T
    if b is not None:
        out += b.data[None, :]
    out_data = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def rule(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        if b is not None and b.requires_grad:
            b.accumulate_grad(gmat.sum(axis=0))
        if w.requires_grad:
            w.accumulate_grad((gmat.T @ cols).reshape(o, c, kh, kw))
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
            for u in range(kh):
                for v in range(kw):
                    gxp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += (
                        gcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
                    )
            x.accumulate_grad(gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out_data, parents, rule)


def pixel_shuffle(x, r):
    """Depth-to-space: [N, C*r^2, H, W] -> [N, C, H*r, W*r]."""
    r = int(r)
    if x.data.ndim != 4 or x.data.shape[1] % (r * r) != 0:
        raise DimensionError(
            f"pixel_shuffle: channels {x.data.shape} not divisible by r^2={r * r}"
        )
    n, crr, h, w = x.data.shape
    c = crr // (r * r)
    out_data = np.ascontiguousarray(
        x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)
    )

    def rule(g):
        gx = g.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, crr, h, w)
        x.accumulate_grad(np.ascontiguousarray(gx))

    return make_node(out_data, (x,), rule)


def pixel_unshuffle(x, r):
    """Space-to-depth inverse of :func:`pixel_shuffle`."""
    r = int(r)
    if x.data.ndim != 4 or x.data.shape[2] % r or x.data.shape[3] % r:
        raise DimensionError(f"pixel_unshuffle: spatial dims of {x.data.shape} not divisible by {r}")
    n, c, hr, wr = x.data.shape
    h, w = hr // r, wr // r
    out_data = np.ascontiguousarray(
        x.data.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)
    )

    def rule(g):
        gx = g.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, hr, wr)
        x.accumulate_grad(np.ascontiguousarray(gx))

    return make_node(out_data, (x,), rule)


def reflect_pad2d(x, p):
    """Reflect padding (edge samples not repeated) on both spatial axes."""
    p = int(p)
    if p < 0:
        raise ContractError(f"reflect_pad2d: negative pad {p}")
    if x.data.ndim != 4:
        raise DimensionError(f"reflect_pad2d expects [N,C,H,W], got {x.data.shape}")
    h, w = x.data.shape[2:]
    if p >= h or p >= w:
        raise DimensionError(f"reflect_pad2d: pad {p} too large for spatial dims {h}x{w}")
    out_data = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
    rows = np.pad(np.arange(h), p, mode="reflect")
    cols = np.pad(np.arange(w), p, mode="reflect")

    def rule(g):
        buf = np.zeros_like(x.data)
        # Rows/cols map each padded coordinate back to its source sample.
        np.add.at(buf, (slice(None), slice(None), rows[:, None], cols[None, :]), g)
        x.accumulate_grad(buf)

    return make_node(out_data, (x,), rule)


# ---------------------------------------------------------------------------
# gradient verification


def finite_diff_check(f, params, step=1e-5):
    """Worst-case symmetric relative error between analytic and central-difference gradients.

    ``f`` maps a :class:`ParameterSet` to a scalar (Tensor or float) and must
    be deterministic. Returns
    max over parameter entries of |analytic - central| / (|analytic| + |central| + 1e-12).
    """
    step = float(step)
    if step <= 0:
        raise ContractError(f"finite_diff_check: step must be positive, got {step}")

    def eval_scalar():
        out = f(params)
        if isinstance(out, Tensor):
            if out.data.size != 1:
                raise ContractError(f"finite_diff_check: objective must be scalar, got {out.data.shape}")
            val = float(out.data.reshape(-1)[0])
        else:
            val = float(out)
        if not np.isfinite(val):
            raise NumericError("finite_diff_check: objective returned a non-finite value")
        return out, val

    params.zero_grad()
    loss, _ = eval_scalar()
    if not isinstance(loss, Tensor):
        raise ContractError("finite_diff_check: objective must return a Tensor for the analytic pass")
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        gflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            _, f_plus = eval_scalar()
            flat[i] = orig - step
            _, f_minus = eval_scalar()
            flat[i] = orig
            central = (f_plus - f_minus) / (2.0 * step)
            err = abs(gflat[i] - central) / (abs(gflat[i]) + abs(central) + 1e-12)
            if err > worst:
                worst = err
    return worst
