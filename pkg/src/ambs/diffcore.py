"""Reverse-mode automatic differentiation over dense numpy arrays.

Everything the learner touches (networks, losses, optimizer) runs through
the small primitive set defined here.  Values are float32 by default;
gradient checking may build the same graphs in float64 for stability.

Forward applications of primitives are recorded on a global tape (the
``Graph``).  ``backward`` walks the tape in reverse from a scalar loss and
accumulates vector-Jacobian products into ``Tensor.grad`` buffers.
"""

from __future__ import annotations

import struct

import numpy as np

DEFAULT_DTYPE = np.float32

_LOG_2PI = float(np.log(2.0 * np.pi))


class ContractViolation(ValueError):
    """Raised when an operation is applied outside its contract."""


# ---------------------------------------------------------------------------
# Graph and tensors
# ---------------------------------------------------------------------------


class GraphNode:
    """One recorded primitive application: op id, inputs, output, vjp.

    ``tracked`` pins each input's requires_grad as it was when the op ran;
    backward honors the flags from record time, so flipping a parameter's
    flag afterwards (e.g. a freeze context exiting) cannot re-route
    gradients into it.
    """

    __slots__ = ("op", "inputs", "out", "vjp", "tracked")

    def __init__(self, op, inputs, out, vjp):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.vjp = vjp
        self.tracked = tuple(t.requires_grad for t in inputs)


class Graph:
    """Append-only, topologically ordered record of primitive applications."""

    def __init__(self):
        self.nodes = []

    def clear(self):
        self.nodes.clear()


_GRAPH = Graph()


def active_graph():
    return _GRAPH


def reset_graph():
    """Drop all recorded nodes. Call between training updates to free memory."""
    _GRAPH.clear()


class Tensor:
    """Dense array with optional gradient tracking.

    ``data`` is a numpy array (row-major), ``grad`` is a same-shape buffer
    allocated lazily by ``backward``.  Tensors are immutable after forward;
    only optimizer steps write to parameter ``data`` in place.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            raise ContractViolation("wrap raw arrays, not Tensors")
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    # -- construction used internally by primitives (skips asarray cost) --
    @classmethod
    def _wrap(cls, arr, requires_grad):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.node = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return stop_gradient(self)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar over the primitive set --
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis=axis)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _record(op, out_data, inputs, vjp):
    rg = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, rg)
    if rg:
        node = GraphNode(op, tuple(inputs), out, vjp)
        out.node = node
        _GRAPH.nodes.append(node)
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` over axes that were broadcast to reach ``g.shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_shapes_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not conform")


# ---------------------------------------------------------------------------
# Primitive implementations
# ---------------------------------------------------------------------------


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: shapes {a.shape} @ {b.shape} do not conform")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", out, (a, b), vjp)


def _pad_edge_np(x, p):
    """Edge-replicate pad of the last two axes by p on every side."""
    if p == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    return np.pad(x, width, mode="edge")


def pad_replicate(x, p):
    """Edge-replication padding of the two trailing spatial axes."""
    if x.ndim < 2:
        raise ContractViolation(f"pad_replicate: need >=2 dims, got {x.shape}")
    p = int(p)
    if p < 0:
        raise ContractViolation("pad_replicate: negative pad")
    out = _pad_edge_np(x.data, p)

    def vjp(g):
        if p == 0:
            return (g,)
        H = x.shape[-2]
        W = x.shape[-1]
        # interior block, then fold the replicated borders back onto the edges
        gx = g[..., p : p + H, p : p + W].copy()
        gx[..., 0, :] += g[..., :p, p : p + W].sum(axis=-2)
        gx[..., -1, :] += g[..., p + H :, p : p + W].sum(axis=-2)
        gx[..., :, 0] += g[..., p : p + H, :p].sum(axis=-1)
        gx[..., :, -1] += g[..., p : p + H, p + W :].sum(axis=-1)
        gx[..., 0, 0] += g[..., :p, :p].sum(axis=(-1, -2))
        gx[..., 0, -1] += g[..., :p, p + W :].sum(axis=(-1, -2))
        gx[..., -1, 0] += g[..., p + H :, :p].sum(axis=(-1, -2))
        gx[..., -1, -1] += g[..., p + H :, p + W :].sum(axis=(-1, -2))
        return (gx,)

    return _record("pad_replicate", out, (x,), vjp)


def conv2d(x, w, stride=1):
    """Valid 2-D convolution (cross-correlation), stride 1 or 2.

    x: (B, C, H, W), w: (O, C, kh, kw).  Padding is applied beforehand via
    ``pad_replicate`` so callers control the padding policy.
    """
    if stride not in (1, 2):
        raise ContractViolation(f"conv2d: stride {stride} unsupported")
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ContractViolation(f"conv2d: shapes {x.shape}, {w.shape} do not conform")
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    if H < kh or W < kw:
        raise ContractViolation(f"conv2d: input {x.shape} smaller than kernel {w.shape}")
    OH = (H - kh) // stride + 1
    OW = (W - kw) // stride + 1

    win = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, OH, OW, kh, kw)
    # channels-major im2col: the innermost axis of the transpose stays
    # memory-contiguous, so the materializing copy runs in OW-length chunks
    # (the pixel-major layout copies kw floats at a time and is ~2x slower)
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(C * kh * kw, B * OH * OW)
    wmat = w.data.reshape(O, C * kh * kw)
    out = np.ascontiguousarray((wmat @ cols).reshape(O, B, OH, OW).transpose(1, 0, 2, 3))

    def vjp(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, B * OH * OW)
        gw = (gmat @ cols.T).reshape(O, C, kh, kw)
        gcols = (wmat.T @ gmat).reshape(C, kh, kw, B, OH, OW)
        gx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride] += (
                    gcols[:, i, j].transpose(1, 0, 2, 3)
                )
        return gx, gw

    return _record("conv2d", out, (x, w), vjp)


def relu(x):
    out = np.maximum(x.data, 0)

    def vjp(g):
        return (g * (x.data > 0),)

    return _record("relu", out, (x,), vjp)


def tanh(x):
    out = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _record("tanh", out, (x,), vjp)


def softmax(x):
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax", out, (x,), vjp)


def exp(x):
    out = np.exp(x.data)

    def vjp(g):
        return (g * out,)

    return _record("exp", out, (x,), vjp)


def log(x):
    out = np.log(x.data)

    def vjp(g):
        return (g / x.data,)

    return _record("log", out, (x,), vjp)


def sqrt(x):
    out = np.sqrt(x.data)

    def vjp(g):
        return (g / (2.0 * out),)

    return _record("sqrt", out, (x,), vjp)


def square(x):
    out = x.data * x.data

    def vjp(g):
        return (2.0 * x.data * g,)

    return _record("square", out, (x,), vjp)


def absval(x):
    """|x| with subgradient 0 at x == 0."""
    out = np.abs(x.data)

    def vjp(g):
        return (g * np.sign(x.data),)

    return _record("abs", out, (x,), vjp)


def add(a, b):
    _check_shapes_broadcast("add", a, b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", out, (a, b), vjp)


def sub(a, b):
    _check_shapes_broadcast("sub", a, b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", out, (a, b), vjp)


def mul(a, b):
    _check_shapes_broadcast("mul", a, b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", out, (a, b), vjp)


def div(a, b):
    _check_shapes_broadcast("div", a, b)
    out = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _record("div", out, (a, b), vjp)


def scalar_mul(x, k):
    k = float(k)
    out = x.data * x.dtype.type(k)

    def vjp(g):
        return (g * k,)

    return _record("scalar-mul", out, (x,), vjp)


def tsum(x, axis=None):
    out = x.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=False) * np.ones(1, x.dtype),)
        ge = np.expand_dims(g, axis)
        return (np.broadcast_to(ge, x.shape).copy(),)

    return _record("sum", np.asarray(out), (x,), vjp)


def tmean(x, axis=None):
    n = x.size if axis is None else x.shape[axis]
    out = x.data.mean(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.shape).copy(),)
        ge = np.expand_dims(g, axis) / n
        return (np.broadcast_to(ge, x.shape).copy(),)

    return _record("mean", np.asarray(out), (x,), vjp)


def concat(tensors, axis):
    tensors = tuple(tensors)
    if not tensors:
        raise ContractViolation("concat: no inputs")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i] : offsets[i + 1]], 0, axis) for i in range(len(tensors))
        )

    return _record("concat", out, tensors, vjp)


def minimum(a, b):
    """Elementwise pairwise min; ties route the gradient to the first input."""
    _check_shapes_broadcast("min", a, b)
    out = np.minimum(a.data, b.data)
    mask = a.data <= b.data

    def vjp(g):
        return _unbroadcast(g * mask, a.shape), _unbroadcast(g * (~mask), b.shape)

    return _record("min", out, (a, b), vjp)


def clamp(x, lo, hi):
    """Hard clamp; gradient passes only strictly inside [lo, hi]."""
    out = np.clip(x.data, lo, hi)
    mask = (x.data >= lo) & (x.data <= hi)

    def vjp(g):
        return (g * mask,)

    return _record("clamp", out, (x,), vjp)


def softplus(x):
    out = np.logaddexp(0.0, x.data).astype(x.dtype, copy=False)

    def vjp(g):
        return (g / (1.0 + np.exp(-x.data)),)

    return _record("softplus", out, (x,), vjp)


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _record("reshape", out, (x,), vjp)


def slice_last(x, start, stop):
    """Slice [start:stop] of the last axis."""
    out = x.data[..., start:stop]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = g
        return (gx,)

    return _record("slice-last", np.ascontiguousarray(out), (x,), vjp)


def gaussian_sample(mu, sigma, eps):
    """Reparameterized diagonal-Gaussian draw mu + sigma * eps.

    eps is a fixed noise tensor (no gradient flows into it).
    """
    if mu.shape != sigma.shape or mu.shape != eps.shape:
        raise ContractViolation(
            f"gaussian-sample: shapes {mu.shape}, {sigma.shape}, {eps.shape} differ"
        )
    out = mu.data + sigma.data * eps.data

    def vjp(g):
        return g, g * eps.data, None

    return _record("gaussian-sample", out, (mu, sigma, eps), vjp)


def gaussian_log_density(x, mu, sigma):
    """Log density of a diagonal Gaussian, summed over the last axis."""
    if x.shape != mu.shape or x.shape != sigma.shape:
        raise ContractViolation(
            f"gaussian-log-density: shapes {x.shape}, {mu.shape}, {sigma.shape} differ"
        )
    z = (x.data - mu.data) / sigma.data
    out = -0.5 * (z * z + _LOG_2PI).sum(axis=-1) - np.log(sigma.data).sum(axis=-1)

    def vjp(g):
        ge = np.expand_dims(g, -1)
        gx = -ge * z / sigma.data
        gmu = -gx
        gsig = ge * (z * z - 1.0) / sigma.data
        return gx, gmu, gsig

    return _record("gaussian-log-density", np.asarray(out), (x, mu, sigma), vjp)


def tanh_log_jacobian(u):
    """sum(log(1 - tanh(u)^2)) over the last axis, computed stably.

    Uses log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
    """
    s = np.logaddexp(0.0, -2.0 * u.data)
    out = (2.0 * (np.log(2.0) - u.data - s)).sum(axis=-1)

    def vjp(g):
        return (np.expand_dims(g, -1) * (-2.0 * np.tanh(u.data)),)

    return _record("tanh-log-jacobian", np.asarray(out, dtype=u.dtype), (u,), vjp)


def stop_gradient(t):
    """Value-identical tensor detached from the graph (shares the buffer)."""
    out = Tensor.__new__(Tensor)
    out.data = t.data
    out.requires_grad = False
    out.grad = None
    out.node = None
    return out


# Registry of primitive ids for the generic application door.  Extra ops
# beyond the core set (clamp, softplus, reshape, ...) are deliberate
# conveniences and live under their own ids.
PRIMITIVES = {
    "matmul": matmul,
    "conv2d": conv2d,
    "pad-replicate": pad_replicate,
    "relu": relu,
    "tanh": tanh,
    "softmax": softmax,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "square": square,
    "abs": absval,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scalar-mul": scalar_mul,
    "mean": tmean,
    "sum": tsum,
    "concat": concat,
    "min": minimum,
    "clamp": clamp,
    "softplus": softplus,
    "reshape": reshape,
    "slice-last": slice_last,
    "gaussian-sample": gaussian_sample,
    "gaussian-log-density": gaussian_log_density,
    "tanh-log-jacobian": tanh_log_jacobian,
}


def apply_primitive(op, inputs, **kwargs):
    """Apply a primitive by id.  Unknown ids are rejected."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise ContractViolation(f"unknown primitive id: {op!r}")
    if op == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def backward(loss):
    """Accumulate d(loss)/d(tensor) into .grad for every reachable tensor.

    ``loss`` must be a scalar.  Each graph node is visited exactly once, in
    reverse topological (tape) order.
    """
    if loss.size != 1:
        raise ContractViolation(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
        return

    reachable = set()
    stack = [loss.node]
    while stack:
        node = stack.pop()
        if id(node) in reachable:
            continue
        reachable.add(id(node))
        for t in node.inputs:
            if t.node is not None and id(t.node) not in reachable:
                stack.append(t.node)

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_GRAPH.nodes):
        if id(node) not in reachable:
            continue
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        node.out.grad = g if node.out.grad is None else node.out.grad + g
        in_grads = node.vjp(g)
        for t, gi, was_tracked in zip(node.inputs, in_grads, node.tracked):
            if gi is None or not was_tracked:
                continue
            if t.node is None:
                _accumulate(t, gi)
            else:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi


def _accumulate(t, g):
    g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def zero_grads(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Optimizer and target updates
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment buffers plus step counter for one parameter group."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.skipped = 0


def adam_step(params, grads, state, lr):
    """One Adam update with bias correction.

    Any non-finite gradient causes the whole step to be skipped (and
    counted on ``state.skipped``).  Returns True when the step applied.
    """
    if lr <= 0:
        raise ContractViolation(f"adam_step: lr must be positive, got {lr}")
    gs = []
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ContractViolation(f"adam_step: grad shape {g.shape} != param {p.data.shape}")
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            return False
        gs.append(g)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
    return True


def soft_update(target_params, online_params, tau):
    """target <- tau * online + (1 - tau) * target, elementwise in place."""
    if not (0.0 <= tau <= 1.0):
        raise ContractViolation(f"soft_update: tau {tau} outside [0, 1]")
    for tp, op in zip(target_params, online_params):
        if tp.data.shape != op.data.shape:
            raise ContractViolation(
                f"soft_update: shape {tp.data.shape} != {op.data.shape}"
            )
        tp.data *= 1.0 - tau
        tp.data += tau * op.data


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


class FDReport:
    """Outcome of a finite-difference check: worst coordinate and error."""

    def __init__(self):
        self.max_rel_err = 0.0
        self.worst = None  # (param index, flat coordinate)
        self.nonfinite = []

    @property
    def ok(self):
        return not self.nonfinite and np.isfinite(self.max_rel_err)

    def __repr__(self):
        return f"FDReport(max_rel_err={self.max_rel_err:.3e}, worst={self.worst})"


def finite_difference_check(f, params, eps=1e-5, max_coords=16, rng=None):
    """Compare backward gradients of f() against central differences.

    ``f`` rebuilds and returns the scalar loss from the current values of
    ``params``; it must be deterministic given fixed random draws.  Up to
    ``max_coords`` coordinates per parameter are sampled.  Relative error is
    |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|), maximized over coordinates.
    """
    if eps <= 0:
        raise ContractViolation("finite_difference_check: eps must be positive")
    if rng is None:
        rng = np.random.default_rng(0)

    zero_grads(params)
    loss = f()
    backward(loss)
    ad_grads = [None if p.grad is None else p.grad.copy() for p in params]

    report = FDReport()
    for pi, p in enumerate(params):
        n = p.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        g_ad_flat = np.zeros(n) if ad_grads[pi] is None else ad_grads[pi].reshape(-1)
        for ci in coords:
            # index the array directly: a flat reshape of a non-contiguous
            # parameter would be a copy and the perturbation would be lost
            idx = np.unravel_index(ci, p.data.shape)
            orig = p.data[idx]
            p.data[idx] = orig + eps
            fp = float(f().data)
            p.data[idx] = orig - eps
            fm = float(f().data)
            p.data[idx] = orig
            g_fd = (fp - fm) / (2.0 * eps)
            g_ad = float(g_ad_flat[ci])
            if not (np.isfinite(g_fd) and np.isfinite(g_ad)):
                report.nonfinite.append((pi, int(ci)))
                continue
            rel = abs(g_ad - g_fd) / max(1e-8, abs(g_ad) + abs(g_fd))
            if rel > report.max_rel_err:
                report.max_rel_err = rel
                report.worst = (pi, int(ci))
    return report


# ---------------------------------------------------------------------------
# Checkpoint format: named tensor map
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"AMBS1"


def save_tensor_map(path, named_arrays):
    """Write a named-tensor map.

    Layout: magic "AMBS1", u64 entry count, then per entry: u64 name byte
    length, UTF-8 name, u64 rank, u64 dims..., float32 values.  All integers
    little-endian.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(named_arrays)))
        for name, arr in named_arrays.items():
            arr = np.asarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<Q", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.tobytes(order="C"))


def load_tensor_map(path):
    """Read a named-tensor map written by ``save_tensor_map``."""
    out = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ContractViolation(f"bad checkpoint magic: {magic!r}")
        (count,) = struct.unpack("<Q", fh.read(8))
        for _ in range(count):
            (nlen,) = struct.unpack("<Q", fh.read(8))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<Q", fh.read(8))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            nval = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(fh.read(4 * nval), dtype="<f4").reshape(dims)
            out[name] = data.astype(np.float32)
    return out
