"""Dense tensors with reverse-mode automatic differentiation.

Everything is 64-bit floating point.  A forward pass records a graph of
vector-Jacobian-product closures; ``Tensor.backward`` replays it in reverse
topological order and accumulates gradients.  The graph is held only by the
tensors themselves, so it is freed as soon as the rollout that built it goes
out of scope.

Broadcasting is deliberately restricted: two operands must have equal shapes,
or one of them must be a scalar or a trailing-suffix shape of the other
(e.g. a bias of shape ``(k,)`` added to activations of shape ``(n, k)``).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


class GraphError(RuntimeError):
    """Raised on misuse of the autodiff graph (e.g. non-scalar backward root)."""


class NumericError(ArithmeticError):
    """Raised when a numeric check encounters non-finite values."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


def _check_broadcast(op, a_shape, b_shape):
    """Allow equal shapes, scalar operands, or trailing-suffix broadcast."""
    if a_shape == b_shape:
        return
    an, bn = int(np.prod(a_shape)), int(np.prod(b_shape))
    if an == 1 or bn == 1:
        return
    small, big = (a_shape, b_shape) if len(a_shape) <= len(b_shape) else (b_shape, a_shape)
    if len(small) < len(big) and big[len(big) - len(small):] == small:
        return
    raise ShapeError(f"{op}: shapes {a_shape} and {b_shape} do not conform")


def _reduce_to(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == tuple(shape):
        return g
    if int(np.prod(shape)) == 1:
        return np.sum(g).reshape(shape)
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g.reshape(shape)


class Tensor:
    """A dense float64 array that may participate in the autodiff graph.

    ``requires_grad`` is True for trainable leaves and for any node computed
    from one; after a backward pass every such node holds its gradient in
    ``grad`` (same shape as ``data``).  Repeated backward calls accumulate.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(data, parents, vjp):
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        return out

    def detach(self):
        """A constant view of the same values; no gradient flows across it."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    # -- backward -----------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(node) into ``grad`` for every differentiable
        ancestor.  ``self`` must be a scalar attached to the graph."""
        if self.data.size != 1:
            raise GraphError(f"backward root must be scalar, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        adjoint = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                # adjoint arrays are never mutated in place, so aliasing is safe
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = adjoint.get(id(parent))
                adjoint[id(parent)] = pg if acc is None else acc + pg

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise binary ops -------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("add", a.shape, b.shape)
    data = a.data + b.data

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor._result(data, (a, b), vjp)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return Tensor._result(ad * bd, (a, b), vjp)


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("div", a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g):
        return _reduce_to(g / bd, a.shape), _reduce_to(-g * ad / (bd * bd), b.shape)

    return Tensor._result(ad / bd, (a, b), vjp)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def vjp(g):
        return (g @ bd.T if need_a else None, ad.T @ g if need_b else None)

    return Tensor._result(ad @ bd, (a, b), vjp)


def affine(x, W, b, activation_pair=None):
    """Fused activation(x @ W + b); one tape node for a whole dense layer.

    ``activation_pair`` is ``(forward, local_derivative_from_output)`` or None
    for the identity.
    """
    x, W, b = _wrap(x), _wrap(W), _wrap(b)
    if x.data.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"affine: shapes {x.shape}, {W.shape}, {b.shape} do not conform")
    out = x.data @ W.data + b.data
    if activation_pair is None:
        local = None
    else:
        fwd, deriv = activation_pair
        out = fwd(out)
        local = deriv(out)
    xd, Wd = x.data, W.data
    need_x = x.requires_grad

    def vjp(g):
        gp = g if local is None else g * local
        return (gp @ Wd.T if need_x else None, xd.T @ gp, gp.sum(axis=0))

    return Tensor._result(out, (x, W, b), vjp)


# -- elementwise unary ops --------------------------------------------------

def _unary(a, data, local):
    a = _wrap(a)

    def vjp(g):
        return (g * local,)

    return Tensor._result(data, (a,), vjp)


def sigmoid(a):
    a = _wrap(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    return _unary(a, s, s * (1.0 - s))


def tanh(a):
    a = _wrap(a)
    t = np.tanh(a.data)
    return _unary(a, t, 1.0 - t * t)


def relu(a):
    a = _wrap(a)
    d = a.data
    return _unary(a, np.maximum(d, 0.0), d > 0.0)


def exp(a):
    a = _wrap(a)
    e = np.exp(a.data)
    return _unary(a, e, e)


def log(a):
    a = _wrap(a)
    return _unary(a, np.log(a.data), 1.0 / a.data)


def square(a):
    a = _wrap(a)
    return _unary(a, a.data * a.data, 2.0 * a.data)


def clamp(a, lo, hi):
    """Hard clamp; the gradient is the true clamp derivative (zero outside)."""
    a = _wrap(a)
    d = a.data
    inside = ((d >= lo) & (d <= hi)).astype(np.float64)
    return _unary(a, np.clip(d, lo, hi), inside)


# -- reductions and shape ops ----------------------------------------------

def tsum(a, axis=None):
    a = _wrap(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor._result(np.sum(a.data, axis=axis), (a,), vjp)


def mean(a, axis=None):
    a = _wrap(a)
    shape = a.shape
    n = a.data.size if axis is None else shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / n, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return Tensor._result(np.mean(a.data, axis=axis), (a,), vjp)


def sorted_mean(a, axis):
    """Mean over one axis, summing in sorted value order.

    Sorting first makes the result bitwise invariant to permutations along
    the reduced axis; the gradient of a mean does not depend on term order,
    so the backward pass is the same as for ``mean``.
    """
    a = _wrap(a)
    shape = a.shape
    n = shape[axis]

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), shape).copy(),)

    return Tensor._result(np.sort(a.data, axis=axis).mean(axis=axis), (a,), vjp)


def reshape(a, shape):
    a = _wrap(a)
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return Tensor._result(a.data.reshape(shape), (a,), vjp)


def concat(tensors, axis=-1):
    tensors = [_wrap(t) for t in tensors]
    datas = [t.data for t in tensors]
    nd = datas[0].ndim
    for d in datas:
        if d.ndim != nd:
            raise ShapeError(f"concat: rank mismatch {[x.shape for x in datas]}")
    ax = axis % nd
    widths = [d.shape[ax] for d in datas]
    splits = np.cumsum(widths)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=ax))

    return Tensor._result(np.concatenate(datas, axis=ax), tuple(tensors), vjp)


def tile_axis(a, axis, reps):
    """Insert a new axis and repeat along it; gradient sums over the copies."""
    a = _wrap(a)
    data = np.repeat(np.expand_dims(a.data, axis), reps, axis=axis)

    def vjp(g):
        return (g.sum(axis=axis),)

    return Tensor._result(data, (a,), vjp)


def take(a, key):
    """Basic (non-fancy) slicing."""
    a = _wrap(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[key] = g
        return (out,)

    return Tensor._result(a.data[key], (a,), vjp)


# -- finite-difference oracle ----------------------------------------------

def grad_check(f, at, step=1e-5):
    """Compare reverse-mode gradients of a scalar function against central
    finite differences.

    Returns the maximum over coordinates of
    ``|analytic - numeric| / (|numeric| + 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = Tensor(_as_array(at).copy(), requires_grad=True)
    out = f(x)
    if out.data.size != 1:
        raise GraphError("grad_check target must be scalar-valued")
    out.backward()
    analytic = x.grad.ravel().copy()

    flat = x.data.ravel()
    numeric = np.empty_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(x).item()
            flat[i] = orig - step
            lo = f(x).item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(f"non-finite value at perturbed coordinate {i}")
            numeric[i] = (hi - lo) / (2.0 * step)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))


def symlog(x):
    """Sign-preserving log squash ``sign(x) * log1p(|x|)`` (plain ndarray op)."""
    x = _as_array(x)
    return np.sign(x) * np.log1p(np.abs(x))
