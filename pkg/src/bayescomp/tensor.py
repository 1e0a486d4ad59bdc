"""Dense float64 tensors with reverse-mode differentiation.

Each ``Tensor`` produced by an operation keeps references to its parents and
a closure that maps the output gradient to parent gradients, so the graph is
recorded as it is built. ``backward`` walks that graph in reverse topological
order. Gradients are accumulated into ``.grad`` of leaf tensors created with
``requires_grad=True``; repeated calls without ``zero_grad`` accumulate.

The module-level functions (``exp``, ``log``, ``sigmoid`` ...) accept either
tensors or plain numpy values. Plain values are evaluated eagerly with numpy,
which lets closed-form formulas be written once and used both inside the
training graph and in standalone numeric checks.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, DomainError

SOFTPLUS_LINEAR_ABOVE = 30.0


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    # make ndarray <op> Tensor defer to the reflected Tensor methods
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise ContractError("only scalar exponents are supported")
        x = self.data
        out = x ** exponent

        def back(g):
            return (g * exponent * x ** (exponent - 1),)

        return _make(out, (self,), back, "pow")

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    @property
    def T(self):
        return transpose(self)


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that stops graph recording (for inference)."""

    def __enter__(self):
        _GRAD_ENABLED.append(False)

    def __exit__(self, *exc):
        _GRAD_ENABLED.pop()


def _make(data, parents, backward, op):
    if not _GRAD_ENABLED[-1]:
        return Tensor(data)
    if any(isinstance(p, Tensor) and p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _check_broadcast(a, b):
    sa, sb = np.shape(a), np.shape(b)
    if sa == sb or len(sa) == 0 or len(sb) == 0:
        return
    try:
        np.broadcast_shapes(sa, sb)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {sa} and {sb}") from None


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, fwd, back, op):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return fwd(_data(a), _data(b))
    ad, bd = _data(a), _data(b)
    _check_broadcast(ad, bd)
    out = fwd(ad, bd)

    def backward(g):
        ga, gb = back(g, ad, bd, out)
        return (
            None if ga is None else _unbroadcast(ga, ad.shape),
            None if gb is None else _unbroadcast(gb, bd.shape),
        )

    return _make(out, (a, b), backward, op)


def add(a, b):
    return _binary(a, b, np.add, lambda g, x, y, o: (g, g), "add")


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, x, y, o: (g, -g), "sub")


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, x, y, o: (g * y, g * x), "mul")


def div(a, b):
    return _binary(a, b, np.divide, lambda g, x, y, o: (g / y, -g * o / y), "div")


def _unary(x, fwd, back, op):
    if not isinstance(x, Tensor):
        return fwd(_data(x))
    xd = x.data
    out = fwd(xd)
    return _make(out, (x,), lambda g: (back(g, xd, out),), op)


def exp(x):
    return _unary(x, np.exp, lambda g, x_, o: g * o, "exp")


def log(x):
    if np.any(_data(x) < 0):
        raise DomainError("log of a negative value")
    return _unary(x, np.log, lambda g, x_, o: g / x_, "log")


def _sqrt_grad(g, x_, o):
    # subgradient 0 at the origin keeps zero-variance rows finite
    return g * np.divide(0.5, o, out=np.zeros_like(o), where=o > 0)


def sqrt(x):
    if np.any(_data(x) < 0):
        raise DomainError("sqrt of a negative value")
    return _unary(x, np.sqrt, _sqrt_grad, "sqrt")


def square(x):
    return _unary(x, np.square, lambda g, x_, o: 2.0 * g * x_, "square")


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    return _unary(x, _sigmoid, lambda g, x_, o: g * o * (1.0 - o), "sigmoid")


def _softplus(x):
    x = np.asarray(x, dtype=np.float64)
    safe = np.minimum(x, SOFTPLUS_LINEAR_ABOVE)
    return np.where(x > SOFTPLUS_LINEAR_ABOVE, x, np.log1p(np.exp(safe)))


def softplus(x):
    return _unary(x, _softplus, lambda g, x_, o: g * _sigmoid(x_), "softplus")


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda g, x_, o: g * (x_ > 0), "relu")


def tsum(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(out, (x,), back, "sum")


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x):
    x = as_tensor(x)
    return _make(x.data.T, (x,), lambda g: (g.T,), "transpose")


def matmul(a, b):
    ad, bd = _data(a), _data(b)
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")
    out = ad @ bd
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return out

    def back(g):
        ga = g @ bd.T if isinstance(a, Tensor) and a.requires_grad else None
        gb = ad.T @ g if isinstance(b, Tensor) and b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), back, "matmul")


def _pad_same(h, w):
    return (h - 1) // 2, h // 2, (w - 1) // 2, w // 2


def conv2d(x, k, padding="valid"):
    """Stride-1 cross-correlation of NHWC input with an HWIO kernel."""
    xd, kd = _data(x), _data(k)
    if xd.ndim != 4 or kd.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {xd.shape} and {kd.shape}")
    B, H, W, C = xd.shape
    kh, kw, kc, co = kd.shape
    if kc != C:
        raise DimensionError(f"conv2d channel mismatch: input {xd.shape}, kernel {kd.shape}")
    if padding == "same":
        t, b_, l, r = _pad_same(kh, kw)
    elif padding == "valid":
        t = b_ = l = r = 0
    else:
        raise ContractError(f"unknown padding {padding!r}")
    if kh > H + t + b_ or kw > W + l + r:
        raise DimensionError(f"kernel {kd.shape[:2]} larger than padded input {(H + t + b_, W + l + r)}")
    xp = np.pad(xd, ((0, 0), (t, b_), (l, r), (0, 0))) if t + b_ + l + r else xd
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # B,Ho,Wo,C,kh,kw
    Ho, Wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, kh * kw * C)
    out = (cols @ kd.reshape(kh * kw * C, co)).reshape(B, Ho, Wo, co)
    if not isinstance(x, Tensor) and not isinstance(k, Tensor):
        return out

    def back(g):
        g2 = g.reshape(B * Ho * Wo, co)
        gk = (cols.T @ g2).reshape(kd.shape) if isinstance(k, Tensor) and k.requires_grad else None
        gx = None
        if isinstance(x, Tensor) and x.requires_grad:
            dcols = (g2 @ kd.reshape(kh * kw * C, co).T).reshape(B, Ho, Wo, kh, kw, C)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + Ho, j:j + Wo, :] += dcols[:, :, :, i, j, :]
            gx = gxp[:, t:t + H, l:l + W, :]
        return gx, gk

    return _make(out, (x, k), back, "conv2d")


def mean_pool2d(x, size=2):
    x = as_tensor(x)
    B, H, W, C = x.shape
    if H % size or W % size:
        raise DimensionError(f"pooling size {size} does not divide spatial dims {(H, W)}")
    out = x.data.reshape(B, H // size, size, W // size, size, C).mean(axis=(2, 4))

    def back(g):
        g = np.repeat(np.repeat(g, size, axis=1), size, axis=2)
        return (g / (size * size),)

    return _make(out, (x,), back, "mean_pool2d")


def gaussian_kl_sum(mu, log_sigma2):
    """Fused sum of KL(N(mu, exp(log_sigma2)) || N(0, 1)) over all elements."""
    md, ld = _data(mu), _data(log_sigma2)
    s2 = np.exp(ld)
    out = 0.5 * (s2 - ld + md * md - 1.0).sum()
    if not isinstance(mu, Tensor) and not isinstance(log_sigma2, Tensor):
        return out

    def back(g):
        return g * md, (0.5 * g) * (s2 - 1.0)

    return _make(out, (mu, log_sigma2), back, "gaussian_kl_sum")


def cross_entropy(logits, labels):
    """Summed softmax cross-entropy of integer ``labels`` under ``logits``."""
    z = _data(logits)
    labels = np.asarray(labels, dtype=np.intp)
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(z.shape[0])
    out = -logp[rows, labels].sum()
    if not isinstance(logits, Tensor):
        return out

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p,)

    return _make(out, (logits,), back, "cross_entropy")


def _topo(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if isinstance(p, Tensor) and p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output):
    """Propagate d(output)/d(leaf) into every tracked leaf.

    Returns a dict mapping each tracked leaf to its accumulated gradient.
    The dict is empty when the output does not depend on any tracked tensor.
    """
    if not isinstance(output, Tensor):
        return {}
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return {}
    grads = {id(output): np.ones_like(output.data)}
    leaves = {}
    for node in reversed(_topo(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            leaves[node] = node.grad
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return leaves
