"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine is deliberately small: it supports exactly the operations the
matching pipeline needs (affine layers, strided convolution, ReLU,
inverted dropout, pooling, concatenation, row gathering and the scalar
reductions used by the ranking losses). Every operation records its
inputs and a vector-Jacobian closure on the output tensor; a reverse
pass walks that record in topological order.

Gradients land only on leaf tensors created with ``requires_grad=True``
and accumulate there until explicitly cleared, so two reverse passes
without clearing double the stored gradients. Intermediate gradients
live in a scratch map local to each reverse pass.
"""

import numpy as np
from scipy.special import expit

from .errors import DimensionError, NumericError, ParameterError, StateError

Array = np.ndarray


def _as_f64(data) -> Array:
    arr = np.asarray(data, dtype=np.float64)
    return np.ascontiguousarray(arr)


def _check_finite(arr: Array, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """Dense float64 array with optional gradient tracking.

    ``data`` is the value, ``grad`` (leaves only) the accumulated
    gradient. Tensors produced by ops carry the bookkeeping needed for
    the reverse pass and should be treated as immutable.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp", "_track")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents=(), _vjp=None):
        self.data = _as_f64(data)
        _check_finite(self.data, name or "tensor")
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._vjp = _vjp
        # does any gradient flow through this node?
        self._track = requires_grad or any(p._track for p in _parents)
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _bad_item(self)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.shape}, requires_grad={self.requires_grad})"

    # Small operator sugar used by the loss code. Scalars only on the
    # right-hand side of * and +/-; tensor-tensor forms require equal shapes.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _bad_item(t: Tensor):
    raise StateError(f"item() requires a scalar tensor, got shape {t.shape}")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and scalar ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add_const(a, float(b))
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data + b.data, _parents=(a, b),
                 _vjp=lambda g: ((a, g), (b, g)))
    return out


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add_const(a, -float(b))
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    return Tensor(a.data - b.data, _parents=(a, b),
                  _vjp=lambda g: ((a, g), (b, -g)))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    return Tensor(a.data * b.data, _parents=(a, b),
                  _vjp=lambda g: ((a, g * b.data), (b, g * a.data)))


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return Tensor(x.data * s, _parents=(x,), _vjp=lambda g: ((x, g * s),))


def add_const(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(x.data + c, _parents=(x,), _vjp=lambda g: ((x, g),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), _parents=(x,),
                  _vjp=lambda g: ((x, g * mask),))


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)
    out = Tensor(out_data, _parents=(x,),
                 _vjp=lambda g: ((x, g * (0.5 / out_data)),))
    return out


def softplus(x: Tensor) -> Tensor:
    """ln(1 + e^x), computed without overflow for large |x|."""
    out_data = np.logaddexp(0.0, x.data)
    return Tensor(out_data, _parents=(x,),
                  _vjp=lambda g: ((x, g * expit(x.data)),))


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    in_shape = x.shape
    return Tensor(x.data.reshape(shape), _parents=(x,),
                  _vjp=lambda g: ((x, g.reshape(in_shape)),))


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) dimension."""
    if x.data.ndim < 2:
        raise DimensionError(f"flatten expects at least 2 dims, got {x.shape}")
    return reshape(x, (x.shape[0], -1))


def concat(xs, axis: int = 1) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ParameterError("concat of an empty sequence")
    base = list(xs[0].shape)
    for t in xs[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != axis and other[i] != base[i] for i in range(len(base))
        ):
            raise DimensionError(
                f"concat: shapes {xs[0].shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in xs]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        out = []
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            out.append((t, g[tuple(sl)]))
        return out

    return Tensor(np.concatenate([t.data for t in xs], axis=axis),
                  _parents=tuple(xs), _vjp=vjp)


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows ``x[idx]``; reverse pass scatter-adds into the source."""
    idx = np.asarray(idx, dtype=np.intp)
    if x.data.ndim != 2:
        raise DimensionError(f"gather_rows expects a 2-D tensor, got {x.shape}")

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return ((x, gx),)

    return Tensor(x.data[idx], _parents=(x,), _vjp=vjp)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor(x.data.sum(), _parents=(x,),
                  _vjp=lambda g: ((x, np.broadcast_to(g, shape).copy()),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    return Tensor(x.data.mean(), _parents=(x,),
                  _vjp=lambda g: ((x, np.broadcast_to(g / n, shape).copy()),))


def sum_axis(x: Tensor, axis: int) -> Tensor:
    def vjp(g):
        return ((x, np.expand_dims(g, axis) * np.ones_like(x.data)),)

    return Tensor(x.data.sum(axis=axis), _parents=(x,), _vjp=vjp)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def linear(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ W + b`` for a batch of row vectors."""
    if x.data.ndim != 2 or weights.data.ndim != 2:
        raise DimensionError(
            f"linear expects 2-D input and weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise DimensionError(
            f"linear: input {x.shape}, weights {weights.shape}, bias {bias.shape} "
            f"do not conform")

    def vjp(g):
        return ((x, g @ weights.data.T),
                (weights, x.data.T @ g),
                (bias, g.sum(axis=0)))

    return Tensor(x.data @ weights.data + bias.data,
                  _parents=(x, weights, bias), _vjp=vjp)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Batched 2-D cross-correlation (no kernel flip), NCHW layout.

    Valid padding by default; ``padding`` adds a symmetric zero border.
    """
    if stride < 1:
        raise ParameterError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ParameterError(f"padding must be non-negative, got {padding}")
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    k, ck, kh, kw = kernel.shape
    if ck != c:
        raise DimensionError(
            f"conv2d: input channels {c} do not match kernel channels {ck}")
    if bias.shape != (k,):
        raise DimensionError(f"conv2d: bias shape {bias.shape}, expected ({k},)")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    patches = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patches[:, :, i, j] = xp[:, :, i:i + stride * ho:stride,
                                     j:j + stride * wo:stride]
    cols = patches.reshape(n, c * kh * kw, ho * wo)
    kmat = kernel.data.reshape(k, c * kh * kw)
    out = (cols.transpose(0, 2, 1) @ kmat.T)          # n, ho*wo, k
    out = out.transpose(0, 2, 1).reshape(n, k, ho, wo) + bias.data[None, :, None, None]

    def vjp(g):
        g2 = g.reshape(n, k, ho * wo).transpose(0, 2, 1)   # n, p, k
        gb = g.sum(axis=(0, 2, 3))
        gk = np.tensordot(g2, cols, axes=([0, 1], [0, 2])).reshape(kernel.shape)
        gcols = (g2 @ kmat).transpose(0, 2, 1)             # n, q, p
        gpatches = gcols.reshape(n, c, kh, kw, ho, wo)
        gxp = np.zeros((n, c, hp, wp))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride,
                    j:j + stride * wo:stride] += gpatches[:, :, i, j]
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return ((x, gx), (kernel, gk), (bias, gb))

    return Tensor(out, _parents=(x, kernel, bias), _vjp=vjp)


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None,
            mask: Array | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale survivors by
    1/(1-p). Identity in eval mode. A caller-supplied ``mask`` fixes the
    pattern, which gradient checks rely on."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval":
        return x
    if mask is None:
        if rng is None:
            raise ParameterError("train-mode dropout needs an rng or an explicit mask")
        mask = (rng.random(x.shape) >= p)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"dropout mask shape {mask.shape} != input {x.shape}")
    keep = mask / (1.0 - p)
    return Tensor(x.data * keep, _parents=(x,),
                  _vjp=lambda g: ((x, g * keep),))


def gap(x: Tensor) -> Tensor:
    """Global average pooling: mean over spatial dims, NCHW -> NC."""
    if x.data.ndim != 4:
        raise DimensionError(f"gap expects a 4-D tensor, got {x.shape}")
    n, c, h, w = x.shape
    inv = 1.0 / (h * w)

    def vjp(g):
        return ((x, np.broadcast_to(g[:, :, None, None] * inv, (n, c, h, w)).copy()),)

    return Tensor(x.data.mean(axis=(2, 3)), _parents=(x,), _vjp=vjp)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def _toposort(root: Tensor) -> list:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent._track and id(parent) not in visited:
                stack.append((parent, False))
    return order


def reverse_accumulate(loss: Tensor, seed_grad: float = 1.0) -> None:
    """Run the reverse pass from a scalar loss, adding d(loss)/d(leaf)
    into each tracked leaf's ``grad``."""
    if not isinstance(loss, Tensor):
        raise StateError("reverse pass requires a recorded forward (got a non-tensor)")
    if loss.size != 1:
        raise StateError(f"loss must be a scalar node, got shape {loss.shape}")
    if not loss._track:
        return  # constant loss: nothing depends on any leaf
    grads: dict[int, Array] = {id(loss): np.full(loss.shape, float(seed_grad))}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            _check_finite(g, "gradient")
            node.grad += g
        if node._vjp is None:
            continue
        for parent, contrib in node._vjp(g):
            if not parent._track:
                continue
            acc = grads.get(id(parent))
            if acc is None:
                grads[id(parent)] = np.array(contrib, dtype=np.float64, copy=True)
            else:
                acc += contrib
