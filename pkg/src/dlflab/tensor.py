"""Dense float32 tensors with reverse-mode automatic differentiation.

Every differentiable operation records its inputs and a backward rule on
the result, so each forward pass rebuilds the graph from scratch;
``backward`` walks the recorded operations in reverse topological order.
Storage is float32 throughout, but op internals compute in float64 so that
results and gradients stay tight against high-precision oracles.

There is no broadcasting beyond scalar-tensor, no views (reshape copies),
and no non-finite values: any NaN/Inf raises immediately.
"""

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionError,
    NonFiniteError,
    ValidationError,
)


class Tensor:
    """A dense float32 value, optionally tracked for differentiation."""

    def __init__(self, data, requires_grad: bool = False):
        with np.errstate(over="ignore"):
            arr = np.asarray(data, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._parents = ()
        self._backward_rule = None
        self._op = "leaf"

    @classmethod
    def _result(cls, data64, parents, backward_rule, op: str) -> "Tensor":
        out = cls(data64)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_rule = backward_rule
            out._op = op
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self):
        """Accumulated gradient; zeros for a leaf the loss never reached."""
        if self._grad is None:
            if self.requires_grad:
                return Tensor(np.zeros_like(self.data))
            return None
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def backward(self) -> None:
        backward(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, op={self._op}{flag})"

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis)


def parameter(data) -> Tensor:
    """A leaf tensor that accumulates gradients."""
    return Tensor(data, requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32))


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=np.float32))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _f64(t: Tensor) -> np.ndarray:
    return t.data.astype(np.float64)


# -- backward pass --------------------------------------------------------


def _topo_order(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate gradients of every reachable ``requires_grad`` leaf.

    ``loss`` must be a scalar. Gradients accumulate in float64 along the
    reverse topological order of the recorded operations and are stored as
    float32 tensors on the leaves.
    """
    if loss.size != 1:
        raise ValidationError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise ValidationError("loss is not connected to any requires_grad tensor")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient flowing out of op '{node._op}'")
        if node._backward_rule is None:
            if node.requires_grad:
                if node._grad is None:
                    node._grad = Tensor(g)
                else:
                    node._grad.data += g.astype(np.float32)
            continue
        for parent, contribution in node._backward_rule(g):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] += contribution
            else:
                grads[key] = np.asarray(contribution, dtype=np.float64)


# -- elementwise and structural ops ---------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor) and not isinstance(a, Tensor):
        raise TypeError("add needs at least one Tensor")
    if not isinstance(b, Tensor):
        a = _as_tensor(a)
        s = float(b)
        return Tensor._result(_f64(a) + s, (a,), lambda g: [(a, g)], "add_scalar")
    if not isinstance(a, Tensor):
        return add(b, a)
    _check_same_shape(a, b, "add")
    return Tensor._result(_f64(a) + _f64(b), (a, b), lambda g: [(a, g), (b, g)], "add")


def sub(a, b) -> Tensor:
    if isinstance(b, Tensor) and isinstance(a, Tensor):
        _check_same_shape(a, b, "sub")
        return Tensor._result(_f64(a) - _f64(b), (a, b), lambda g: [(a, g), (b, -g)], "sub")
    return add(a, neg(_as_tensor(b)) if isinstance(b, Tensor) else -float(b))


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-_f64(a), (a,), lambda g: [(a, -g)], "neg")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = _as_tensor(a)
        s = float(b)
        return Tensor._result(_f64(a) * s, (a,), lambda g: [(a, g * s)], "scale")
    if not isinstance(a, Tensor):
        return mul(b, a)
    _check_same_shape(a, b, "mul")
    ad, bd = _f64(a), _f64(b)
    return Tensor._result(ad * bd, (a, b), lambda g: [(a, g * bd), (b, g * ad)], "mul")


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar."""
    return mul(a, float(s))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul needs 2-D operands, got {tuple(a.shape)} and {tuple(b.shape)}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims of {tuple(a.shape)} and {tuple(b.shape)} differ")
    ad, bd = _f64(a), _f64(b)

    def rule(g):
        return [(a, g @ bd.T), (b, ad.T @ g)]

    return Tensor._result(ad @ bd, (a, b), rule, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {tuple(a.shape)}")
    return Tensor._result(_f64(a).T.copy(), (a,), lambda g: [(a, g.T)], "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    new_size = int(np.prod(shape)) if shape else 1
    if new_size != a.size:
        raise DimensionError(f"reshape {tuple(a.shape)} -> {shape}: element count differs")
    old_shape = a.shape
    return Tensor._result(
        _f64(a).reshape(shape).copy(), (a,), lambda g: [(a, g.reshape(old_shape))], "reshape"
    )


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    ad = _f64(a)
    if axis is None:
        out = np.sum(ad)
        rule = lambda g: [(a, np.full(a.shape, float(g), dtype=np.float64))]
        return Tensor._result(out, (a,), rule, "sum")
    out = np.sum(ad, axis=axis)

    def rule(g):
        return [(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())]

    return Tensor._result(out, (a,), rule, "sum")


def tensor_mean(a: Tensor, axis=None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(tensor_sum(a, axis), 1.0 / count)


def global_avg_pool(feature_map: Tensor) -> Tensor:
    """Mean over the spatial axis of a channels-by-positions map."""
    if feature_map.data.ndim != 2:
        raise DimensionError(f"global_avg_pool needs a 2-D map, got {tuple(feature_map.shape)}")
    return tensor_mean(feature_map, axis=1)


# -- nonlinearities --------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    ad = _f64(a)
    mask = ad > 0
    return Tensor._result(np.where(mask, ad, 0.0), (a,), lambda g: [(a, g * mask)], "relu")


def _sigmoid64(z: np.ndarray) -> np.ndarray:
    # evaluate on the side that cannot overflow
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid64(_f64(a))
    return Tensor._result(y, (a,), lambda g: [(a, g * y * (1.0 - y))], "sigmoid")


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilized by per-row max subtraction."""
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows needs a 2-D tensor, got {tuple(x.shape)}")
    xd = _f64(x)
    shifted = xd - xd.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        dot = np.sum(g * y, axis=1, keepdims=True)
        return [(x, y * (g - dot))]

    return Tensor._result(y, (x,), rule, "softmax_rows")


def l2_normalize(x: Tensor, axis: int) -> Tensor:
    """Scale every slice along ``axis`` to unit Euclidean norm."""
    xd = _f64(x)
    norms = np.sqrt(np.sum(xd * xd, axis=axis, keepdims=True))
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"l2_normalize: zero-norm slice along axis {axis}")
    y = xd / norms

    def rule(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return [(x, (g - y * dot) / norms)]

    return Tensor._result(y, (x,), rule, "l2_normalize")


# -- losses ----------------------------------------------------------------


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Binary cross-entropy from raw logits: sum over labels, mean over rows.

    Uses the max(z,0) - z*y + log(1+exp(-|z|)) form, which never overflows.
    Gradient w.r.t. the logits is (sigmoid(z) - y) / n_rows.
    """
    targets = _as_tensor(targets)
    if logits.data.ndim != 2 or targets.data.ndim != 2:
        raise DimensionError(
            f"bce_with_logits needs 2-D logits/targets, got "
            f"{tuple(logits.shape)} and {tuple(targets.shape)}"
        )
    _check_same_shape(logits, targets, "bce_with_logits")
    y = _f64(targets)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValidationError("bce_with_logits: targets must be exactly 0 or 1")
    z = _f64(logits)
    n = logits.shape[0]
    per_elem = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = per_elem.sum() / n

    def rule(g):
        return [(logits, float(g) * (_sigmoid64(z) - y) / n)]

    return Tensor._result(out, (logits,), rule, "bce_with_logits")
