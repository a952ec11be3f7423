"""Dense float64 tensors with taped reverse-mode differentiation.

Shapes are tiny (vectors in R^d with d <= 2, hidden widths of a few hundred),
so everything is a contiguous row-major float64 array with no views, strides,
or implicit broadcasting.  Gradients of gradients work because every VJP is
itself written in terms of the recorded primitives: running a backward pass
while an enclosing tape is active records the gradient computation on that
tape (tape-over-tape).
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "AutodiffError",
    "ShapeMismatchError",
    "NonFiniteError",
    "NonScalarOutputError",
    "tensor",
    "constant",
    "zeros_like",
    "add",
    "sub",
    "neg",
    "mul",
    "scalar_mul",
    "matmul",
    "transpose",
    "add_bias",
    "sum_rows",
    "tile_rows",
    "sum_reduce",
    "expand_scalar",
    "leaky_relu",
    "sin",
    "cos",
]


class AutodiffError(Exception):
    """Base for all tensor/tape failures."""


class ShapeMismatchError(AutodiffError):
    def __init__(self, primitive: str, *shapes):
        super().__init__(
            f"{primitive}: incompatible shapes {' vs '.join(str(s) for s in shapes)}"
        )


class NonFiniteError(AutodiffError):
    """NaN or Inf produced; divergence must surface immediately, never propagate."""

    def __init__(self, primitive: str):
        super().__init__(f"{primitive}: produced non-finite values")


class NonScalarOutputError(AutodiffError):
    def __init__(self, shape):
        super().__init__(f"backward requires a scalar output, got shape {tuple(shape)}")


_UIDS = itertools.count()


class Tensor:
    """Immutable dense float64 array. Do not mutate .data after construction.

    ``uid`` is a process-unique serial: gradient maps key on it, so recycled
    object ids can never alias two tensors.
    """

    __slots__ = ("data", "requires_grad", "uid")

    def __init__(self, data, requires_grad: bool = False, _checked: bool = False):
        arr = np.asarray(data, dtype=np.float64, order="C")
        if not _checked and not np.isfinite(arr).all():
            raise NonFiniteError("tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.uid = next(_UIDS)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data), _checked=True)


class _Node:
    __slots__ = ("output_uid", "inputs", "vjp", "needs")

    def __init__(self, output: Tensor, inputs, vjp):
        self.output_uid = output.uid
        self.inputs = inputs
        self.vjp = vjp
        self.needs = tuple(inp.requires_grad for inp in inputs)


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of primitive operations (a straight-line program).

    Nodes appear in execution order, so walking the list in reverse visits
    every node after all of its consumers: a single reverse sweep is a full
    backward pass.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise AutodiffError("tape stack corrupted: exited a non-innermost tape")
        return False

    def gradients(self, output: Tensor, sources) -> list[Tensor]:
        """Gradients of a scalar output w.r.t. each source tensor.

        Sources that do not influence the output get zero tensors.  The
        gradient computation itself uses the public primitives, so it is
        recorded on any tape still active (enabling second derivatives).
        """
        if output.data.shape != ():
            raise NonScalarOutputError(output.data.shape)
        grad_map: dict[int, Tensor] = {output.uid: constant(1.0)}
        for node in reversed(tuple(self.nodes)):
            g = grad_map.get(node.output_uid)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g, node.needs)):
                if gi is None:
                    continue
                acc = grad_map.get(inp.uid)
                grad_map[inp.uid] = gi if acc is None else add(acc, gi)
        return [grad_map.get(s.uid) or zeros_like(s) for s in sources]

    def grad(self, output: Tensor, source: Tensor) -> Tensor:
        return self.gradients(output, [source])[0]


def _record(out: Tensor, inputs, vjp) -> Tensor:
    if _TAPES and any(inp.requires_grad for inp in inputs):
        out.requires_grad = True
        node = _Node(out, tuple(inputs), vjp)
        for tape in _TAPES:
            tape.nodes.append(node)
    return out


def _finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(name)
    return arr


# ---------------------------------------------------------------------------
# Primitives. Each VJP is written with the primitives themselves so that the
# backward pass is differentiable in turn.
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError("add", a.data.shape, b.data.shape)
    out = Tensor(_finite("add", a.data + b.data), _checked=True)

    def vjp(g, needs):
        return (g if needs[0] else None, g if needs[1] else None)

    return _record(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError("sub", a.data.shape, b.data.shape)
    out = Tensor(_finite("sub", a.data - b.data), _checked=True)

    def vjp(g, needs):
        return (g if needs[0] else None, neg(g) if needs[1] else None)

    return _record(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError("mul", a.data.shape, b.data.shape)
    out = Tensor(_finite("mul", a.data * b.data), _checked=True)

    def vjp(g, needs):
        return (
            mul(g, b) if needs[0] else None,
            mul(g, a) if needs[1] else None,
        )

    return _record(out, (a, b), vjp)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(_finite("scalar_mul", a.data * c), _checked=True)

    def vjp(g, needs):
        return (scalar_mul(g, c) if needs[0] else None,)

    return _record(out, (a,), vjp)


def neg(a: Tensor) -> Tensor:
    return scalar_mul(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError("matmul", a.data.shape, b.data.shape)
    out = Tensor(_finite("matmul", a.data @ b.data), _checked=True)

    def vjp(g, needs):
        return (
            matmul(g, transpose(b)) if needs[0] else None,
            matmul(transpose(a), g) if needs[1] else None,
        )

    return _record(out, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatchError("transpose", a.data.shape)
    out = Tensor(np.ascontiguousarray(a.data.T), _checked=True)

    def vjp(g, needs):
        return (transpose(g) if needs[0] else None,)

    return _record(out, (a,), vjp)


def add_bias(m: Tensor, v: Tensor) -> Tensor:
    """Row-wise bias: (n,k) matrix plus (k,) vector."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[1] != v.data.shape[0]:
        raise ShapeMismatchError("add_bias", m.data.shape, v.data.shape)
    out = Tensor(_finite("add_bias", m.data + v.data[None, :]), _checked=True)

    def vjp(g, needs):
        return (
            g if needs[0] else None,
            sum_rows(g) if needs[1] else None,
        )

    return _record(out, (m, v), vjp)


def sum_rows(m: Tensor) -> Tensor:
    """Column sums: (n,k) -> (k,)."""
    if m.data.ndim != 2:
        raise ShapeMismatchError("sum_rows", m.data.shape)
    out = Tensor(_finite("sum_rows", m.data.sum(axis=0)), _checked=True)
    n = m.data.shape[0]

    def vjp(g, needs):
        return (tile_rows(g, n) if needs[0] else None,)

    return _record(out, (m,), vjp)


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Repeat a (k,) vector into an (n,k) matrix."""
    if v.data.ndim != 1:
        raise ShapeMismatchError("tile_rows", v.data.shape)
    out = Tensor(np.tile(v.data, (n, 1)), _checked=True)

    def vjp(g, needs):
        return (sum_rows(g) if needs[0] else None,)

    return _record(out, (v,), vjp)


def sum_reduce(a: Tensor) -> Tensor:
    """Sum of all elements, returned as a scalar (shape ()) tensor."""
    out = Tensor(_finite("sum_reduce", np.asarray(a.data.sum())), _checked=True)
    shape = a.data.shape

    def vjp(g, needs):
        return (expand_scalar(g, shape) if needs[0] else None,)

    return _record(out, (a,), vjp)


def expand_scalar(s: Tensor, shape) -> Tensor:
    """Broadcast a scalar tensor to a given shape (adjoint of sum_reduce)."""
    if s.data.shape != ():
        raise ShapeMismatchError("expand_scalar", s.data.shape)
    out = Tensor(np.full(shape, s.data.reshape(())), _checked=True)

    def vjp(g, needs):
        return (sum_reduce(g) if needs[0] else None,)

    return _record(out, (s,), vjp)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    # max(x, slope * x) equals the two-branch form for 0 < slope < 1 and is
    # a single fused pass; finite input guarantees finite output.
    data = a.data
    out = Tensor(np.maximum(data, slope * data), _checked=True)

    def vjp(g, needs):
        if not needs[0]:
            return (None,)
        # The local derivative is piecewise constant; treating it as a
        # constant makes second derivatives zero almost everywhere, which
        # is exact.  Built lazily: energy-only passes never pay for it.
        mask = Tensor(np.where(data > 0, 1.0, slope), _checked=True)
        return (mul(g, mask),)

    return _record(out, (a,), vjp)


def sin(a: Tensor) -> Tensor:
    out = Tensor(np.sin(a.data), _checked=True)

    def vjp(g, needs):
        return (mul(g, cos(a)) if needs[0] else None,)

    return _record(out, (a,), vjp)


def cos(a: Tensor) -> Tensor:
    out = Tensor(np.cos(a.data), _checked=True)

    def vjp(g, needs):
        return (neg(mul(g, sin(a))) if needs[0] else None,)

    return _record(out, (a,), vjp)
