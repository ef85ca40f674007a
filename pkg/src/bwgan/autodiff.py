"""Reverse-mode automatic differentiation with graph-valued gradients.

Graphs are built from immutable nodes over dense float64 tensors.  The key
design choice is that ``grad`` returns new graph *nodes*, not detached
numbers, so a gradient expression can itself be differentiated again
(double backpropagation).  Evaluation walks the graph in topological order
with a per-call cache, which makes repeated evaluation of shared
subexpressions free and keeps results bit-identical across runs.

Supported broadcasting is deliberately narrow: equal shapes, scalar with
anything, and a (n,) row vector against an (m, n) matrix (bias addition).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class GraphError(ValueError):
    """Raised for structural misuse (non-scalar output, missing input, ...)."""


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Node:
    """One vertex of a computation graph.

    Subclasses implement ``compute`` (forward value from parent values) and
    ``vjp`` (vector-Jacobian product *as a new graph node*).
    """

    _ids = itertools.count()

    __slots__ = ("shape", "parents", "id")

    def __init__(self, shape, parents=()):
        self.shape = tuple(int(d) for d in shape)
        self.parents = tuple(parents)
        self.id = next(Node._ids)

    def compute(self, *values):
        raise NotImplementedError

    def vjp(self, g: "Node", index: int) -> "Node":
        raise NotImplementedError

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, wrap(other))

    def __radd__(self, other):
        return add(wrap(other), self)

    def __sub__(self, other):
        return sub(self, wrap(other))

    def __rsub__(self, other):
        return sub(wrap(other), self)

    def __mul__(self, other):
        return mul(self, wrap(other))

    def __rmul__(self, other):
        return mul(wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"<{type(self).__name__}#{self.id} shape={self.shape}>"


class Input(Node):
    """Placeholder leaf; its value is supplied at evaluation time."""

    __slots__ = ("name",)

    def __init__(self, shape, name=""):
        super().__init__(shape)
        self.name = name

    def __repr__(self):
        return f"<Input#{self.id} {self.name!r} shape={self.shape}>"


class Constant(Node):
    __slots__ = ("value",)

    def __init__(self, value):
        value = _as_array(value)
        super().__init__(value.shape)
        self.value = value

    def compute(self):
        return self.value


def wrap(x) -> Node:
    """Lift a number or array to a Constant node; pass nodes through."""
    if isinstance(x, Node):
        return x
    return Constant(x)


# ---------------------------------------------------------------------------
# Broadcasting helpers (narrow, explicit)
# ---------------------------------------------------------------------------

def _broadcast_shape(a: Node, b: Node, opname: str):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if sa == ():
        return sb
    if sb == ():
        return sa
    if len(sa) == 2 and sb == (sa[1],):
        return sa
    if len(sb) == 2 and sa == (sb[1],):
        return sb
    raise ShapeError(f"{opname}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: Node, shape) -> Node:
    """Reduce a cotangent back to an operand's (smaller) shape."""
    if g.shape == tuple(shape):
        return g
    if shape == ():
        return sum_all(g)
    if len(g.shape) == 2 and tuple(shape) == (g.shape[1],):
        return sum_cols(g)
    raise ShapeError(f"cannot reduce cotangent {g.shape} to {shape}")


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

class Add(Node):
    def __init__(self, a, b):
        super().__init__(_broadcast_shape(a, b, "add"), (a, b))

    def compute(self, a, b):
        return a + b

    def vjp(self, g, index):
        return _unbroadcast(g, self.parents[index].shape)


class Sub(Node):
    def __init__(self, a, b):
        super().__init__(_broadcast_shape(a, b, "sub"), (a, b))

    def compute(self, a, b):
        return a - b

    def vjp(self, g, index):
        if index == 0:
            return _unbroadcast(g, self.parents[0].shape)
        return _unbroadcast(neg(g), self.parents[1].shape)


class Mul(Node):
    def __init__(self, a, b):
        super().__init__(_broadcast_shape(a, b, "mul"), (a, b))

    def compute(self, a, b):
        return a * b

    def vjp(self, g, index):
        other = self.parents[1 - index]
        return _unbroadcast(mul(g, other), self.parents[index].shape)


class Neg(Node):
    def __init__(self, a):
        super().__init__(a.shape, (a,))

    def compute(self, a):
        return -a

    def vjp(self, g, index):
        return neg(g)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

class MatMul(Node):
    def __init__(self, a, b):
        if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
        super().__init__((a.shape[0], b.shape[1]), (a, b))

    def compute(self, a, b):
        return a @ b

    def vjp(self, g, index):
        a, b = self.parents
        if index == 0:
            return matmul(g, transpose(b))
        return matmul(transpose(a), g)


class Transpose(Node):
    def __init__(self, a):
        if len(a.shape) != 2:
            raise ShapeError(f"transpose: need 2-D, got {a.shape}")
        super().__init__((a.shape[1], a.shape[0]), (a,))

    def compute(self, a):
        return a.T

    def vjp(self, g, index):
        return transpose(g)


class Reshape(Node):
    def __init__(self, a, shape):
        shape = tuple(int(d) for d in shape)
        if int(np.prod(shape)) != int(np.prod(a.shape)):
            raise ShapeError(f"reshape: {a.shape} -> {shape} changes size")
        super().__init__(shape, (a,))

    def compute(self, a):
        return a.reshape(self.shape)

    def vjp(self, g, index):
        return reshape(g, self.parents[0].shape)


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------

class Tanh(Node):
    def __init__(self, a):
        super().__init__(a.shape, (a,))

    def compute(self, a):
        return np.tanh(a)

    def vjp(self, g, index):
        return mul(g, Constant(1.0) - mul(self, self))


class Softplus(Node):
    def __init__(self, a):
        super().__init__(a.shape, (a,))

    def compute(self, a):
        return np.logaddexp(0.0, a)

    def vjp(self, g, index):
        return mul(g, sigmoid(self.parents[0]))


class Sigmoid(Node):
    def __init__(self, a):
        super().__init__(a.shape, (a,))

    def compute(self, a):
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return out

    def vjp(self, g, index):
        return mul(g, mul(self, Constant(1.0) - self))


class Relu(Node):
    def __init__(self, a):
        super().__init__(a.shape, (a,))

    def compute(self, a):
        return np.maximum(a, 0.0)

    def vjp(self, g, index):
        return mul(g, step(self.parents[0]))


class Step(Node):
    """Heaviside step with the convention step(0) = 0; derivative taken as 0."""

    def __init__(self, a):
        super().__init__(a.shape, (a,))

    def compute(self, a):
        return (a > 0.0).astype(np.float64)

    def vjp(self, g, index):
        return Constant(np.zeros(self.parents[0].shape))


class AbsPow(Node):
    """|x|^a elementwise.  For a <= 1 the value is kinked at 0.

    Negative exponents only arise from differentiating roots; there the
    value at 0 is defined as 0, the zero-subgradient convention, so a
    vanishing gradient row propagates zeros instead of infinities.
    """

    __slots__ = ("exponent",)

    def __init__(self, a, exponent):
        super().__init__(a.shape, (a,))
        self.exponent = float(exponent)

    def compute(self, a):
        if self.exponent == 0.0:
            return np.ones_like(a)
        if self.exponent < 0.0:
            mag = np.abs(a)
            with np.errstate(divide="ignore"):
                out = mag ** self.exponent
            return np.where(mag == 0.0, 0.0, out)
        return np.abs(a) ** self.exponent

    def vjp(self, g, index):
        x = self.parents[0]
        return mul(g, Constant(self.exponent) * signed_abs_pow(x, self.exponent - 1.0))


class SignedAbsPow(Node):
    """sign(x) * |x|^a elementwise; closed under differentiation with AbsPow."""

    __slots__ = ("exponent",)

    def __init__(self, a, exponent):
        super().__init__(a.shape, (a,))
        self.exponent = float(exponent)

    def compute(self, a):
        if self.exponent == 0.0:
            return np.sign(a)
        if self.exponent < 0.0:
            mag = np.abs(a)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.sign(a) * mag ** self.exponent
            return np.where(mag == 0.0, 0.0, out)
        return np.sign(a) * np.abs(a) ** self.exponent

    def vjp(self, g, index):
        x = self.parents[0]
        return mul(g, Constant(self.exponent) * abs_pow(x, self.exponent - 1.0))


class Sqrt(Node):
    def __init__(self, a):
        super().__init__(a.shape, (a,))

    def compute(self, a):
        return np.sqrt(a)

    def vjp(self, g, index):
        return mul(g, Constant(0.5) * reciprocal(self))


class Reciprocal(Node):
    def __init__(self, a):
        super().__init__(a.shape, (a,))

    def compute(self, a):
        return 1.0 / a

    def vjp(self, g, index):
        return neg(mul(g, mul(self, self)))


# ---------------------------------------------------------------------------
# Reductions and broadcasts
# ---------------------------------------------------------------------------

class SumAll(Node):
    def __init__(self, a):
        super().__init__((), (a,))

    def compute(self, a):
        return np.asarray(np.sum(a))

    def vjp(self, g, index):
        return fill(g, self.parents[0].shape)


class SumCols(Node):
    """Sum over axis 0 of an (m, n) matrix, yielding (n,)."""

    def __init__(self, a):
        if len(a.shape) != 2:
            raise ShapeError(f"sum_cols: need 2-D, got {a.shape}")
        super().__init__((a.shape[1],), (a,))

    def compute(self, a):
        return np.sum(a, axis=0)

    def vjp(self, g, index):
        return expand_rows(g, self.parents[0].shape[0])


class SumRows(Node):
    """Sum over axis 1 of an (m, n) matrix, yielding (m,)."""

    def __init__(self, a):
        if len(a.shape) != 2:
            raise ShapeError(f"sum_rows: need 2-D, got {a.shape}")
        super().__init__((a.shape[0],), (a,))

    def compute(self, a):
        return np.sum(a, axis=1)

    def vjp(self, g, index):
        return expand_cols(g, self.parents[0].shape[1])


class Fill(Node):
    """Broadcast a scalar to a fixed shape."""

    def __init__(self, a, shape):
        if a.shape != ():
            raise ShapeError(f"fill: need scalar, got {a.shape}")
        super().__init__(shape, (a,))

    def compute(self, a):
        return np.broadcast_to(a, self.shape).copy()

    def vjp(self, g, index):
        return sum_all(g)


class ExpandRows(Node):
    """Tile an (n,) vector into m identical rows of an (m, n) matrix."""

    def __init__(self, a, m):
        if len(a.shape) != 1:
            raise ShapeError(f"expand_rows: need 1-D, got {a.shape}")
        super().__init__((int(m), a.shape[0]), (a,))

    def compute(self, a):
        return np.broadcast_to(a, self.shape).copy()

    def vjp(self, g, index):
        return sum_cols(g)


class ExpandCols(Node):
    """Tile an (m,) vector into n identical columns of an (m, n) matrix."""

    def __init__(self, a, n):
        if len(a.shape) != 1:
            raise ShapeError(f"expand_cols: need 1-D, got {a.shape}")
        super().__init__((a.shape[0], int(n)), (a,))

    def compute(self, a):
        return np.broadcast_to(a[:, None], self.shape).copy()

    def vjp(self, g, index):
        return sum_rows(g)


class SliceCols(Node):
    """Columns [start, stop) of an (m, n) matrix."""

    __slots__ = ("start", "stop")

    def __init__(self, a, start, stop):
        if len(a.shape) != 2 or not (0 <= start < stop <= a.shape[1]):
            raise ShapeError(f"slice_cols: bad slice [{start}:{stop}) of {a.shape}")
        super().__init__((a.shape[0], stop - start), (a,))
        self.start, self.stop = int(start), int(stop)

    def compute(self, a):
        return a[:, self.start:self.stop]

    def vjp(self, g, index):
        n = self.parents[0].shape[1]
        return pad_cols(g, self.start, n - self.stop)


class PadCols(Node):
    """Zero-pad columns on the left/right of an (m, n) matrix."""

    __slots__ = ("before", "after")

    def __init__(self, a, before, after):
        if len(a.shape) != 2:
            raise ShapeError(f"pad_cols: need 2-D, got {a.shape}")
        super().__init__((a.shape[0], a.shape[1] + before + after), (a,))
        self.before, self.after = int(before), int(after)

    def compute(self, a):
        return np.pad(a, ((0, 0), (self.before, self.after)))

    def vjp(self, g, index):
        return slice_cols(g, self.before, self.before + self.parents[0].shape[1])


class FourierMultiplier(Node):
    """Linear operator F^-1 [ m(xi) . F x ] with a fixed real multiplier.

    ``spatial_shape`` is the signal layout, one of (n,), (h, w) or
    (c, h, w); the FFT runs over the trailing one or two axes.  Rows of a
    2-D operand are treated as a batch of flattened signals.  The
    multiplier is symmetric under frequency negation, so the operator is
    real and self-adjoint; the vector-Jacobian product is the operator
    itself.
    """

    __slots__ = ("spatial_shape", "multiplier", "_axes")

    def __init__(self, a, spatial_shape, multiplier):
        spatial_shape = tuple(int(d) for d in spatial_shape)
        size = int(np.prod(spatial_shape))
        if a.shape == (size,):
            pass
        elif len(a.shape) == 2 and a.shape[1] == size:
            pass
        else:
            raise ShapeError(
                f"fourier_multiplier: operand {a.shape} does not hold "
                f"flattened signals of shape {spatial_shape}")
        super().__init__(a.shape, (a,))
        self.spatial_shape = spatial_shape
        self.multiplier = np.asarray(multiplier, dtype=np.float64)
        nfft = 1 if len(spatial_shape) == 1 else 2
        self._axes = tuple(range(-nfft, 0))
        if self.multiplier.shape != spatial_shape[-nfft:]:
            raise ShapeError("fourier_multiplier: multiplier/signal shape mismatch")

    def compute(self, a):
        batch = a.shape[:-1] if a.ndim == 2 else ()
        v = a.reshape(batch + self.spatial_shape)
        spec = np.fft.fftn(v, axes=self._axes, norm="ortho")
        spec *= self.multiplier
        out = np.fft.ifftn(spec, axes=self._axes, norm="ortho").real
        return np.ascontiguousarray(out.reshape(a.shape))

    def vjp(self, g, index):
        return FourierMultiplier(g, self.spatial_shape, self.multiplier)


# ---------------------------------------------------------------------------
# Functional API
# ---------------------------------------------------------------------------

def add(a, b):
    return Add(wrap(a), wrap(b))


def sub(a, b):
    return Sub(wrap(a), wrap(b))


def mul(a, b):
    return Mul(wrap(a), wrap(b))


def neg(a):
    return Neg(wrap(a))


def matmul(a, b):
    return MatMul(wrap(a), wrap(b))


def transpose(a):
    return Transpose(wrap(a))


def reshape(a, shape):
    return Reshape(wrap(a), shape)


def tanh(a):
    return Tanh(wrap(a))


def softplus(a):
    return Softplus(wrap(a))


def sigmoid(a):
    return Sigmoid(wrap(a))


def relu(a):
    return Relu(wrap(a))


def step(a):
    return Step(wrap(a))


def abs_pow(a, exponent):
    return AbsPow(wrap(a), exponent)


def signed_abs_pow(a, exponent):
    return SignedAbsPow(wrap(a), exponent)


def sqrt(a):
    return Sqrt(wrap(a))


def reciprocal(a):
    return Reciprocal(wrap(a))


def sum_all(a):
    return SumAll(wrap(a))


def sum_cols(a):
    return SumCols(wrap(a))


def sum_rows(a):
    return SumRows(wrap(a))


def fill(a, shape):
    return Fill(wrap(a), shape)


def expand_rows(a, m):
    return ExpandRows(wrap(a), m)


def expand_cols(a, n):
    return ExpandCols(wrap(a), n)


def slice_cols(a, start, stop):
    return SliceCols(wrap(a), start, stop)


def pad_cols(a, before, after):
    return PadCols(wrap(a), before, after)


def fourier_multiplier(a, spatial_shape, multiplier):
    return FourierMultiplier(wrap(a), spatial_shape, multiplier)


def mean_all(a):
    a = wrap(a)
    n = int(np.prod(a.shape)) if a.shape else 1
    return mul(sum_all(a), Constant(1.0 / n))


def affine(x, w, b):
    """x @ w + b with the bias broadcast over rows."""
    return add(matmul(x, w), b)


def dot(a, b):
    return sum_all(mul(a, b))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def topo_order(roots):
    """Deterministic topological order of all ancestors of ``roots``."""
    if isinstance(roots, Node):
        roots = [roots]
    order = []
    seen = set()
    for root in roots:
        if root in seen:
            continue
        stack = [(root, iter(root.parents))]
        seen.add(root)
        while stack:
            node, parents = stack[-1]
            advanced = False
            for p in parents:
                if p not in seen:
                    seen.add(p)
                    stack.append((p, iter(p.parents)))
                    advanced = True
                    break
            if not advanced:
                order.append(node)
                stack.pop()
    return order


def evaluate(nodes, env, cache=None):
    """Evaluate one node or a list of nodes under ``env: {Input: array}``.

    A shared ``cache`` dict may be passed to reuse values across calls on
    the same immutable graph with the same inputs.
    """
    single = isinstance(nodes, Node)
    roots = [nodes] if single else list(nodes)
    cache = {} if cache is None else cache
    for node in topo_order(roots):
        if node in cache:
            continue
        if isinstance(node, Input):
            if node not in env:
                raise GraphError(f"no value bound for {node!r}")
            val = _as_array(env[node])
            if val.shape != node.shape:
                raise ShapeError(
                    f"value of shape {val.shape} bound to {node!r}")
            cache[node] = val
        else:
            cache[node] = node.compute(*(cache[p] for p in node.parents))
    if single:
        return cache[nodes]
    return [cache[n] for n in roots]


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------

def grad(output: Node, wrt):
    """Build gradient nodes of a scalar ``output`` with respect to ``wrt``.

    ``wrt`` may be a node or a sequence of nodes; the result mirrors that
    structure.  The returned nodes are ordinary graph nodes and can be fed
    back into ``grad`` for higher derivatives.
    """
    if output.shape != ():
        raise GraphError(f"grad: output must be scalar, got {output!r}")
    single = isinstance(wrt, Node)
    targets = [wrt] if single else list(wrt)

    order = topo_order(output)
    needs = set(targets)
    for node in order:
        if any(p in needs for p in node.parents):
            needs.add(node)

    adjoint = {output: Constant(np.ones(()))}
    for node in reversed(order):
        g = adjoint.get(node)
        if g is None or isinstance(node, (Input, Constant)):
            continue
        for i, p in enumerate(node.parents):
            if p not in needs:
                continue
            contrib = node.vjp(g, i)
            prev = adjoint.get(p)
            adjoint[p] = contrib if prev is None else add(prev, contrib)

    results = [adjoint.get(t, Constant(np.zeros(t.shape))) for t in targets]
    return results[0] if single else results


# ---------------------------------------------------------------------------
# Graph wrapper
# ---------------------------------------------------------------------------

@dataclass
class Graph:
    """A computation with designated inputs and a scalar output node."""

    inputs: list
    output: Node

    def __post_init__(self):
        for node in self.inputs:
            if not isinstance(node, Input):
                raise GraphError(f"graph input {node!r} is not an Input node")

    def env(self, values):
        values = list(values)
        if len(values) != len(self.inputs):
            raise GraphError(
                f"expected {len(self.inputs)} input values, got {len(values)}")
        return dict(zip(self.inputs, values))


def forward(graph: Graph, inputs) -> float:
    """Evaluate the graph's scalar output for the given input tensors."""
    if graph.output.shape != ():
        raise GraphError(f"forward: output not scalar: {graph.output!r}")
    return float(evaluate(graph.output, graph.env(inputs)))


def gradient(graph: Graph, inputs, wrt_index: int = 0) -> np.ndarray:
    """Gradient of the scalar output with respect to one input tensor.

    The gradient is built as a graph (see ``grad``) and then evaluated, so
    callers needing the symbolic form can use ``grad`` directly.
    """
    if graph.output.shape != ():
        raise GraphError(f"gradient: output not scalar: {graph.output!r}")
    gnode = grad(graph.output, graph.inputs[wrt_index])
    return evaluate(gnode, graph.env(inputs))


def gradient_of_gradient_functional(graph: Graph, inputs, functional):
    """Differentiate ``functional(d output / d x)`` through the gradient.

    ``x`` is the graph's first input; ``functional`` maps the gradient node
    to a scalar node.  Returns the derivative of that scalar with respect
    to the remaining inputs (the parameters), or with respect to ``x``
    itself when it is the only input.  This is double backpropagation.
    """
    gx = grad(graph.output, graph.inputs[0])
    value = functional(gx)
    if not isinstance(value, Node) or value.shape != ():
        raise GraphError("functional must build a scalar node from the gradient")
    params = graph.inputs[1:] if len(graph.inputs) > 1 else [graph.inputs[0]]
    gnodes = grad(value, params)
    results = evaluate(gnodes, graph.env(inputs))
    return results[0] if len(graph.inputs) == 1 else results
