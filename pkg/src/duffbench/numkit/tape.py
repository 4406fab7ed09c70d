"""Reverse-mode automatic differentiation on a scalar/array tape.

Values are float64 numpy arrays. Every operation appends a node to the
tape of its operands, so construction order is a topological order by
design. Backward rules are themselves written with tape operations,
which makes second-order derivatives available by differentiating the
nodes a backward pass produces.

Supported matmul shapes are (2D, 2D) and (2D, 1D); everything else is
elementwise with numpy broadcasting.
"""

from __future__ import annotations

import numpy as np


class TapeError(Exception):
    """Structural problem in the graph (cross-tape ops, broken order)."""


class NumericError(Exception):
    """Non-finite value encountered on the tape."""

    def __init__(self, node_id, op):
        super().__init__(f"non-finite value at node {node_id} (op '{op}')")
        self.node_id = node_id
        self.op = op


class Tape:
    """Append-only record of one computation graph."""

    def __init__(self):
        self.nodes = []

    def leaf(self, value):
        """Register an independent variable."""
        return Node(self, np.asarray(value, dtype=float), (), None, "leaf")

    def constant(self, value):
        """Register a value gradients do not flow into."""
        return Node(self, np.asarray(value, dtype=float), (), None, "const")

    def validate(self):
        for node in self.nodes:
            for p in node.parents:
                if p.tape is not self:
                    raise TapeError("node references a foreign tape")
                if p.idx >= node.idx:
                    raise TapeError(f"topological order violated at node {node.idx}")


class Node:
    """One tape entry: value, parents and the local backward rule."""

    __slots__ = ("tape", "idx", "value", "parents", "vjp", "op")

    def __init__(self, tape, value, parents, vjp, op):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.idx = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op}, idx={self.idx}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, _lift(other, self.tape))

    def __radd__(self, other):
        return add(_lift(other, self.tape), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.tape))

    def __rsub__(self, other):
        return sub(_lift(other, self.tape), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.tape))

    def __rmul__(self, other):
        return mul(_lift(other, self.tape), self)

    def __truediv__(self, other):
        return div(self, _lift(other, self.tape))

    def __rtruediv__(self, other):
        return div(_lift(other, self.tape), self)

    def __pow__(self, exponent):
        return powc(self, exponent)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other, self.tape))

    def __getitem__(self, index):
        return take(self, index)


def _lift(x, tape):
    if isinstance(x, Node):
        if x.tape is not tape:
            raise TapeError("operands live on different tapes")
        return x
    return tape.constant(x)


def _shrink(g, shape):
    """Sum an adjoint over broadcast axes so it matches `shape`."""
    extra = g.value.ndim - len(shape)
    if extra > 0:
        g = vsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.value.shape[i] != 1)
    if axes:
        g = vsum(g, axis=axes, keepdims=True)
    return g


# -- primitive operations ---------------------------------------------------

def add(a, b):
    return Node(a.tape, a.value + b.value, (a, b),
                lambda g: (_shrink(g, a.value.shape), _shrink(g, b.value.shape)),
                "add")


def sub(a, b):
    return Node(a.tape, a.value - b.value, (a, b),
                lambda g: (_shrink(g, a.value.shape), _shrink(neg(g), b.value.shape)),
                "sub")


def neg(a):
    return Node(a.tape, -a.value, (a,), lambda g: (neg(g),), "neg")


def mul(a, b):
    return Node(a.tape, a.value * b.value, (a, b),
                lambda g: (_shrink(mul(g, b), a.value.shape),
                           _shrink(mul(g, a), b.value.shape)),
                "mul")


def div(a, b):
    return Node(a.tape, a.value / b.value, (a, b),
                lambda g: (_shrink(div(g, b), a.value.shape),
                           _shrink(neg(div(mul(g, a), mul(b, b))), b.value.shape)),
                "div")


def powc(a, exponent):
    c = float(exponent)
    out = Node(a.tape, a.value ** c, (a,), None, "pow")
    out.vjp = lambda g: (mul(g, c * powc(a, c - 1.0)),)
    return out


def exp(a):
    out = Node(a.tape, np.exp(a.value), (a,), None, "exp")
    out.vjp = lambda g: (mul(g, out),)
    return out


def log(a):
    return Node(a.tape, np.log(a.value), (a,), lambda g: (div(g, a),), "log")


def sqrt(a):
    out = Node(a.tape, np.sqrt(a.value), (a,), None, "sqrt")
    out.vjp = lambda g: (div(g, 2.0 * out),)
    return out


def tanh(a):
    out = Node(a.tape, np.tanh(a.value), (a,), None, "tanh")
    out.vjp = lambda g: (mul(g, 1.0 - mul(out, out)),)
    return out


def sin(a):
    return Node(a.tape, np.sin(a.value), (a,), lambda g: (mul(g, cos(a)),), "sin")


def cos(a):
    return Node(a.tape, np.cos(a.value), (a,),
                lambda g: (neg(mul(g, sin(a))),), "cos")


def _sigmoid_stable(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    out = Node(a.tape, _sigmoid_stable(a.value), (a,), None, "sigmoid")
    out.vjp = lambda g: (mul(g, mul(out, 1.0 - out)),)
    return out


def softplus(a):
    return Node(a.tape, np.logaddexp(0.0, a.value), (a,),
                lambda g: (mul(g, sigmoid(a)),), "softplus")


def matmul(a, b):
    def backward(g):
        ga = matmul(g, transpose(b)) if b.value.ndim == 2 else outer(g, b)
        gb = matmul(transpose(a), g)
        return (ga, gb)

    return Node(a.tape, a.value @ b.value, (a, b), backward, "matmul")


def outer(a, b):
    return Node(a.tape, np.outer(a.value, b.value), (a, b),
                lambda g: (matmul(g, b), matmul(transpose(g), a)), "outer")


def transpose(a):
    return Node(a.tape, a.value.T, (a,), lambda g: (transpose(g),), "transpose")


def reshape(a, shape):
    old = a.value.shape
    return Node(a.tape, a.value.reshape(shape), (a,),
                lambda g: (reshape(g, old),), "reshape")


def vsum(a, axis=None, keepdims=False):
    if axis is not None:
        axis = tuple(ax % a.value.ndim for ax in
                     (axis if isinstance(axis, tuple) else (axis,)))

    def backward(g):
        if axis is None:
            return (mul(g, a.tape.constant(np.ones_like(a.value))),)
        if not keepdims:
            kshape = list(a.value.shape)
            for i in axis:
                kshape[i] = 1
            g = reshape(g, tuple(kshape))
        return (mul(g, a.tape.constant(np.ones_like(a.value))),)

    return Node(a.tape, np.sum(a.value, axis=axis, keepdims=keepdims), (a,),
                backward, "sum")


def vmean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.value.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.value.shape[i] for i in ax]))
    return vsum(a, axis=axis, keepdims=keepdims) / float(n)


def _is_fancy(index):
    if isinstance(index, (np.ndarray, list)):
        return True
    if isinstance(index, tuple):
        return any(isinstance(i, (np.ndarray, list)) for i in index)
    return False


def take(a, index):
    def backward(g):
        def scatter_vjp(h):
            return (take(h, index),)

        z = np.zeros_like(a.value)
        if _is_fancy(index):
            np.add.at(z, index, g.value)
        else:
            z[index] += g.value
        return (Node(a.tape, z, (g,), scatter_vjp, "scatter"),)

    return Node(a.tape, a.value[index], (a,), backward, "take")


def concat(nodes, axis=0):
    tape = nodes[0].tape
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    ndim = nodes[0].value.ndim

    def backward(g):
        outs = []
        for i in range(len(nodes)):
            sl = [slice(None)] * ndim
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(take(g, tuple(sl)))
        return tuple(outs)

    return Node(tape, np.concatenate([n.value for n in nodes], axis=axis),
                tuple(nodes), backward, "concat")


def stack_scalars(nodes):
    """Pack scalar nodes into a length-n vector node."""
    return concat([reshape(n, (1,)) for n in nodes], axis=0)


# -- backward pass ----------------------------------------------------------

def backward(output, wrt, create_graph=False, check_finite=False):
    """Adjoints of `output` with respect to the nodes in `wrt`.

    Returns one adjoint per entry of `wrt`, in order; nodes that do not
    influence the output get an exactly-zero adjoint. With
    ``create_graph`` the adjoints are tape nodes and can be
    differentiated again.
    """
    tape = output.tape
    if output.value.size != 1:
        raise TapeError("backward expects a scalar output node")
    span = tape.nodes[: output.idx + 1]
    if check_finite:
        tape.validate()
        for node in span:
            if not np.all(np.isfinite(node.value)):
                raise NumericError(node.idx, node.op)
    wrt_ids = {w.idx for w in wrt}
    adjoints = {output.idx: tape.constant(np.ones_like(output.value))}
    for node in reversed(span):
        g = adjoints.get(node.idx)
        if g is None:
            continue
        if node.idx not in wrt_ids:
            del adjoints[node.idx]
        if node.vjp is None:
            continue
        for parent, contrib in zip(node.parents, node.vjp(g)):
            if contrib is None:
                continue
            if parent.idx in adjoints:
                adjoints[parent.idx] = add(adjoints[parent.idx], contrib)
            else:
                adjoints[parent.idx] = contrib
    results = []
    for w in wrt:
        g = adjoints.get(w.idx)
        if g is None:
            g = tape.constant(np.zeros_like(w.value))
        results.append(g if create_graph else g.value)
    return results


def grad(output, wrt=None, check_finite=True):
    """Map every requested leaf to d(output)/d(leaf).

    With ``wrt=None`` all leaves of the tape are used; leaves the output
    never touched map to exactly zero. Forward values on the tape are
    left untouched by the sweep.
    """
    tape = output.tape
    if wrt is None:
        wrt = [n for n in tape.nodes[: output.idx + 1] if n.op == "leaf"]
    gs = backward(output, wrt, create_graph=False, check_finite=check_finite)
    return dict(zip(wrt, gs))
