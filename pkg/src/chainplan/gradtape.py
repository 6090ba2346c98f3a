"""Minimal dense-array reverse-mode autodiff on float64 numpy arrays.

Define-by-run: a fresh Tape is built per forward pass. Tensors without a
tape are plain immutable values; ops on them evaluate eagerly with no
recording, so the same loss code doubles as a numpy-only evaluator.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class TapeError(ValueError):
    """Raised on backward-contract violations (non-scalar root, off-tape wrt)."""


class Tensor:
    """Dense float64 array, optionally recorded on a tape.

    ``parents`` and ``grad_fn`` are set only for recorded non-leaf nodes.
    ``grad_fn(g)`` maps the output cotangent to a tuple of parent
    cotangents, ordered like ``parents``.
    """

    __slots__ = ("data", "tape", "parents", "grad_fn", "node_id")

    def __init__(self, data, tape=None, parents=(), grad_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.parents = parents
        self.grad_fn = grad_fn
        self.node_id = None
        if tape is not None:
            tape._register(self)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, taped={self.tape is not None})"

    # operator sugar; constants are lifted off-tape
    def __add__(self, other):
        return add(self, _lift(other, self))

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of one forward pass.

    Nodes are appended in construction order, which is automatically a
    topological order under define-by-run.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def _register(self, t: Tensor):
        t.node_id = len(self.nodes)
        self.nodes.append(t)

    def leaf(self, data) -> Tensor:
        """Record an input tensor; gradients may be requested w.r.t. it."""
        return Tensor(data, tape=self)

    def constant(self, data) -> Tensor:
        """An off-tape value usable in taped ops (no gradient tracked)."""
        return Tensor(data)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _tape_of(*tensors):
    for t in tensors:
        if t.tape is not None:
            return t.tape
    return None


def _record(tape, data, parents, grad_fn):
    if tape is None:
        return Tensor(data)
    return Tensor(data, tape=tape, parents=parents, grad_fn=grad_fn)


# ---------------------------------------------------------------------------
# ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias broadcast over 2-D rows."""
    bias_rows = a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    if a.data.shape != b.data.shape and not bias_rows:
        raise ShapeError(f"add: incompatible shapes {a.data.shape} vs {b.data.shape}")
    if bias_rows:
        grad = lambda g: (g, g.sum(axis=0))
    else:
        grad = lambda g: (g, g)
    return _record(_tape_of(a, b), a.data + b.data, (a, b), grad)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: incompatible shapes {a.data.shape} vs {b.data.shape}")
    return _record(_tape_of(a, b), a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: incompatible shapes {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data
    return _record(_tape_of(a, b), ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return _record(a.tape, a.data * k, (a,), lambda g: (g * k,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data
    return _record(_tape_of(a, b), ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def tsum(a: Tensor) -> Tensor:
    shape = a.data.shape
    return _record(a.tape, a.data.sum(), (a,), lambda g: (np.full(shape, float(g)),))


def tmean(a: Tensor) -> Tensor:
    shape = a.data.shape
    n = a.data.size
    return _record(a.tape, a.data.mean(), (a,), lambda g: (np.full(shape, float(g) / n),))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record(a.tape, ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _record(a.tape, out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record(a.tape, out, (a,), lambda g: (g * (1.0 - out * out),))


def silu(a: Tensor) -> Tensor:
    ad = a.data
    # evaluate the sigmoid on the non-overflowing side of exp
    sig = np.where(ad >= 0, 1.0 / (1.0 + np.exp(-np.abs(ad))),
                   np.exp(-np.abs(ad)) / (1.0 + np.exp(-np.abs(ad))))
    out = ad * sig
    return _record(a.tape, out, (a,), lambda g: (g * (sig * (1.0 + ad * (1.0 - sig))),))


def select_rows(a: Tensor, indices) -> Tensor:
    """Gather rows along axis 0."""
    idx = np.asarray(indices, dtype=np.intp)
    shape = a.data.shape

    def grad(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _record(a.tape, a.data[idx], (a,), grad)


def select_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous column slice of a 2-D tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"select_cols: expected 2-D, got {a.data.shape}")
    shape = a.data.shape

    def grad(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _record(a.tape, a.data[:, start:stop], (a,), grad)


def concat(tensors, axis=0) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def grad(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(_tape_of(*tensors), np.concatenate(datas, axis=axis), tuple(tensors), grad)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _record(a.tape, a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def l2norm(a: Tensor) -> Tensor:
    out = float(np.sqrt((a.data * a.data).sum()))
    ad = a.data

    def grad(g):
        if out == 0.0:
            return (np.zeros_like(ad),)
        return (float(g) * ad / out,)

    return _record(a.tape, out, (a,), grad)


def stop_gradient(a: Tensor) -> Tensor:
    """Identity forward (shares the value bitwise); blocks all gradient flow."""
    return _record(a.tape, a.data, (), None)


# ---------------------------------------------------------------------------


def backward(root: Tensor, wrt) -> list[np.ndarray]:
    """Gradients of a scalar root w.r.t. a list of tape leaves.

    Returns one array per requested tensor, shaped like it; zeros for
    leaves the root does not depend on.
    """
    if root.tape is None:
        raise TapeError("backward: root is not on a tape")
    if root.data.size != 1:
        raise TapeError(f"backward: root must be scalar-shaped, got {root.data.shape}")
    for w in wrt:
        if w.tape is not root.tape:
            raise TapeError("backward: wrt tensor is not on the root's tape")

    grads: dict[int, np.ndarray] = {root.node_id: np.ones(root.data.shape)}
    for node in reversed(root.tape.nodes[: root.node_id + 1]):
        g = grads.get(node.node_id)
        if g is None or node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if parent.tape is None:
                continue
            acc = grads.get(parent.node_id)
            grads[parent.node_id] = pg if acc is None else acc + pg

    return [grads.get(w.node_id, np.zeros(w.data.shape)) for w in wrt]
