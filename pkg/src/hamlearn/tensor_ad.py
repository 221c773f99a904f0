"""Dense double-precision tensors and a reverse-mode AD tape.

Tensors are plain read-only ``float64`` numpy arrays. Differentiation goes
through a :class:`Tape`: leaves are registered with :meth:`Tape.leaf`, and
every primitive applied to a :class:`Var` is recorded on that var's tape.
The same primitive applied to plain arrays is evaluated eagerly and returns
an array, so model code runs unchanged with or without a tape and produces
bitwise-identical forward values either way.

Gradients are stored with the shape of the variable they belong to. A
gradient of a scalar with respect to a column vector is therefore returned
as a 1-D array, not as a row vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when primitive inputs do not conform."""


class TapeError(RuntimeError):
    """Raised on misuse of a tape (backward before finalize, bad seed...)."""


class NonFiniteError(FloatingPointError):
    """Raised when a checked computation produces NaN or Inf."""


def tensor(data, *, checked: bool = True) -> np.ndarray:
    """Return a read-only float64 copy of ``data``.

    With ``checked`` (the default) NaN and Inf entries are rejected.
    """
    arr = np.array(data, dtype=np.float64, order="C")
    if checked and not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains non-finite entries")
    arr.flags.writeable = False
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    # ascontiguousarray would promote 0-d results to shape (1,)
    arr = np.asarray(arr, dtype=np.float64)
    if not arr.flags.c_contiguous:
        arr = arr.copy(order="C")
    if arr.flags.writeable:
        arr.flags.writeable = False
    return arr


class Var:
    """Handle to a value recorded on a tape."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(#{self.index}, shape={self.value.shape})"


@dataclass
class Node:
    kind: str
    inputs: tuple  # node index for tape inputs, None for constants
    consts: tuple  # constant arrays aligned with ``inputs`` (None for tape inputs)
    attrs: dict
    value: np.ndarray
    name: str | None = None


@dataclass
class Tape:
    """An append-only record of primitive evaluations.

    Nodes are stored in evaluation order, so inputs always precede their
    consumers. With ``checked=True`` every recorded result is tested for
    non-finite entries.
    """

    checked: bool = False
    nodes: list = field(default_factory=list)
    output: int | None = None
    _leaves: list = field(default_factory=list)

    @property
    def finalized(self) -> bool:
        return self.output is not None

    @property
    def leaves(self) -> list:
        return list(self._leaves)

    def leaf(self, value, name: str | None = None) -> Var:
        if self.finalized:
            raise TapeError("cannot add leaves to a finalized tape")
        arr = tensor(value, checked=self.checked)
        self.nodes.append(Node("leaf", (), (), {}, arr, name))
        var = Var(self, len(self.nodes) - 1, arr)
        self._leaves.append(var)
        return var

    def _record(self, kind, inputs, consts, attrs, value) -> Var:
        if self.finalized:
            raise TapeError(f"cannot record {kind!r} on a finalized tape")
        if self.checked and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{kind} produced non-finite values")
        self.nodes.append(Node(kind, inputs, consts, attrs, value))
        return Var(self, len(self.nodes) - 1, value)

    def finalize(self, output: Var) -> "Tape":
        if output.tape is not self:
            raise TapeError("output belongs to a different tape")
        self.output = output.index
        return self

    def replay(self) -> np.ndarray:
        """Recompute every node from the leaf values and return the output."""
        if not self.finalized:
            raise TapeError("replay on an unfinalized tape")
        values: list = [None] * len(self.nodes)
        for i, node in enumerate(self.nodes):
            if node.kind == "leaf":
                values[i] = node.value
                continue
            args = [values[j] if j is not None else c for j, c in zip(node.inputs, node.consts)]
            values[i] = _PRIMS[node.kind].forward(args, node.attrs)
        return values[self.output]


# ---------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class _Prim:
    forward: Callable
    vjp: Callable  # (g, args, out, attrs) -> tuple of input cotangents
    check: Callable  # (args, attrs) -> None, raises ShapeError


def _shapes(args) -> str:
    return ", ".join(str(tuple(np.shape(a))) for a in args)


def _fail(kind, args, why=""):
    msg = f"{kind}: incompatible shapes {_shapes(args)}"
    if why:
        msg += f" ({why})"
    raise ShapeError(msg)


def _check_matmul(args, attrs):
    a, b = args
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        _fail("matmul", args, "operands must be 1-D or 2-D")
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        _fail("matmul", args)


def _matmul_fwd(args, attrs):
    a, b = args
    if a.ndim == 2 and b.ndim == 1:
        return kernels.matvec(np.ascontiguousarray(a), np.ascontiguousarray(b))
    return np.asarray(a @ b, dtype=np.float64)


def _matmul_vjp(g, args, out, attrs):
    a, b = args
    if a.ndim == 2 and b.ndim == 1:
        g = np.ascontiguousarray(g)
        return kernels.outer(g, np.ascontiguousarray(b)), kernels.rmatvec(np.ascontiguousarray(a), g)
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if a.ndim == 1 and b.ndim == 2:
        return b @ g, np.outer(a, g)
    return g @ b.T, a.T @ g


def _check_same(kind):
    def check(args, attrs):
        if args[0].shape != args[1].shape:
            _fail(kind, args)

    return check


def _check_unary(args, attrs):
    pass


def _check_concat(args, attrs):
    if not args or any(a.ndim != 1 for a in args):
        _fail("concat", args, "operands must be 1-D")


def _concat_vjp(g, args, out, attrs):
    parts = []
    lo = 0
    for a in args:
        hi = lo + a.shape[0]
        parts.append(g[lo:hi])
        lo = hi
    return tuple(parts)


def _check_scale(args, attrs):
    if "factor" not in attrs:
        raise ShapeError("scale: missing 'factor' attribute")


def _as_target(logits, target):
    if target.shape == logits.shape:
        return target
    if target.size == 1:
        k = int(target.reshape(()))
        if not 0 <= k < logits.shape[0] or k != float(target.reshape(())):
            raise ShapeError(f"softmax_cross_entropy: class index {float(target.reshape(()))} out of range")
        onehot = np.zeros_like(logits)
        onehot[k] = 1.0
        return onehot
    _fail("softmax_cross_entropy", (logits, target))


def _check_sxe(args, attrs):
    logits, target = args
    if logits.ndim != 1 or logits.shape[0] < 1:
        _fail("softmax_cross_entropy", args, "logits must be a non-empty vector")
    _as_target(logits, target)


def _sxe_fwd(args, attrs):
    logits, target = args
    loss, _ = kernels.softmax_xent(np.ascontiguousarray(logits), np.ascontiguousarray(_as_target(logits, target)))
    return np.array(loss)


def _sxe_vjp(g, args, out, attrs):
    logits, target = args
    t = _as_target(logits, target)
    _, grad = kernels.softmax_xent(np.ascontiguousarray(logits), np.ascontiguousarray(t))
    shifted = logits - logits.max()
    lse = np.log(np.exp(shifted).sum())
    g_t = g * (lse - shifted) if target.shape == logits.shape else None
    return g * grad, g_t


def _mse_fwd(args, attrs):
    y, t = args
    d = y - t
    return np.array(0.5 * float(np.dot(d.ravel(), d.ravel())))


def _mse_vjp(g, args, out, attrs):
    y, t = args
    d = y - t
    return g * d, -g * d


_PRIMS: dict[str, _Prim] = {
    "matmul": _Prim(_matmul_fwd, _matmul_vjp, _check_matmul),
    "add": _Prim(lambda a, k: a[0] + a[1], lambda g, a, o, k: (g, g), _check_same("add")),
    "hadamard": _Prim(lambda a, k: a[0] * a[1], lambda g, a, o, k: (g * a[1], g * a[0]), _check_same("hadamard")),
    "concat": _Prim(lambda a, k: np.concatenate(a), _concat_vjp, _check_concat),
    "tanh": _Prim(
        lambda a, k: kernels.tanh(np.ascontiguousarray(a[0])) if a[0].ndim == 1 else np.tanh(a[0]),
        lambda g, a, o, k: (kernels.tanh_vjp(np.ascontiguousarray(g), o) if o.ndim == 1 else g * (1.0 - o * o),),
        _check_unary,
    ),
    "relu": _Prim(
        lambda a, k: kernels.relu(np.ascontiguousarray(a[0])) if a[0].ndim == 1 else np.maximum(a[0], 0.0),
        lambda g, a, o, k: (
            kernels.relu_vjp(np.ascontiguousarray(g), np.ascontiguousarray(a[0])) if o.ndim == 1 else np.where(a[0] > 0.0, g, 0.0),
        ),
        _check_unary,
    ),
    "identity": _Prim(lambda a, k: a[0].copy(), lambda g, a, o, k: (g,), _check_unary),
    "scale": _Prim(lambda a, k: a[0] * k["factor"], lambda g, a, o, k: (g * k["factor"],), _check_scale),
    "softmax_cross_entropy": _Prim(_sxe_fwd, _sxe_vjp, _check_sxe),
    "mse": _Prim(_mse_fwd, _mse_vjp, _check_same("mse")),
}

PRIMITIVES = tuple(_PRIMS)


def forward_op(kind: str, *inputs, **attrs):
    """Apply primitive ``kind`` to ``inputs``.

    Inputs may be :class:`Var` handles or plain arrays (treated as constants).
    If any input is a ``Var`` the result is recorded on its tape and a ``Var``
    is returned; otherwise the value is computed eagerly and returned as a
    read-only array.
    """
    prim = _PRIMS.get(kind)
    if prim is None:
        raise ValueError(f"unknown primitive {kind!r}; expected one of {PRIMITIVES}")
    tape = None
    idx = []
    vals = []
    consts = []
    for x in inputs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError(f"{kind}: inputs recorded on different tapes")
            idx.append(x.index)
            vals.append(x.value)
            consts.append(None)
        else:
            arr = x if isinstance(x, np.ndarray) and x.dtype == np.float64 else np.asarray(x, dtype=np.float64)
            idx.append(None)
            vals.append(arr)
            consts.append(arr)
    prim.check(vals, attrs)
    value = _freeze(prim.forward(vals, attrs))
    if tape is None:
        return value
    return tape._record(kind, tuple(idx), tuple(consts), attrs, value)


def backward(tape: Tape, seed=None, wrt: Iterable[Var] | None = None) -> dict:
    """Propagate ``seed`` from the tape output back to the leaves.

    Returns a mapping from leaf :class:`Var` to the gradient of
    ``seed . output`` with respect to that leaf. Leaves the output does not
    depend on receive zeros.
    """
    if not tape.finalized:
        raise TapeError("backward on an unfinalized tape")
    out_val = tape.nodes[tape.output].value
    if seed is None:
        if out_val.shape != ():
            raise TapeError(f"a seed is required for non-scalar output of shape {out_val.shape}")
        seed = np.array(1.0)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != out_val.shape:
        raise TapeError(f"seed shape {seed.shape} does not match output shape {out_val.shape}")

    cot: list = [None] * len(tape.nodes)
    cot[tape.output] = seed
    nodes = tape.nodes
    for i in range(tape.output, -1, -1):
        g = cot[i]
        if g is None:
            continue
        node = nodes[i]
        if node.kind == "leaf":
            continue
        args = [nodes[j].value if j is not None else c for j, c in zip(node.inputs, node.consts)]
        grads = _PRIMS[node.kind].vjp(g, args, node.value, node.attrs)
        for j, gj in zip(node.inputs, grads):
            if j is None or gj is None:
                continue
            cot[j] = gj if cot[j] is None else cot[j] + gj

    targets = tape._leaves if wrt is None else list(wrt)
    result = {}
    for leaf in targets:
        g = cot[leaf.index]
        result[leaf] = np.zeros_like(leaf.value) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.value.shape)
    return result


def value_and_grad(fn: Callable, *arrays, checked: bool = False):
    """Evaluate scalar ``fn(*vars)`` on a fresh tape and differentiate it.

    Returns ``(value, [grad for each array])``.
    """
    tape = Tape(checked=checked)
    leaves = [tape.leaf(a) for a in arrays]
    out = fn(*leaves)
    if not isinstance(out, Var):
        # output does not depend on any input
        return float(np.asarray(out)), [np.zeros_like(np.asarray(a, dtype=np.float64)) for a in arrays]
    tape.finalize(out)
    grads = backward(tape)
    return float(out.value), [grads[leaf] for leaf in leaves]


def finite_difference_gradient(f: Callable, x, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x.copy()))
        flat[i] = orig - step
        fm = float(f(x.copy()))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is not finite around coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(x.shape)


# convenience wrappers -------------------------------------------------------


def matmul(a, b):
    return forward_op("matmul", a, b)


def add(a, b):
    return forward_op("add", a, b)


def hadamard(a, b):
    return forward_op("hadamard", a, b)


def concat(*xs):
    return forward_op("concat", *xs)


def tanh(x):
    return forward_op("tanh", x)


def relu(x):
    return forward_op("relu", x)


def identity(x):
    return forward_op("identity", x)


def scale(x, factor: float):
    return forward_op("scale", x, factor=float(factor))


def softmax_cross_entropy(logits, target):
    return forward_op("softmax_cross_entropy", logits, target)


def mse(y, target):
    return forward_op("mse", y, target)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else x


def sum_scalars(terms: Sequence):
    """Add a non-empty list of scalars left to right."""
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    return acc
