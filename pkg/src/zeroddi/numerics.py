"""Dense float64 tensors with taped reverse-mode differentiation.

The engine is deliberately small: scalars, vectors and matrices, eagerly
evaluated numpy forward ops, and a per-thread Tape recording the closures
needed for one reverse sweep. Everything downstream (the graph encoder,
semantic fusion and the losses) is composed from these primitives, so a
single finite-difference harness (grad_check) can vouch for all of them.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# Added under the square root in normalization *gradients* so centered-vector
# normalization stays differentiable at the origin. Forward values use the
# exact norm (a guarded forward would put a ~1e-12 floor under quantities the
# loss closed forms expect to reach exactly).
NORM_GUARD = 1e-12

LN_DEFAULT_EPS = 1e-5


class NonFiniteError(ArithmeticError):
    """A forward op produced NaN or Inf."""


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested op."""


class NondeterministicFunctionError(RuntimeError):
    """grad_check re-evaluated its target and saw a different value."""


class Tensor:
    """Immutable dense float64 array: 0-d scalar, 1-d vector or 2-d matrix.

    Data is validated to be finite at construction time, which makes every
    op's output check the "finite after any forward op" invariant for free.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are at most 2-d, got shape {arr.shape}")
        if arr.ndim > 0 and arr.size == 0:
            raise ShapeError("tensors must be non-empty")
        # sum() is NaN/Inf-absorbing, so one scalar check covers the array
        if not math.isfinite(float(arr.sum())):
            raise NonFiniteError("tensor holds NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, arr: np.ndarray, check: bool = True) -> "Tensor":
        """Fast construction for op outputs already known to be float64.

        Ops that cannot produce NaN/Inf from finite inputs (reshuffles,
        selections, ReLU) pass check=False; arithmetic ops keep the check.
        """
        if check and not math.isfinite(float(arr.sum())):
            raise NonFiniteError("op produced NaN or Inf")
        t = object.__new__(cls)
        t.data = arr
        t.requires_grad = False
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.ndim != 0:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data)

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


_Backward = Callable[[np.ndarray], tuple]


class _TapeStack(threading.local):
    def __init__(self):
        self.stack: list["Tape"] = []


_STACKS = _TapeStack()


def _active() -> "Tape | None":
    s = _STACKS.stack
    return s[-1] if s else None


class Tape:
    """Single-writer, append-only record of ops in execution order.

    Inputs of every recorded op precede it on the tape by construction, so
    one reverse pass over the list visits each op exactly once with its
    output gradient fully accumulated.
    """

    __slots__ = ("_ops", "_tracked", "_leaves")

    def __init__(self):
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], _Backward]] = []
        self._tracked: set[int] = set()
        self._leaves: dict[int, Tensor] = {}

    def watch(self, *tensors: Tensor) -> None:
        """Register tensors whose gradients must be reported even if unused."""
        for t in tensors:
            self._tracked.add(id(t))
            self._leaves[id(t)] = t

    def needs(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: _Backward) -> None:
        for t in inputs:
            if t.requires_grad:
                self._leaves.setdefault(id(t), t)
        self._tracked.add(id(out))
        self._ops.append((out, inputs, backward))

    def __len__(self) -> int:
        return len(self._ops)

    def __enter__(self) -> "Tape":
        _STACKS.stack.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        popped = _STACKS.stack.pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar loss; returns gradient per leaf tensor.

    Every requires_grad tensor that took part in the tape, plus every
    watched tensor, gets an entry; tensors with no path to the loss map to
    zeros. Two sweeps over the same tape give bitwise-identical results.
    """
    if loss.data.ndim != 0:
        raise ShapeError("backward needs a scalar loss")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for out, inputs, bw in reversed(tape._ops):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, bw(g)):
            if gi is None:
                continue
            k = id(inp)
            prev = grads.get(k)
            grads[k] = gi if prev is None else prev + gi
    result: dict[Tensor, np.ndarray] = {}
    for k, leaf in tape._leaves.items():
        g = grads.get(k)
        result[leaf] = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64)
    return result


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} @ {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = Tensor._wrap(a.data @ b.data)
    t = _active()
    if t is not None:
        na, nb = t.needs(a), t.needs(b)
        if na or nb:
            ad, bd = a.data, b.data

            def bw(g):
                return (g @ bd.T if na else None, ad.T @ g if nb else None)

            t.record(out, (a, b), bw)
    return out


def matvec(a: Tensor, x: Tensor) -> Tensor:
    if a.data.ndim != 2 or x.data.ndim != 1 or a.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"matvec shapes disagree: {a.shape} @ {x.shape}")
    out = Tensor._wrap(a.data @ x.data)
    t = _active()
    if t is not None:
        na, nx = t.needs(a), t.needs(x)
        if na or nx:
            ad, xd = a.data, x.data

            def bw(g):
                return (np.outer(g, xd) if na else None, ad.T @ g if nx else None)

            t.record(out, (a, x), bw)
    return out


def matmul_nt(a: Tensor, b: Tensor, scale_const: float = 1.0) -> Tensor:
    """scale * (a @ b.T) in one op; the workhorse of the attention logits."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(f"matmul_nt needs matching widths: {a.shape} vs {b.shape}")
    prod = a.data @ b.data.T
    out = Tensor._wrap(prod * scale_const if scale_const != 1.0 else prod)
    t = _active()
    if t is not None:
        na, nb = t.needs(a), t.needs(b)
        if na or nb:
            ad, bd = a.data, b.data

            def bw(g):
                gs = g * scale_const if scale_const != 1.0 else g
                return (gs @ bd if na else None, gs.T @ ad if nb else None)

            t.record(out, (a, b), bw)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for a 2-d x; one tape entry instead of two."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"linear shapes disagree: {x.shape} @ {w.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"linear bias must have shape ({w.data.shape[1]},)")
    out = Tensor._wrap(x.data @ w.data + b.data)
    t = _active()
    if t is not None:
        nx, nw, nb = t.needs(x), t.needs(w), t.needs(b)
        if nx or nw or nb:
            xd, wd = x.data, w.data

            def bw(g):
                return (
                    g @ wd.T if nx else None,
                    xd.T @ g if nw else None,
                    g.sum(axis=0) if nb else None,
                )

            t.record(out, (x, w, b), bw)
    return out


def linear_vec(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """w.T @ x + b for a 1-d x (same weight layout as linear)."""
    if x.data.ndim != 1 or w.data.ndim != 2 or x.data.shape[0] != w.data.shape[0]:
        raise ShapeError(f"linear_vec shapes disagree: {x.shape} through {w.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"linear_vec bias must have shape ({w.data.shape[1]},)")
    out = Tensor._wrap(x.data @ w.data + b.data)
    t = _active()
    if t is not None:
        nx, nw, nb = t.needs(x), t.needs(w), t.needs(b)
        if nx or nw or nb:
            xd, wd = x.data, w.data

            def bw(g):
                return (
                    wd @ g if nx else None,
                    np.outer(xd, g) if nw else None,
                    g if nb else None,
                )

            t.record(out, (x, w, b), bw)
    return out


def _softmax_fwd(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def attention_pool(q: Tensor, k: Tensor, v: Tensor, scale_const: float) -> Tensor:
    """mean over rows of softmax(scale * q k^T) @ v, fused into one op.

    The attention weights follow the same float operations as
    matmul_nt + softmax_rows, so the fused value matches the compositional
    path bitwise.
    """
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("attention_pool needs matrices")
    if q.data.shape[1] != k.data.shape[1] or k.data.shape[0] != v.data.shape[0]:
        raise ShapeError(
            f"attention_pool shapes disagree: {q.shape}, {k.shape}, {v.shape}"
        )
    a = _softmax_fwd((q.data @ k.data.T) * scale_const)
    out = Tensor._wrap((a @ v.data).mean(axis=0))
    t = _active()
    if t is not None:
        nq, nk, nv = t.needs(q), t.needs(k), t.needs(v)
        if nq or nk or nv:
            qd, kd, vd = q.data, k.data, v.data
            n = qd.shape[0]

            def bw(g):
                da_row = (vd @ g) / n                      # same for every row
                da = np.broadcast_to(da_row, a.shape)
                ds = a * (da - (a * da_row).sum(axis=1, keepdims=True))
                gq = (ds @ kd) * scale_const if nq else None
                gk = (ds.T @ qd) * scale_const if nk else None
                gv = np.outer(a.sum(axis=0) / n, g) if nv else None
                return (gq, gk, gv)

            t.record(out, (q, k, v), bw)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {a.shape}")
    out = Tensor._wrap(np.ascontiguousarray(a.data.T), check=False)
    t = _active()
    if t is not None and t.needs(a):
        t.record(out, (a,), lambda g: (np.ascontiguousarray(g.T),))
    return out


def _binary_broadcast(name, a, b):
    """Shape legality for add/sub: equal shapes, matrix (m,n) vs vector (n,),
    or anything vs scalar."""
    if a.data.shape == b.data.shape:
        return "same"
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        return "rowvec"
    if b.data.ndim == 0:
        return "scalar"
    raise ShapeError(f"{name} cannot combine shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_broadcast("add", a, b)
    out = Tensor._wrap(a.data + b.data)
    t = _active()
    if t is not None:
        na, nb = t.needs(a), t.needs(b)
        if na or nb:
            if mode == "same":
                bw = lambda g: (g if na else None, g if nb else None)
            elif mode == "rowvec":
                bw = lambda g: (g if na else None, g.sum(axis=0) if nb else None)
            else:
                bw = lambda g: (g if na else None, g.sum() if nb else None)
            t.record(out, (a, b), bw)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_broadcast("sub", a, b)
    out = Tensor._wrap(a.data - b.data)
    t = _active()
    if t is not None:
        na, nb = t.needs(a), t.needs(b)
        if na or nb:
            if mode == "same":
                bw = lambda g: (g if na else None, -g if nb else None)
            elif mode == "rowvec":
                bw = lambda g: (g if na else None, -g.sum(axis=0) if nb else None)
            else:
                bw = lambda g: (g if na else None, -g.sum() if nb else None)
            t.record(out, (a, b), bw)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; either operand may be a 0-d scalar tensor."""
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"mul cannot combine shapes {a.shape} and {b.shape}")
    out = Tensor._wrap(a.data * b.data)
    t = _active()
    if t is not None:
        na, nb = t.needs(a), t.needs(b)
        if na or nb:
            ad, bd = a.data, b.data

            def bw(g):
                ga = gb = None
                if na:
                    ga = g * bd
                    if ad.ndim == 0:
                        ga = ga.sum()
                if nb:
                    gb = g * ad
                    if bd.ndim == 0:
                        gb = gb.sum()
                return (ga, gb)

            t.record(out, (a, b), bw)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor._wrap(a.data * c)
    t = _active()
    if t is not None and t.needs(a):
        t.record(out, (a,), lambda g: (g * c,))
    return out


def add_const(a: Tensor, c: float) -> Tensor:
    out = Tensor._wrap(a.data + c)
    t = _active()
    if t is not None and t.needs(a):
        t.record(out, (a,), lambda g: (g,))
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.maximum(a.data, 0.0), check=False)
    t = _active()
    if t is not None and t.needs(a):
        mask = a.data > 0

        def bw(g):
            return (g * mask,)

        t.record(out, (a,), bw)
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a matrix, got {x.shape}")
    s = _softmax_fwd(x.data)
    out = Tensor._wrap(s, check=False)
    t = _active()
    if t is not None and t.needs(x):

        def bw(g):
            return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

        t.record(out, (x,), bw)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_DEFAULT_EPS) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine."""
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm needs a matrix, got {x.shape}")
    n = x.data.shape[1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError(f"layer_norm affine params must have shape ({n},)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor._wrap(xhat * gain.data + bias.data)
    t = _active()
    if t is not None:
        nx, ngain, nbias = t.needs(x), t.needs(gain), t.needs(bias)
        if nx or ngain or nbias:
            gd = gain.data

            def bw(g):
                gx = gg = gb = None
                if ngain:
                    gg = (g * xhat).sum(axis=0)
                if nbias:
                    gb = g.sum(axis=0)
                if nx:
                    gh = g * gd
                    gx = inv * (
                        gh
                        - gh.mean(axis=1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=1, keepdims=True)
                    )
                return (gx, gg, gb)

            t.record(out, (x, gain, bias), bw)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor._wrap(a.data.sum())
    t = _active()
    if t is not None and t.needs(a):
        shape = a.data.shape

        def bw(g):
            return (np.full(shape, float(g)),)

        t.record(out, (a,), bw)
    return out


def mean_all(a: Tensor) -> Tensor:
    out = Tensor._wrap(a.data.mean())
    t = _active()
    if t is not None and t.needs(a):
        shape = a.data.shape
        inv = 1.0 / a.data.size

        def bw(g):
            return (np.full(shape, float(g) * inv),)

        t.record(out, (a,), bw)
    return out


def sum_rows(a: Tensor) -> Tensor:
    """Column-wise totals: (m, n) -> (n,)."""
    if a.data.ndim != 2:
        raise ShapeError(f"sum_rows needs a matrix, got {a.shape}")
    out = Tensor._wrap(a.data.sum(axis=0))
    t = _active()
    if t is not None and t.needs(a):
        m = a.data.shape[0]

        def bw(g):
            return (np.broadcast_to(g, (m, g.shape[0])),)

        t.record(out, (a,), bw)
    return out


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise means: (m, n) -> (n,)."""
    if a.data.ndim != 2:
        raise ShapeError(f"mean_rows needs a matrix, got {a.shape}")
    out = Tensor._wrap(a.data.mean(axis=0))
    t = _active()
    if t is not None and t.needs(a):
        m = a.data.shape[0]
        inv = 1.0 / m

        def bw(g):
            return (np.broadcast_to(g * inv, (m, g.shape[0])),)

        t.record(out, (a,), bw)
    return out


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    if not vectors:
        raise ShapeError("stack_rows needs at least one vector")
    for v in vectors:
        if v.data.ndim != 1:
            raise ShapeError("stack_rows takes 1-d tensors")
    out = Tensor._wrap(np.stack([v.data for v in vectors]), check=False)
    t = _active()
    if t is not None:
        needs = [t.needs(v) for v in vectors]
        if any(needs):

            def bw(g):
                return tuple(g[i] if needs[i] else None for i in range(len(needs)))

            t.record(out, tuple(vectors), bw)
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Vertical concatenation; 1-d parts count as single rows."""
    if not parts:
        raise ShapeError("concat_rows needs at least one part")
    blocks = [p.data if p.data.ndim == 2 else p.data[None, :] for p in parts]
    width = blocks[0].shape[1]
    if any(b.shape[1] != width for b in blocks):
        raise ShapeError("concat_rows parts disagree on width")
    out = Tensor._wrap(np.concatenate(blocks, axis=0), check=False)
    t = _active()
    if t is not None:
        needs = [t.needs(p) for p in parts]
        if any(needs):
            sizes = [b.shape[0] for b in blocks]
            dims = [p.data.ndim for p in parts]
            offsets = np.cumsum([0] + sizes)

            def bw(g):
                grads = []
                for i in range(len(parts)):
                    if not needs[i]:
                        grads.append(None)
                        continue
                    piece = g[offsets[i]:offsets[i + 1]]
                    grads.append(piece[0] if dims[i] == 1 else piece)
                return tuple(grads)

            t.record(out, tuple(parts), bw)
    return out


def concat_vec(parts: Sequence[Tensor]) -> Tensor:
    if not parts or any(p.data.ndim != 1 for p in parts):
        raise ShapeError("concat_vec takes 1-d tensors")
    out = Tensor._wrap(np.concatenate([p.data for p in parts]), check=False)
    t = _active()
    if t is not None:
        needs = [t.needs(p) for p in parts]
        if any(needs):
            sizes = [p.data.shape[0] for p in parts]
            offsets = np.cumsum([0] + sizes)

            def bw(g):
                return tuple(
                    g[offsets[i]:offsets[i + 1]] if needs[i] else None
                    for i in range(len(parts))
                )

            t.record(out, tuple(parts), bw)
    return out


def gather_rows(table: Tensor, indices) -> Tensor:
    """Row lookup (embedding style); gradient scatter-adds into the table."""
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows needs a matrix table, got {table.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("gather_rows needs a non-empty 1-d index list")
    if idx.min() < 0 or idx.max() >= table.data.shape[0]:
        raise ShapeError(f"gather_rows index out of range for table {table.shape}")
    out = Tensor._wrap(table.data[idx], check=False)
    t = _active()
    if t is not None and t.needs(table):
        shape = table.data.shape

        def bw(g):
            gt = np.zeros(shape)
            np.add.at(gt, idx, g)
            return (gt,)

        t.record(out, (table,), bw)
    return out


def take_row(a: Tensor, i: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"take_row needs a matrix, got {a.shape}")
    if not 0 <= i < a.data.shape[0]:
        raise ShapeError(f"row {i} out of range for {a.shape}")
    out = Tensor._wrap(a.data[i].copy(), check=False)
    t = _active()
    if t is not None and t.needs(a):
        shape = a.data.shape

        def bw(g):
            ga = np.zeros(shape)
            ga[i] = g
            return (ga,)

        t.record(out, (a,), bw)
    return out


def pick(v: Tensor, i: int) -> Tensor:
    if v.data.ndim != 1:
        raise ShapeError(f"pick needs a vector, got {v.shape}")
    if not 0 <= i < v.data.shape[0]:
        raise ShapeError(f"index {i} out of range for {v.shape}")
    out = Tensor._wrap(np.asarray(v.data[i]), check=False)
    t = _active()
    if t is not None and t.needs(v):
        n = v.data.shape[0]

        def bw(g):
            gv = np.zeros(n)
            gv[i] = g
            return (gv,)

        t.record(out, (v,), bw)
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError(f"dot needs equal-length vectors, got {a.shape}, {b.shape}")
    out = Tensor._wrap(a.data @ b.data)
    t = _active()
    if t is not None:
        na, nb = t.needs(a), t.needs(b)
        if na or nb:
            ad, bd = a.data, b.data

            def bw(g):
                return (g * bd if na else None, g * ad if nb else None)

            t.record(out, (a, b), bw)
    return out


def logsumexp_vec(x: Tensor) -> Tensor:
    """Stable log(sum(exp(x))) over a vector."""
    if x.data.ndim != 1:
        raise ShapeError(f"logsumexp_vec needs a vector, got {x.shape}")
    m = x.data.max()
    e = np.exp(x.data - m)
    s = e.sum()
    out = Tensor._wrap(np.asarray(m + np.log(s)), check=False)
    t = _active()
    if t is not None and t.needs(x):
        p = e / s

        def bw(g):
            return (p * float(g),)

        t.record(out, (x,), bw)
    return out


def _normalize_bw(xd: np.ndarray, sq: np.ndarray):
    """Shared gradient for row/vector normalization with the guarded norm."""
    denom = np.sqrt(sq + NORM_GUARD)
    return denom


def normalize_vec(x: Tensor) -> Tensor:
    """x / ||x|| with the exact norm; gradient uses the guarded norm."""
    if x.data.ndim != 1:
        raise ShapeError(f"normalize_vec needs a vector, got {x.shape}")
    sq = float(x.data @ x.data)
    nrm = math.sqrt(sq)
    out = Tensor._wrap(x.data / nrm if nrm > 0.0 else np.zeros_like(x.data))
    t = _active()
    if t is not None and t.needs(x):
        xd = x.data
        denom = math.sqrt(sq + NORM_GUARD)

        def bw(g):
            return (g / denom - xd * ((xd @ g) / denom**3),)

        t.record(out, (x,), bw)
    return out


def normalize_rows(x: Tensor) -> Tensor:
    """Each row scaled to unit length (exact norm; guarded in the gradient)."""
    if x.data.ndim != 2:
        raise ShapeError(f"normalize_rows needs a matrix, got {x.shape}")
    sq = (x.data * x.data).sum(axis=1, keepdims=True)
    nrm = np.sqrt(sq)
    safe = np.where(nrm > 0.0, nrm, 1.0)
    out = Tensor._wrap(np.where(nrm > 0.0, x.data / safe, 0.0))
    t = _active()
    if t is not None and t.needs(x):
        xd = x.data
        denom = np.sqrt(sq + NORM_GUARD)

        def bw(g):
            proj = (xd * g).sum(axis=1, keepdims=True)
            return (g / denom - xd * (proj / denom**3),)

        t.record(out, (x,), bw)
    return out


def masked_max_vec(x: Tensor, mask) -> Tensor:
    """Max over the entries where mask is True; ties route the subgradient to
    the first maximal index in scan order."""
    if x.data.ndim != 1:
        raise ShapeError(f"masked_max_vec needs a vector, got {x.shape}")
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.data.shape:
        raise ShapeError("mask shape must match the vector")
    if not m.any():
        raise ShapeError("masked_max_vec needs at least one allowed entry")
    masked = np.where(m, x.data, -np.inf)
    i = int(np.argmax(masked))
    out = Tensor._wrap(np.asarray(x.data[i]), check=False)
    t = _active()
    if t is not None and t.needs(x):
        n = x.data.shape[0]

        def bw(g):
            gx = np.zeros(n)
            gx[i] = g
            return (gx,)

        t.record(out, (x,), bw)
    return out


def masked_rowmax(x: Tensor, mask) -> Tensor:
    """Per-row max over allowed entries: (m, n), (m, n) bool -> (m,)."""
    if x.data.ndim != 2:
        raise ShapeError(f"masked_rowmax needs a matrix, got {x.shape}")
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.data.shape:
        raise ShapeError("mask shape must match the matrix")
    if not m.any(axis=1).all():
        raise ShapeError("masked_rowmax needs an allowed entry in every row")
    masked = np.where(m, x.data, -np.inf)
    idx = np.argmax(masked, axis=1)
    rows = np.arange(x.data.shape[0])
    out = Tensor._wrap(x.data[rows, idx], check=False)
    t = _active()
    if t is not None and t.needs(x):
        shape = x.data.shape

        def bw(g):
            gx = np.zeros(shape)
            gx[rows, idx] = g
            return (gx,)

        t.record(out, (x,), bw)
    return out


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of same-shaped tensors in list order."""
    if not tensors:
        raise ShapeError("add_n needs at least one tensor")
    shape = tensors[0].data.shape
    if any(t.data.shape != shape for t in tensors):
        raise ShapeError("add_n tensors must share a shape")
    acc = tensors[0].data
    for t in tensors[1:]:
        acc = acc + t.data
    out = Tensor._wrap(acc)
    t = _active()
    if t is not None:
        needs = [t.needs(x) for x in tensors]
        if any(needs):

            def bw(g):
                return tuple(g if n else None for n in needs)

            t.record(out, tuple(tensors), bw)
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference comparison."""

    max_rel_err: float
    per_param: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def worst(self) -> str:
        if not self.per_param:
            return ""
        return max(self.per_param, key=lambda k: self.per_param[k])


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    atol_floor: float = 1e-9,
) -> GradCheckReport:
    """Compare taped gradients of f() against central finite differences.

    f must be a deterministic closure over `params` returning a scalar
    Tensor. Parameters are perturbed in place one coordinate at a time
    (restored afterwards), so the caller must not share them across threads
    while a check runs. Differences below `atol_floor` count as zero error;
    otherwise the error is |a - b| / max(|a|, |b|).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    v1 = f().item()
    v2 = f().item()
    if v1 != v2:
        raise NondeterministicFunctionError(
            f"f() returned {v1!r} then {v2!r} on identical state"
        )
    with Tape() as tape:
        tape.watch(*params.values())
        loss = f()
    grads = backward(loss, tape)

    per_param: dict[str, float] = {}
    for name, p in params.items():
        analytic = grads[p].reshape(-1)
        data = p.data.reshape(-1)
        worst = 0.0
        for k in range(data.shape[0]):
            orig = data[k]
            data[k] = orig + h
            fp = f().item()
            data[k] = orig - h
            fm = f().item()
            data[k] = orig
            fd = (fp - fm) / (2.0 * h)
            diff = abs(analytic[k] - fd)
            if diff > atol_floor:
                worst = max(worst, diff / max(abs(analytic[k]), abs(fd)))
        per_param[name] = worst
    overall = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(max_rel_err=overall, per_param=per_param, tol=tol)
