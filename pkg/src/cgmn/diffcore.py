"""Dense reverse-mode autodiff over 2-D float64 matrices.

Every value is a :class:`Tensor` wrapping a 2-D ``numpy`` array.  Operations
record their parents and a backward rule; :meth:`Tensor.backward` replays the
recorded graph in reverse topological order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DegenerateEmbeddingError(ValueError):
    """A row with zero norm reached a normalisation that forbids it."""

    def __init__(self, row: int):
        super().__init__(f"degenerate embedding: row {row} has zero norm")
        self.row = row


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64) if _parents else np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite value produced by {op}")
        self.data = arr
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if self.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        order = topological_order(self)
        adj: dict[int, np.ndarray] = {id(self): np.ones((1, 1))}
        for node in reversed(order):
            g = adj.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                adj[key] = pg if key not in adj else adj[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def topological_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering of every node reachable from ``root``."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable")


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    # overflow surfaces as the non-finite check in Tensor, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        out = A @ B
    return Tensor(out, _parents=(a, b), _backward=lambda g: (g @ B.T, A.T @ g), op="matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor(
        a.data + b.data,
        _parents=(a, b),
        _backward=lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        op="add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor(
        a.data - b.data,
        _parents=(a, b),
        _backward=lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        op="sub",
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    b = _as_tensor(b)
    _check_broadcast(a, b, "mul")
    A, B = a.data, b.data
    return Tensor(
        A * B,
        _parents=(a, b),
        _backward=lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)),
        op="mul",
    )


def scalar_mul(a: Tensor, c: float) -> Tensor:
    return Tensor(a.data * c, _parents=(a,), _backward=lambda g: (g * c,), op="scalar_mul")


def transpose(a: Tensor) -> Tensor:
    return Tensor(a.data.T, _parents=(a,), _backward=lambda g: (g.T,), op="transpose")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        return [g[:, edges[i]:edges[i + 1]] for i in range(len(parts))]

    return Tensor(np.concatenate([p.data for p in parts], axis=1), _parents=tuple(parts), _backward=backward, op="concat_cols")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {[p.shape for p in parts]}")
    edges = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return [g[edges[i]:edges[i + 1]] for i in range(len(parts))]

    return Tensor(np.concatenate([p.data for p in parts], axis=0), _parents=tuple(parts), _backward=backward, op="concat_rows")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0.0), _parents=(a,), _backward=lambda g: (g * mask,), op="relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * out * (1.0 - out),), op="sigmoid")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * out,), op="exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise FloatingPointError("log of a non-positive value")
    return Tensor(np.log(x), _parents=(a,), _backward=lambda g: (g / x,), op="log")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor(a.data.sum(), _parents=(a,), _backward=lambda g: (np.full(shape, g[0, 0]),), op="sum")


def row_sum(a: Tensor) -> Tensor:
    """Sum across columns: (n, d) -> (n, 1)."""
    d = a.shape[1]
    return Tensor(
        a.data.sum(axis=1, keepdims=True),
        _parents=(a,),
        _backward=lambda g: (np.repeat(g, d, axis=1),),
        op="row_sum",
    )


def row_mean(a: Tensor) -> Tensor:
    """Average of the rows: (n, d) -> (1, d)."""
    n = a.shape[0]
    if n == 0:
        raise ShapeError("row_mean of an empty matrix")
    return Tensor(
        a.data.mean(axis=0, keepdims=True),
        _parents=(a,),
        _backward=lambda g: (np.repeat(g / n, n, axis=0),),
        op="row_mean",
    )


def l2_normalize_rows(a: Tensor, zero_ok: bool = False) -> Tensor:
    """Scale each row to unit norm.

    Zero rows raise :class:`DegenerateEmbeddingError` unless ``zero_ok``, in
    which case they stay zero and pass no gradient.
    """
    x = a.data
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))[:, None]
    zero = norms[:, 0] == 0.0
    if np.any(zero):
        if not zero_ok:
            raise DegenerateEmbeddingError(int(np.flatnonzero(zero)[0]))
        norms = np.where(zero[:, None], 1.0, norms)
    u = x / norms
    if zero_ok:
        u[zero] = 0.0

    def backward(g):
        gx = (g - u * np.einsum("ij,ij->i", g, u)[:, None]) / norms
        if zero_ok:
            gx[zero] = 0.0
        return (gx,)

    return Tensor(u, _parents=(a,), _backward=backward, op="l2_normalize_rows")


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Cosine between corresponding rows: (n, d), (n, d) -> (n, 1)."""
    if a.shape != b.shape:
        raise ShapeError(f"cosine_rows: {a.shape} vs {b.shape}")
    return row_sum(mul(l2_normalize_rows(a), l2_normalize_rows(b)))


def cosine_matrix(a: Tensor, b: Tensor, zero_ok: bool = False) -> Tensor:
    """All-pairs cosine: (n, d), (m, d) -> (n, m)."""
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_matrix: {a.shape} vs {b.shape}")
    return matmul(l2_normalize_rows(a, zero_ok), transpose(l2_normalize_rows(b, zero_ok)))


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst_index: tuple[int, int] | None
    checked: int
    nondifferentiable: list[tuple[int, int]] = field(default_factory=list)

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        extra = f", {len(self.nondifferentiable)} nondifferentiable point(s) excluded" if self.nondifferentiable else ""
        return f"grad_check {status}: max rel err {self.max_rel_error:.3e} over {self.checked} coords{extra}"


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def numeric_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5, order: int = 2):
    """Central differences of ``f`` w.r.t. ``x`` (mutated in place, restored).

    ``order=4`` uses the five-point stencil, whose truncation error is small
    enough to allow larger steps and so less round-off.  Returns
    ``(central, kink_mask)``; ``kink_mask`` flags coordinates where differences
    at two scales disagree, i.e. ``f`` is not differentiable nearby.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    central = np.zeros_like(x)
    kinks = np.zeros(x.shape, dtype=bool)
    f0 = f()

    def at(idx, value):
        x[idx] = value
        return f()

    for idx in np.ndindex(x.shape):
        orig = x[idx]
        fp, fm = at(idx, orig + eps), at(idx, orig - eps)
        if order == 2:
            central[idx] = (fp - fm) / (2 * eps)
            fwd, bwd = (fp - f0) / eps, (f0 - fm) / eps
            gap = abs(fwd - bwd)
        else:
            fp2, fm2 = at(idx, orig + 2 * eps), at(idx, orig - 2 * eps)
            c1, c2 = (fp - fm) / (2 * eps), (fp2 - fm2) / (4 * eps)
            central[idx] = (4 * c1 - c2) / 3
            # second differences at two scales catch kinks a symmetric stencil hides
            s1, s2 = (fp - 2 * f0 + fm) / eps, (fp2 - 2 * f0 + fm2) / (2 * eps)
            gap = max(abs(c2 - c1), abs(s2 - 2 * s1))
        x[idx] = orig
        kinks[idx] = gap > 1e-3 * max(1.0, abs(central[idx]))
    return central, kinks


def grad_check(
    f: Callable[[Tensor], Tensor],
    at: Tensor,
    eps: float = 1e-5,
    tol: float = 1e-6,
    floor: float = 1e-8,
    order: int = 2,
) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f`` at ``at`` with central differences."""
    x = Tensor(at.data.copy(), requires_grad=True)
    f(x).backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    probe = at.data.copy()
    numeric, kinks = numeric_gradient(lambda: f(Tensor(probe)).item(), probe, eps, order)
    return _report(analytic, numeric, kinks, tol, floor)


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-6,
    floor: float = 1e-8,
    order: int = 2,
) -> GradCheckReport:
    """Like :func:`grad_check` but over several parameter tensors used by ``loss_fn``."""
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    numeric, kinks = [], []
    for p in params:
        num, k = numeric_gradient(lambda: loss_fn().item(), p.data, eps, order)
        numeric.append(num)
        kinks.append(k)
    a = np.concatenate([g.ravel() for g in analytic])[None, :]
    n = np.concatenate([g.ravel() for g in numeric])[None, :]
    k = np.concatenate([g.ravel() for g in kinks])[None, :]
    return _report(a, n, k, tol, floor)


def _report(analytic, numeric, kinks, tol, floor) -> GradCheckReport:
    worst, worst_idx, checked = 0.0, None, 0
    excluded = []
    for idx in np.ndindex(analytic.shape):
        if kinks[idx]:
            excluded.append(tuple(int(i) for i in idx))
            continue
        checked += 1
        err = relative_error(float(analytic[idx]), float(numeric[idx]), floor)
        if err > worst:
            worst, worst_idx = err, tuple(int(i) for i in idx)
    return GradCheckReport(worst <= tol, worst, worst_idx, checked, excluded)
