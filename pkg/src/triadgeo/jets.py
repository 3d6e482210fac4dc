"""Forward-mode jets of order 2 over a fixed chart dimension.

A :class:`Jet2` carries a value together with its exact first and (optionally)
second partial derivatives with respect to the ``dim`` chart coordinates.
Hessians are stored as packed upper triangles, so symmetry is structural
rather than numerical.

Shape convention used throughout the package: every jet has one leading batch
axis followed by arbitrary tensor axes, i.e.

    value : (B, *tensor)
    grad  : (B, *tensor, dim)
    hess  : (B, *tensor, P)          with P = dim*(dim+1)//2, or None

``hess is None`` marks an order-1 jet; arithmetic degrades gracefully to the
lowest order of its operands.  All operations are pure and numpy-vectorised
over the batch, so evaluating 100 sample points costs roughly one point's
worth of Python overhead.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

__all__ = [
    "Jet2",
    "JetDomainError",
    "SingularJetMatrixError",
    "jet_product",
    "jet_linear_solve",
    "packed_index",
    "triu_pairs",
    "unpack_hessian",
]


class JetDomainError(ArithmeticError):
    """Raised when a jet operation leaves its numerical domain."""


class SingularJetMatrixError(np.linalg.LinAlgError):
    """Raised by :func:`jet_linear_solve` when the value part is singular.

    ``condition`` carries an estimate of the condition number of the worst
    batch element (``inf`` for exactly singular matrices).
    """

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


@lru_cache(maxsize=None)
def triu_pairs(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column index arrays of the packed upper triangle for ``dim``."""
    iu, ju = np.triu_indices(dim)
    iu.setflags(write=False)
    ju.setflags(write=False)
    return iu, ju


@lru_cache(maxsize=None)
def _packed_lookup(dim: int) -> np.ndarray:
    iu, ju = triu_pairs(dim)
    table = np.zeros((dim, dim), dtype=np.intp)
    table[iu, ju] = np.arange(len(iu))
    table[ju, iu] = np.arange(len(iu))
    table.setflags(write=False)
    return table


def packed_index(dim: int, a: int, b: int) -> int:
    """Position of the (a, b) entry inside the packed upper triangle."""
    return int(_packed_lookup(dim)[a, b])


def packed_size(dim: int) -> int:
    return dim * (dim + 1) // 2


def unpack_hessian(packed: np.ndarray, dim: int) -> np.ndarray:
    """Expand a packed (..., P) Hessian to the full symmetric (..., d, d)."""
    iu, ju = triu_pairs(dim)
    full = np.zeros(packed.shape[:-1] + (dim, dim), dtype=packed.dtype)
    full[..., iu, ju] = packed
    full[..., ju, iu] = packed
    return full


def _outer_same(g: np.ndarray, dim: int) -> np.ndarray:
    # packed g_a g_b, a <= b (chain-rule second-order term)
    iu, ju = triu_pairs(dim)
    return g[..., iu] * g[..., ju]


def _outer_cross(u: np.ndarray, v: np.ndarray, dim: int) -> np.ndarray:
    # packed u_a v_b + u_b v_a (product-rule cross term; 2 u_a v_a on diagonal)
    iu, ju = triu_pairs(dim)
    return u[..., iu] * v[..., ju] + u[..., ju] * v[..., iu]


class Jet2:
    """A truncated Taylor element of order <= 2 over ``dim`` coordinates."""

    __slots__ = ("dim", "value", "grad", "hess")

    def __init__(self, dim: int, value, grad, hess=None):
        self.dim = int(dim)
        self.value = np.asarray(value)
        self.grad = np.asarray(grad)
        self.hess = None if hess is None else np.asarray(hess)
        if self.grad.shape != self.value.shape + (self.dim,):
            raise ValueError(
                f"grad shape {self.grad.shape} does not extend value shape "
                f"{self.value.shape} by (dim,)"
            )
        if self.hess is not None and self.hess.shape != self.value.shape + (
            packed_size(self.dim),
        ):
            raise ValueError(f"hess shape {self.hess.shape} inconsistent")

    # ------------------------------------------------------------------
    # constructors
    # ------------------------------------------------------------------
    @staticmethod
    def constant(x, dim: int, shape: tuple[int, ...] = (1,), order: int = 2,
                 dtype=np.float64) -> "Jet2":
        value = np.broadcast_to(np.asarray(x, dtype=dtype), shape).copy()
        grad = np.zeros(shape + (dim,), dtype=dtype)
        hess = None if order < 2 else np.zeros(shape + (packed_size(dim),), dtype=dtype)
        return Jet2(dim, value, grad, hess)

    @staticmethod
    def coordinate(points: np.ndarray, axis: int, order: int = 2) -> "Jet2":
        """Jet of the coordinate function x_axis at a (B, dim) batch of points."""
        points = np.asarray(points)
        batch, dim = points.shape
        value = points[:, axis].copy()
        grad = np.zeros((batch, dim), dtype=points.dtype)
        grad[:, axis] = 1.0
        hess = None if order < 2 else np.zeros((batch, packed_size(dim)), dtype=points.dtype)
        return Jet2(dim, value, grad, hess)

    @staticmethod
    def identity_matrix(dim: int, batch: int, order: int = 1, dtype=np.float64) -> "Jet2":
        val = np.broadcast_to(np.eye(dim, dtype=dtype), (batch, dim, dim)).copy()
        return Jet2.constant(1.0, dim, (batch, dim, dim), order, dtype) * 0.0 + Jet2(
            dim,
            val,
            np.zeros((batch, dim, dim, dim), dtype=dtype),
            None if order < 2 else np.zeros((batch, dim, dim, packed_size(dim)), dtype=dtype),
        )

    # ------------------------------------------------------------------
    # structure helpers
    # ------------------------------------------------------------------
    @property
    def order(self) -> int:
        return 1 if self.hess is None else 2

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def astype(self, dtype) -> "Jet2":
        return Jet2(
            self.dim,
            self.value.astype(dtype),
            self.grad.astype(dtype),
            None if self.hess is None else self.hess.astype(dtype),
        )

    def drop_hessian(self) -> "Jet2":
        return Jet2(self.dim, self.value, self.grad, None)

    def conj(self) -> "Jet2":
        return Jet2(
            self.dim,
            np.conj(self.value),
            np.conj(self.grad),
            None if self.hess is None else np.conj(self.hess),
        )

    @property
    def real(self) -> "Jet2":
        return Jet2(self.dim, self.value.real, self.grad.real,
                    None if self.hess is None else self.hess.real)

    @property
    def imag(self) -> "Jet2":
        return Jet2(self.dim, self.value.imag, self.grad.imag,
                    None if self.hess is None else self.hess.imag)

    def __getitem__(self, index) -> "Jet2":
        # Basic indexing on batch/tensor axes; derivative axes ride along.
        if not isinstance(index, tuple):
            index = (index,)
        if any(ix is Ellipsis for ix in index):
            raise IndexError("Ellipsis indexing of jets is not supported")
        tail = (slice(None),)
        return Jet2(
            self.dim,
            self.value[index],
            self.grad[index + tail],
            None if self.hess is None else self.hess[index + tail],
        )

    def insert_axis(self, axis: int) -> "Jet2":
        axis = axis if axis >= 0 else axis + self.value.ndim + 1
        return Jet2(
            self.dim,
            np.expand_dims(self.value, axis),
            np.expand_dims(self.grad, axis),
            None if self.hess is None else np.expand_dims(self.hess, axis),
        )

    def swap_axes(self, a: int, b: int) -> "Jet2":
        """Transpose two tensor axes (non-negative positions, 0 = batch)."""
        if a < 0 or b < 0 or a >= self.value.ndim or b >= self.value.ndim:
            raise ValueError("axes must address value dimensions")
        return Jet2(
            self.dim,
            np.swapaxes(self.value, a, b),
            np.swapaxes(self.grad, a, b),
            None if self.hess is None else np.swapaxes(self.hess, a, b),
        )

    @staticmethod
    def stack(jets: Sequence["Jet2"], axis: int = 1) -> "Jet2":
        dim = jets[0].dim
        order = min(j.order for j in jets)
        hess = None
        if order == 2:
            hess = np.stack([j.hess for j in jets], axis=axis)
        return Jet2(
            dim,
            np.stack([j.value for j in jets], axis=axis),
            np.stack([j.grad for j in jets], axis=axis),
            hess,
        )

    # ------------------------------------------------------------------
    # ring operations
    # ------------------------------------------------------------------
    @staticmethod
    def _coerce(x, like: "Jet2") -> "Jet2":
        if isinstance(x, Jet2):
            return x
        arr = np.asarray(x)
        return Jet2.constant(arr, like.dim, arr.shape if arr.ndim else (),
                             order=like.order,
                             dtype=np.result_type(arr.dtype, like.value.dtype))

    def _both_hess(self, other: "Jet2") -> bool:
        return self.hess is not None and other.hess is not None

    def __add__(self, other) -> "Jet2":
        o = Jet2._coerce(other, self)
        hess = self.hess + o.hess if self._both_hess(o) else None
        return Jet2(self.dim, self.value + o.value, self.grad + o.grad, hess)

    __radd__ = __add__

    def __neg__(self) -> "Jet2":
        return Jet2(self.dim, -self.value, -self.grad,
                    None if self.hess is None else -self.hess)

    def __sub__(self, other) -> "Jet2":
        return self.__add__(-Jet2._coerce(other, self))

    def __rsub__(self, other) -> "Jet2":
        return (-self).__add__(Jet2._coerce(other, self))

    def __mul__(self, other) -> "Jet2":
        o = Jet2._coerce(other, self)
        value = self.value * o.value
        grad = self.grad * o.value[..., None] + self.value[..., None] * o.grad
        hess = None
        if self._both_hess(o):
            hess = (
                self.hess * o.value[..., None]
                + self.value[..., None] * o.hess
                + _outer_cross(self.grad, o.grad, self.dim)
            )
        return Jet2(self.dim, value, grad, hess)

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet2":
        if np.any(self.value == 0):
            raise JetDomainError("division by zero in jet arithmetic")
        inv = 1.0 / self.value
        return self._chain(inv, -inv * inv, 2.0 * inv * inv * inv)

    def __truediv__(self, other) -> "Jet2":
        return self * Jet2._coerce(other, self).reciprocal()

    def __rtruediv__(self, other) -> "Jet2":
        return Jet2._coerce(other, self) * self.reciprocal()

    def _chain(self, f0: np.ndarray, f1: np.ndarray, f2) -> "Jet2":
        """Unary chain rule: f(self) from f, f', f'' evaluated at the value."""
        grad = f1[..., None] * self.grad
        hess = None
        if self.hess is not None:
            hess = f1[..., None] * self.hess + np.asarray(f2)[..., None] * _outer_same(
                self.grad, self.dim
            )
        return Jet2(self.dim, f0, grad, hess)

    def __pow__(self, exponent) -> "Jet2":
        if isinstance(exponent, Jet2):
            return (exponent * self.log()).exp()
        if isinstance(exponent, (int, np.integer)) or (
            isinstance(exponent, float) and float(exponent).is_integer()
        ):
            n = int(exponent)
            if n == 0:
                return Jet2.constant(1.0, self.dim, self.value.shape,
                                     self.order, self.value.dtype)
            if n < 0:
                return (self ** (-n)).reciprocal()
            v = self.value
            f1 = n * v ** (n - 1)
            f2 = n * (n - 1) * v ** (n - 2) if n >= 2 else np.zeros_like(v)
            return self._chain(v ** n, f1, f2)
        p = float(exponent)
        if np.any(self.value <= 0):
            raise JetDomainError(
                "non-integer power requires a strictly positive base"
            )
        v = self.value
        return self._chain(v ** p, p * v ** (p - 1), p * (p - 1) * v ** (p - 2))

    # elementary functions -------------------------------------------------
    def sin(self) -> "Jet2":
        s, c = np.sin(self.value), np.cos(self.value)
        return self._chain(s, c, -s)

    def cos(self) -> "Jet2":
        s, c = np.sin(self.value), np.cos(self.value)
        return self._chain(c, -s, -c)

    def exp(self) -> "Jet2":
        e = np.exp(self.value)
        return self._chain(e, e, e)

    def log(self) -> "Jet2":
        if np.any(self.value <= 0):
            raise JetDomainError("log of a non-positive value")
        inv = 1.0 / self.value
        return self._chain(np.log(self.value), inv, -inv * inv)

    def sqrt(self) -> "Jet2":
        if np.any(self.value < 0):
            raise JetDomainError("sqrt of a negative value")
        if np.any(self.value == 0):
            raise JetDomainError("sqrt is not differentiable at zero")
        r = np.sqrt(self.value)
        return self._chain(r, 0.5 / r, -0.25 / (r * self.value))

    def tanh(self) -> "Jet2":
        t = np.tanh(self.value)
        sech2 = 1.0 - t * t
        return self._chain(t, sech2, -2.0 * t * sech2)


def jet_product(spec: str, x: Jet2, y: Jet2) -> Jet2:
    """Einsum-style contraction of two tensor jets with derivative propagation.

    ``spec`` addresses the tensor axes only, e.g. ``"ab,b->a"``; the batch
    axis and the trailing derivative axes are handled internally.  The
    letters ``z``, ``D`` and ``P`` are reserved.
    """
    lhs, out = spec.split("->")
    sa, sb = lhs.split(",")
    e = np.einsum
    value = e(f"z{sa},z{sb}->z{out}", x.value, y.value)
    grad = e(f"z{sa}D,z{sb}->z{out}D", x.grad, y.value) + e(
        f"z{sa},z{sb}D->z{out}D", x.value, y.grad
    )
    hess = None
    if x.hess is not None and y.hess is not None:
        iu, ju = triu_pairs(x.dim)
        hess = (
            e(f"z{sa}P,z{sb}->z{out}P", x.hess, y.value)
            + e(f"z{sa},z{sb}P->z{out}P", x.value, y.hess)
            + e(f"z{sa}P,z{sb}P->z{out}P", x.grad[..., iu], y.grad[..., ju])
            + e(f"z{sa}P,z{sb}P->z{out}P", x.grad[..., ju], y.grad[..., iu])
        )
    return Jet2(x.dim, value, grad, hess)


def jet_linear_solve(a: Jet2, b: Jet2) -> Jet2:
    """Solve A·x = b in the jet ring for a batched square jet matrix A.

    The value part is solved by LAPACK Gaussian elimination with partial
    pivoting; gradient and Hessian parts follow by differentiating
    A·x = b, which keeps all pivoting decisions on the value part only.
    A has value shape (B, n, n); b has value shape (B, n).
    """
    if a.value.ndim != 3 or a.value.shape[-1] != a.value.shape[-2]:
        raise ValueError("matrix jet must have value shape (B, n, n)")
    if b.value.ndim != 2 or b.value.shape != a.value.shape[:2]:
        raise ValueError("rhs jet must have value shape (B, n)")
    a0 = a.value
    try:
        x0 = np.linalg.solve(a0, b.value[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularJetMatrixError("singular matrix in jet solve", np.inf) from exc
    cond = float(np.max(np.linalg.cond(a0)))
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularJetMatrixError("ill-conditioned matrix in jet solve", cond)

    # A x1 = b1 - A1 x0, directionwise
    rhs1 = b.grad - np.einsum("zijD,zj->ziD", a.grad, x0)
    x1 = np.linalg.solve(a0, rhs1)

    hess = None
    if a.hess is not None and b.hess is not None:
        iu, ju = triu_pairs(a.dim)
        rhs2 = (
            b.hess
            - np.einsum("zijP,zj->ziP", a.hess, x0)
            - np.einsum("zijP,zjP->ziP", a.grad[..., iu], x1[..., ju])
            - np.einsum("zijP,zjP->ziP", a.grad[..., ju], x1[..., iu])
        )
        hess = np.linalg.solve(a0, rhs2)
    return Jet2(a.dim, x0, x1, hess)
