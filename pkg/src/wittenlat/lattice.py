"""Truncated lattices ``eps Z^d`` and the nearest-neighbour operators on them.

Sign and scaling conventions: the Witten operator is

    H = -eps^2 Delta_eps + V_eps,   V_eps(x) = sum_v [exp(-(f(x+eps v) - f(x)) / (2 eps)) - 1],

whose matrix has diagonal ``2d + V_eps(x)`` and ``-1`` per lattice edge.
Edges leaving the box are dropped while the diagonal is kept (Dirichlet
truncation, i.e. values outside the box are zero).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInput, OverflowWarning, ShapeMismatch, TooLarge, UnderflowWarning
from .landscape import PotentialSpec

MAX_SITES = 5_000_000
EXP_CLAMP = 700.0


# ---------------------------------------------------------------------------
# boxes and vectors


@dataclass(frozen=True)
class LatticeBox:
    """Sites ``center + eps k`` (``k`` integer) inside ``center +- half_widths``.

    Sites are enumerated lexicographically in ``k`` (last axis fastest).
    """

    dim: int
    eps: float
    center: np.ndarray
    half_widths: np.ndarray
    shape: tuple[int, ...]
    k_min: np.ndarray

    @property
    def n(self) -> int:
        return int(np.prod(self.shape))

    @property
    def weight(self) -> float:
        """The measure ``eps^d`` of one site."""
        return self.eps**self.dim

    @property
    def axes(self) -> list[np.ndarray]:
        return [self.center[j] + self.eps * (self.k_min[j] + np.arange(self.shape[j]))
                for j in range(self.dim)]

    @property
    def points(self) -> np.ndarray:
        """Site coordinates, shape ``(n, d)``."""
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    @property
    def neighbor_set(self) -> np.ndarray:
        """The ``2d`` unit vectors ``+e_k, -e_k``."""
        eye = np.eye(self.dim, dtype=int)
        return np.concatenate([eye, -eye])

    def index_of(self, k) -> int:
        """Dense index of the site with integer offset ``k``, or ``-1`` if outside."""
        k = np.asarray(k, dtype=int) - self.k_min
        if np.any(k < 0) or np.any(k >= self.shape):
            return -1
        return int(np.ravel_multi_index(tuple(k), self.shape))

    def nearest_index(self, x) -> int:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        k = np.rint((x - self.center) / self.eps).astype(int)
        k = np.clip(k, self.k_min, self.k_min + np.array(self.shape) - 1)
        return self.index_of(k)

    def neighbor(self, i: int, v) -> int:
        k = np.array(np.unravel_index(i, self.shape)) + self.k_min + np.asarray(v, dtype=int)
        return self.index_of(k)

    def boundary_mask(self, margin: int = 1) -> np.ndarray:
        """Sites within ``margin`` lattice steps of the box faces."""
        grids = np.meshgrid(*[np.arange(s) for s in self.shape], indexing="ij")
        m = np.zeros(self.shape, dtype=bool)
        for g, s in zip(grids, self.shape):
            m |= (g < margin) | (g >= s - margin)
        return m.ravel()

    def zeros(self) -> "LatticeVector":
        return LatticeVector(self, np.zeros(self.n))

    def vector(self, values) -> "LatticeVector":
        return LatticeVector(self, values)

    def same_as(self, other: "LatticeBox") -> bool:
        return (self is other) or (
            self.dim == other.dim
            and self.eps == other.eps
            and self.shape == other.shape
            and np.array_equal(self.center, other.center)
            and np.array_equal(self.k_min, other.k_min)
        )


def build_box(dim: int, eps: float, center, half_widths, max_sites: int = MAX_SITES) -> LatticeBox:
    if eps <= 0:
        raise InvalidInput("eps must be positive")
    center = np.broadcast_to(np.asarray(center, dtype=float), (dim,)).copy()
    hw = np.broadcast_to(np.asarray(half_widths, dtype=float), (dim,)).copy()
    if np.any(hw <= 0):
        raise InvalidInput("half_widths must be positive")
    # tolerate rounding so that e.g. 2.5/0.05 counts the endpoint
    kmax = np.floor(hw / eps + 1e-9).astype(int)
    shape = tuple(int(2 * k + 1) for k in kmax)
    n = math.prod(shape)
    if n > max_sites:
        raise TooLarge(f"{n} sites exceeds max_sites={max_sites}")
    return LatticeBox(dim, float(eps), center, hw, shape, -kmax)


def box_for_region(region, eps: float, max_sites: int = MAX_SITES) -> LatticeBox:
    """Lattice box covering a landscape ``Region`` (centered at its midpoint)."""
    c = 0.5 * (region.lo + region.hi)
    return build_box(region.dim, eps, c, 0.5 * (region.hi - region.lo), max_sites)


@dataclass
class LatticeVector:
    box: LatticeBox
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.box.n,):
            raise ShapeMismatch(f"expected {self.box.n} values, got {self.values.shape}")

    def inner(self, other: "LatticeVector") -> float:
        if not self.box.same_as(other.box):
            raise ShapeMismatch("vectors live on different boxes")
        return self.box.weight * float(np.dot(self.values, other.values))

    def norm(self) -> float:
        return math.sqrt(self.box.weight) * float(np.linalg.norm(self.values))

    def __add__(self, o):
        return LatticeVector(self.box, self.values + o.values)

    def __sub__(self, o):
        return LatticeVector(self.box, self.values - o.values)

    def __mul__(self, a: float):
        return LatticeVector(self.box, a * self.values)

    __rmul__ = __mul__


def inner(u: LatticeVector, v: LatticeVector) -> float:
    return u.inner(v)


# ---------------------------------------------------------------------------
# exponentials with clamping


def _clamped_exp(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if np.any(np.abs(z) > EXP_CLAMP):
        warnings.warn(
            f"exponent magnitude {float(np.max(np.abs(z))):.1f} clamped to {EXP_CLAMP}",
            OverflowWarning,
            stacklevel=3,
        )
        z = np.clip(z, -EXP_CLAMP, EXP_CLAMP)
    return np.exp(z)


def _direction_weights(p: PotentialSpec, x: np.ndarray, eps: float) -> np.ndarray:
    """``exp(-(f(x+eps v) - f(x)) / (2 eps))`` for each of the 2d directions.

    Returns shape ``(2d, n)``, directions ordered as ``LatticeBox.neighbor_set``.
    """
    d = x.shape[-1]
    fx = p.eval(x)
    eye = np.eye(d)
    out = []
    for v in np.concatenate([eye, -eye]):
        out.append(-(p.eval(x + eps * v) - fx) / (2 * eps))
    return _clamped_exp(np.array(out))


def potential_term(p: PotentialSpec, x, eps: float):
    """``V_eps(x)``; vectorized over leading axes of ``x`` (shape ``(..., d)``)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    w = _direction_weights(p, x, eps)
    return np.sum(w - 1.0, axis=0)


# ---------------------------------------------------------------------------
# operators


@dataclass(frozen=True)
class SparseOperator:
    """Symmetric (Witten) or reversible (generator) nearest-neighbour operator.

    Each undirected edge ``(i, j)`` with ``i < j`` is stored once with both
    directed entries ``A[i, j] = w_ij`` and ``A[j, i] = w_ji``; for the Witten
    kind ``w_ij`` and ``w_ji`` are the same float.
    """

    box: LatticeBox
    kind: str
    diagonal: np.ndarray
    edge_i: np.ndarray
    edge_j: np.ndarray
    w_ij: np.ndarray
    w_ji: np.ndarray
    boundary: str = "dirichlet"
    meta: dict = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return self.box.eps

    @property
    def n(self) -> int:
        return self.box.n

    def to_scipy(self, fmt: str = "csr") -> sp.spmatrix:
        n = self.n
        rows = np.concatenate([np.arange(n), self.edge_i, self.edge_j])
        cols = np.concatenate([np.arange(n), self.edge_j, self.edge_i])
        vals = np.concatenate([self.diagonal, self.w_ij, self.w_ji])
        return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).asformat(fmt)

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def norm1(self) -> float:
        return float(abs(self.to_scipy()).sum(axis=0).max())

    def dump(self) -> str:
        """Coordinate list ``i j value`` sorted by ``(i, j)``, 17 significant digits."""
        A = self.to_scipy("coo")
        order = np.lexsort((A.col, A.row))
        lines = [f"{A.row[t]} {A.col[t]} {A.data[t]:.17g}" for t in order]
        return "\n".join(lines) + "\n"


def _edges(box: LatticeBox) -> tuple[list[np.ndarray], list[np.ndarray], list[int]]:
    """Undirected interior edges per positive axis direction."""
    idx = np.arange(box.n).reshape(box.shape)
    I, J, axes = [], [], []
    for ax in range(box.dim):
        lo = [slice(None)] * box.dim
        hi = [slice(None)] * box.dim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        I.append(idx[tuple(lo)].ravel())
        J.append(idx[tuple(hi)].ravel())
        axes.append(ax)
    return I, J, axes


def assemble_witten(p: PotentialSpec, box: LatticeBox) -> SparseOperator:
    x = box.points
    V = potential_term(p, x, box.eps)
    I, J, _ = _edges(box)
    ei = np.concatenate(I)
    ej = np.concatenate(J)
    w = -np.ones(ei.size)
    return SparseOperator(box, "witten", 2 * box.dim + V, ei, ej, w, w, meta={"potential": p.name})


def assemble_schrodinger(U: Callable[[np.ndarray], np.ndarray], box: LatticeBox, name: str = "U") -> SparseOperator:
    """``-eps^2 Delta_eps + U`` with the same truncation as ``assemble_witten``."""
    I, J, _ = _edges(box)
    ei = np.concatenate(I)
    ej = np.concatenate(J)
    w = -np.ones(ei.size)
    diag = 2 * box.dim + np.asarray(U(box.points), dtype=float)
    return SparseOperator(box, "schrodinger", diag, ei, ej, w, w, meta={"potential": name})


def assemble_neg_generator(p: PotentialSpec, box: LatticeBox) -> SparseOperator:
    """``-eps L_eps``: off-diagonal ``-eps r(x, y)``, diagonal ``eps sum_v r(x, x+eps v)``.

    The diagonal counts all 2d directions (also those leaving the box) to
    match the Witten truncation under the ground-state transform.
    """
    eps = box.eps
    x = box.points
    fx = p.eval(x)
    W = _direction_weights(p, x, eps)
    I, J, _ = _edges(box)
    ei = np.concatenate(I)
    ej = np.concatenate(J)
    df = fx[ej] - fx[ei]
    w_ij = -_clamped_exp(-df / (2 * eps))
    w_ji = -_clamped_exp(df / (2 * eps))
    return SparseOperator(box, "neg_generator", W.sum(axis=0), ei, ej, w_ij, w_ji,
                          meta={"potential": p.name})


def rates(p: PotentialSpec, x, y, eps: float):
    """Jump rates ``r(x, y) = exp(-(f(y) - f(x)) / (2 eps)) / eps``."""
    return _clamped_exp(-(p.eval(y) - p.eval(x)) / (2 * eps)) / eps


def symmetrize(op: SparseOperator) -> SparseOperator:
    """Similarity transform of a reversible operator to symmetric form.

    Each edge gets ``-sqrt(w_ij w_ji)`` (the geometric mean); the diagonal
    is unchanged.
    """
    g = -np.sqrt(op.w_ij * op.w_ji)
    return SparseOperator(op.box, op.kind + "_sym", op.diagonal, op.edge_i, op.edge_j, g, g,
                          op.boundary, dict(op.meta))


def gst_weight(p: PotentialSpec, box: LatticeBox, warn: bool = True) -> np.ndarray:
    """``exp(-f / (2 eps))`` on the sites, with underflow to 0 flagged."""
    z = -p.eval(box.points) / (2 * box.eps)
    out = np.exp(np.maximum(z, -EXP_CLAMP - 50))
    if warn and np.any(out == 0.0):
        warnings.warn(f"{int(np.sum(out == 0))} ground-state weights underflowed to 0",
                      UnderflowWarning, stacklevel=2)
    if np.any(z > EXP_CLAMP):
        warnings.warn("ground-state weight overflow", OverflowWarning, stacklevel=2)
    return out


def ground_state_transform(psi: LatticeVector, p: PotentialSpec, direction: str = "forward") -> LatticeVector:
    """Multiply (``forward``) or divide (``inverse``) by ``exp(-f / (2 eps))``.

    Where the weight underflows the inverse is set to 0 and an
    ``UnderflowWarning`` is emitted.
    """
    w = gst_weight(p, psi.box)
    if direction == "forward":
        return LatticeVector(psi.box, w * psi.values)
    if direction == "inverse":
        out = np.zeros_like(psi.values)
        ok = w > 0
        out[ok] = psi.values[ok] / w[ok]
        return LatticeVector(psi.box, out)
    raise InvalidInput(f"direction must be 'forward' or 'inverse', got {direction!r}")


def weighted_gradient_form(psi: LatticeVector, p: PotentialSpec) -> float:
    """``<H psi, psi>`` evaluated as a sum of squares over lattice edges.

    Each undirected edge ``(x, y)`` contributes
    ``(exp((f(y)-f(x))/4eps) psi(y) - exp((f(x)-f(y))/4eps) psi(x))^2``,
    which is ``eps^2 exp(-(f(x)+f(y))/2eps) |grad_eps(exp(f/2eps) psi)|^2``.
    Edges leaving the box are included with the outside value 0, which makes
    the identity exact for the truncated operator. Because no cancellation
    takes place, this is far more accurate than a matvec when the form is
    exponentially small.
    """
    box = psi.box
    eps = box.eps
    x = box.points
    fx = p.eval(x)
    u = psi.values
    I, J, _ = _edges(box)
    ei = np.concatenate(I)
    ej = np.concatenate(J)
    df = fx[ej] - fx[ei]
    a = _clamped_exp(df / (4 * eps))
    terms = (a * u[ej] - u[ei] / a) ** 2
    total = math.fsum(terms)
    # truncated edges: outside value is 0, leaving exp(-(f(y)-f(x))/4eps) psi(x)
    for v in box.neighbor_set:
        k = np.array(np.unravel_index(np.arange(box.n), box.shape)).T + v
        outside = np.any((k < 0) | (k >= np.array(box.shape)), axis=1)
        if not np.any(outside):
            continue
        xo = x[outside]
        dfo = p.eval(xo + eps * v) - fx[outside]
        total += math.fsum((u[outside] * _clamped_exp(-dfo / (4 * eps))) ** 2)
    return box.weight * total


def matvec(op: SparseOperator, v: LatticeVector) -> LatticeVector:
    if not op.box.same_as(v.box):
        raise ShapeMismatch("operator and vector live on different boxes")
    u = v.values
    out = op.diagonal * u
    np.add.at(out, op.edge_i, op.w_ij * u[op.edge_j])
    np.add.at(out, op.edge_j, op.w_ji * u[op.edge_i])
    return LatticeVector(v.box, out)


def quadratic_form(op: SparseOperator, v: LatticeVector) -> float:
    return matvec(op, v).inner(v)


# ---------------------------------------------------------------------------
# IMS localization


def smooth_step(t):
    """``C^infinity`` step: 0 for ``t <= 0``, 1 for ``t >= 1``, built from ``exp(-1/t)``."""
    t = np.asarray(t, dtype=float)

    def g(s):
        s = np.clip(s, 0.0, None)
        with np.errstate(divide="ignore"):
            return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)

    a, b = g(t), g(1.0 - t)
    return a / (a + b)


@dataclass
class QuadraticPartition:
    """Smooth functions ``chi_j`` with ``sum_j chi_j^2 = 1``.

    ``hess_sup`` holds an upper bound of ``sup |Hess chi_j|`` for each piece.
    """

    chis: Sequence[Callable[[np.ndarray], np.ndarray]]
    hess_sup: Sequence[float]

    def values(self, x: np.ndarray) -> np.ndarray:
        return np.array([c(x) for c in self.chis])

    def check(self, x: np.ndarray, tol: float = 1e-12) -> float:
        """Maximum of ``|sum_j chi_j^2 - 1|`` over the given points."""
        dev = float(np.max(np.abs(np.sum(self.values(x) ** 2, axis=0) - 1.0)))
        if dev > tol:
            raise InvalidInput(f"partition violates sum chi^2 = 1 by {dev:.3e}")
        return dev

    @classmethod
    def trivial(cls) -> "QuadraticPartition":
        return cls([lambda x: np.ones(np.asarray(x).shape[:-1])], [0.0])

    @classmethod
    def two_piece_1d(cls, a: float, b: float, n_sup: int = 20001) -> "QuadraticPartition":
        """``chi_0 = cos(pi/2 s)``, ``chi_1 = sin(pi/2 s)`` with ``s`` a smooth step on ``[a, b]``."""
        if b <= a:
            raise InvalidInput("need a < b")

        def s(x):
            return smooth_step((np.asarray(x)[..., 0] - a) / (b - a))

        c0 = lambda x: np.cos(0.5 * np.pi * s(x))
        c1 = lambda x: np.sin(0.5 * np.pi * s(x))
        t = np.linspace(a - 0.01 * (b - a), b + 0.01 * (b - a), n_sup)[:, None]
        h = t[1, 0] - t[0, 0]
        sups = []
        for c in (c0, c1):
            y = c(t)
            sups.append(float(np.max(np.abs(np.diff(y, 2)))) / h**2 * 1.05)
        return cls([c0, c1], sups)


def laplacian_matvec(box: LatticeBox, u: np.ndarray) -> np.ndarray:
    """Unscaled ``Delta_eps u = eps^-2 sum_v (u(x+eps v) - u(x))`` with zero exterior."""
    U = u.reshape(box.shape)
    out = -2 * box.dim * U
    for ax in range(box.dim):
        pad = [(0, 0)] * box.dim
        pad[ax] = (1, 1)
        P = np.pad(U, pad)
        sl_p = [slice(None)] * box.dim
        sl_m = [slice(None)] * box.dim
        sl_p[ax] = slice(2, None)
        sl_m[ax] = slice(0, -2)
        out = out + P[tuple(sl_p)] + P[tuple(sl_m)]
    return out.ravel() / box.eps**2


def ims_defect(partition: QuadraticPartition, psi: LatticeVector) -> float:
    """``|| Delta_eps psi - sum_j chi_j Delta_eps (chi_j psi) ||``."""
    box = psi.box
    x = box.points
    chi = partition.values(x)
    u = psi.values
    lhs = laplacian_matvec(box, u)
    rhs = np.zeros_like(u)
    for c in chi:
        rhs += c * laplacian_matvec(box, c * u)
    return LatticeVector(box, lhs - rhs).norm()


IMS_CONSTANT_PER_DIM = 1.0


def ims_bound(partition: QuadraticPartition, psi: LatticeVector) -> float:
    """Bound ``C sup|Hess chi| ||psi||`` with ``C = d * (number of pieces)``."""
    C = psi.box.dim * len(partition.chis) * IMS_CONSTANT_PER_DIM
    return C * max(partition.hess_sup) * psi.norm()
