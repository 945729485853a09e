"""Low-lying spectra of the lattice operators and the checks built on them.

The default solver is ARPACK in shift-invert mode around ``sigma = 0`` with a
sparse LU factorization. It resolves exponentially small eigenvalues to full
relative accuracy even when ``||H||`` is huge, which a plain Lanczos run or a
dense solve cannot do. A dense LAPACK solve is available as an oracle.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DegenerateFit,
    InvalidInput,
    NoConvergence,
    NotSeparated,
    QualityWarning,
    ShapeMismatch,
)
from .landscape import CriticalPoint
from .lattice import (
    LatticeBox,
    LatticeVector,
    SparseOperator,
    assemble_schrodinger,
    matvec,
)

DEFAULT_TOL = 1e-10
DEFAULT_SEED = 20240101
DENSE_LIMIT = 500

__all__ = [
    "matvec",
    "SpectrumResult",
    "GapReport",
    "lowest_eigenpairs",
    "dense_eigenpairs",
    "count_small_eigenvalues",
    "small_threshold",
    "harmonic_reference",
    "exponential_rate_fit",
]


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    residuals: np.ndarray
    eigenvectors: list[LatticeVector]
    iterations: dict
    eps: float

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "residuals": [float(r) for r in self.residuals],
            "iterations": self.iterations,
        }


def _residuals(A: sp.spmatrix, vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    R = A @ vecs - vecs * vals
    return np.linalg.norm(R, axis=0) / np.linalg.norm(vecs, axis=0)


def _pack(op: SparseOperator, vals, vecs, info) -> SpectrumResult:
    order = np.argsort(vals)
    vals = np.asarray(vals)[order]
    vecs = np.asarray(vecs)[:, order]
    # unit norm in the eps^d-weighted inner product, sign fixed by largest entry
    vecs = vecs / (np.linalg.norm(vecs, axis=0) * math.sqrt(op.box.weight))
    for j in range(vecs.shape[1]):
        if vecs[np.argmax(np.abs(vecs[:, j])), j] < 0:
            vecs[:, j] = -vecs[:, j]
    A = op.to_scipy()
    res = _residuals(A, vals, vecs)
    return SpectrumResult(vals, res, [LatticeVector(op.box, vecs[:, j]) for j in range(len(vals))],
                          info, op.eps)


def dense_eigenpairs(op: SparseOperator, k: int | None = None) -> SpectrumResult:
    """Reference LAPACK solve; only sensible for moderate ``n``."""
    A = op.to_dense()
    n = A.shape[0]
    k = n if k is None else k
    # the full solve is robust when ||A|| is huge; subset drivers are not
    vals, vecs = np.linalg.eigh(A)
    vals, vecs = vals[:k], vecs[:, :k]
    return _pack(op, vals, vecs, {"method": "dense"})


def lowest_eigenpairs(
    op: SparseOperator,
    k: int,
    tol: float = DEFAULT_TOL,
    deflate: Sequence[LatticeVector] | None = None,
    max_iter: int | None = None,
    seed: int = DEFAULT_SEED,
) -> SpectrumResult:
    """The ``k`` smallest eigenpairs, optionally on the complement of ``deflate``.

    Shift-invert Lanczos (ARPACK) with ``sigma = 0``; if the operator is
    singular to working precision the shift moves slightly below the
    spectrum. Every pair is checked against ``||A psi - lambda psi|| <=
    tol * max(1, |lambda|)``; failures raise ``NoConvergence`` carrying the
    partial result.
    """
    n = op.n
    if not 1 <= k <= n:
        raise InvalidInput(f"k={k} must lie in [1, {n}]")
    if tol <= 0:
        raise InvalidInput("tol must be positive")
    A = op.to_scipy("csc")
    rng = np.random.default_rng(seed)
    Q = None
    if deflate:
        for d in deflate:
            if not d.box.same_as(op.box):
                raise ShapeMismatch("deflation vector lives on another box")
        Q, _ = np.linalg.qr(np.stack([d.values for d in deflate], axis=1))
    n_eff = n - (0 if Q is None else Q.shape[1])
    if k > n_eff:
        raise InvalidInput("k exceeds the dimension of the deflated space")

    if n <= 3 * k + 10 or k >= n - 1:
        # too small for ARPACK; dense is exact here
        Ad = A.toarray()
        if Q is not None:
            P = np.eye(n) - Q @ Q.T
            Ad = P @ Ad @ P
            vals, vecs = np.linalg.eigh(Ad)
            keep = np.abs(Q.T @ vecs).max(axis=0) < 0.5
            vals, vecs = vals[keep][:k], vecs[:, keep][:, :k]
        else:
            vals, vecs = np.linalg.eigh(Ad)
            b = min(n, k + 5)
            vals, vecs = _refine_inverse(Ad, vals[:b], vecs[:, :b])
            vals, vecs = _polish_rqi(Ad, vals[:k], vecs[:, :k], tol)
        out = _pack(op, vals, vecs, {"method": "dense-small"})
        return _check(out, tol)

    diag_scale = float(np.max(np.abs(op.diagonal)))
    shifts = [0.0, -1e-8 * max(1.0, diag_scale) ** 0.5, -1e-3]
    last_err = None
    for sigma in shifts:
        try:
            lu = spla.splu((A - sigma * sp.identity(n, format="csc")).tocsc())
        except RuntimeError as exc:  # exactly singular
            last_err = exc
            continue
        if Q is None:
            solve = lu.solve
        else:
            def solve(x, lu=lu):
                x = x - Q @ (Q.T @ x)
                y = lu.solve(x)
                return y - Q @ (Q.T @ y)
        OPinv = spla.LinearOperator((n, n), matvec=solve, dtype=float)
        v0 = rng.standard_normal(n)
        if Q is not None:
            v0 -= Q @ (Q.T @ v0)
        try:
            vals, vecs = spla.eigsh(
                A, k=k, sigma=sigma, which="LM", OPinv=OPinv, v0=v0, tol=0,
                maxiter=max_iter or max(1000, 20 * n),
            )
        except spla.ArpackNoConvergence as exc:
            last_err = exc
            continue
        if not np.all(np.isfinite(vals)):
            last_err = RuntimeError("non-finite eigenvalues")
            continue
        out = _pack(op, vals, vecs, {"method": "arpack-shift-invert", "sigma": sigma})
        try:
            return _check(out, tol)
        except NoConvergence as exc:
            last_err = exc
            continue
    if isinstance(last_err, NoConvergence):
        raise last_err
    raise NoConvergence(f"shift-invert failed: {last_err}")


def _refine_inverse(A: np.ndarray, vals: np.ndarray, vecs: np.ndarray, sweeps: int = 4):
    """Inverse subspace iteration with Rayleigh-Ritz on ``(A - sigma)^{-1}``.

    A dense solve only resolves eigenvalues to about ``u ||A||``; working
    with the inverse (as shift-invert Lanczos does) restores full relative
    accuracy for the small ones.
    """
    n = A.shape[0]
    if vecs.shape[1] >= n:
        return vals, vecs
    vals0 = np.asarray(vals, dtype=float)
    sigma = -1e-13 * max(1.0, float(np.max(np.abs(np.diag(A)))))
    lu = sla.lu_factor(A - sigma * np.eye(n))
    V = vecs
    for _ in range(sweeps):
        Qm, _ = np.linalg.qr(sla.lu_solve(lu, V))
        T = Qm.T @ sla.lu_solve(lu, Qm)
        mu, W = np.linalg.eigh(0.5 * (T + T.T))
        order = np.argsort(-mu)
        mu, W = mu[order], W[:, order]
        vals = sigma + 1.0 / mu
        V = Qm @ W
    V = sla.lu_solve(lu, V)
    V = V / np.linalg.norm(V, axis=0)
    # the tail of the block may converge slowly; keep the better of the two per column
    r_old = np.linalg.norm(A @ vecs - vecs * vals0, axis=0) / np.maximum(1.0, np.abs(vals0))
    r_new = np.linalg.norm(A @ V - V * vals, axis=0) / np.maximum(1.0, np.abs(vals))
    keep = r_old < r_new
    vals = np.where(keep, vals0, vals)
    V[:, keep] = vecs[:, keep]
    order = np.argsort(vals)
    return vals[order], V[:, order]


def _polish_rqi(A: np.ndarray, vals: np.ndarray, vecs: np.ndarray, tol: float,
                max_steps: int = 20):
    """Rayleigh quotient iteration on pairs whose residual still exceeds ``tol``.

    On graded matrices (huge boundary diagonal) a dense solve leaves the
    upper pairs of the block with residuals near ``u ||A||``; a few shifted
    solves, orthogonalised against the already accurate lower pairs, fix them.
    """
    vals = np.array(vals, dtype=float)
    V = np.array(vecs, dtype=float)
    n = A.shape[0]
    for i in range(V.shape[1]):
        v = V[:, i]
        lam = vals[i]
        for _ in range(max_steps):
            if np.linalg.norm(A @ v - lam * v) <= 0.1 * tol * max(1.0, abs(lam)):
                break
            shifted = A - lam * np.eye(n)
            try:
                x = np.linalg.solve(shifted, v)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(x)):
                break
            lower = V[:, :i]
            for _ in range(2):
                x = x - lower @ (lower.T @ x)
            x /= np.linalg.norm(x)
            v, lam = x, float(x @ A @ x)
        V[:, i], vals[i] = v, lam
    order = np.argsort(vals)
    return vals[order], V[:, order]


def _check(res: SpectrumResult, tol: float) -> SpectrumResult:
    bad = res.residuals > tol * np.maximum(1.0, np.abs(res.eigenvalues))
    if np.any(bad):
        raise NoConvergence(
            f"{int(bad.sum())} eigenpairs above residual tolerance {tol:g} "
            f"(max {float(res.residuals.max()):.3e})",
            partial=res,
        )
    return res


# ---------------------------------------------------------------------------
# counting and gap


@dataclass
class GapReport:
    n_small: int
    threshold: float
    lambda_small: float
    lambda_next: float
    separated: bool
    ratio_to_prediction: float | None = None
    eigenvalues: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_small": self.n_small,
            "threshold": self.threshold,
            "lambda_small": self.lambda_small,
            "lambda_next": self.lambda_next,
            "separated": self.separated,
            "ratio_to_prediction": self.ratio_to_prediction,
        }


def harmonic_ground_energy(hess: np.ndarray) -> float:
    """``sum_j sqrt(kappa_j)`` with ``kappa_j`` the eigenvalues of ``Hess/2``."""
    w = np.linalg.eigvalsh(0.5 * np.asarray(hess, dtype=float))
    if np.any(w <= 0):
        raise InvalidInput("Hessian at a minimum must be positive definite")
    return float(np.sum(np.sqrt(w)))


def small_threshold(minima: Sequence[CriticalPoint], eps: float) -> float:
    """``eps * (1/2) * min_m sum_j sqrt(kappa_j(m))``, kappa_j eigenvalues of Hess f(m)/2."""
    if not minima:
        raise InvalidInput("need at least one minimum")
    e0 = min(harmonic_ground_energy(np.diag(m.hessian_eigenvalues)) for m in minima)
    return 0.5 * eps * e0


def count_small_eigenvalues(
    spec: SpectrumResult,
    threshold: float,
    prediction: float | None = None,
    ambiguity: float = 0.1,
) -> GapReport:
    """Count eigenvalues ``<= threshold``; refuse an ambiguous split.

    ``prediction`` (the Eyring-Kramers value of the largest small
    eigenvalue) fills ``ratio_to_prediction`` when given.
    """
    ev = np.asarray(spec.eigenvalues)
    near = np.abs(ev - threshold) <= ambiguity * threshold
    if np.any(near):
        raise NotSeparated(
            f"eigenvalue(s) {ev[near].tolist()} within {ambiguity:.0%} of threshold {threshold:g}"
        )
    n_small = int(np.sum(ev <= threshold))
    if n_small >= len(ev):
        raise InvalidInput("spectrum has no eigenvalue above the threshold; request more pairs")
    lam_small = float(ev[n_small - 1]) if n_small else float("nan")
    lam_next = float(ev[n_small])
    ratio = None
    if prediction is not None and n_small >= 2:
        ratio = lam_small / prediction
    return GapReport(n_small, threshold, lam_small, lam_next,
                     bool(n_small == 0 or lam_small < threshold < lam_next), ratio, ev.tolist())


def spectrum_json(spec: SpectrumResult, gap: GapReport | None = None) -> str:
    d = {
        "eps": spec.eps,
        "eigenvalues": [float(v) for v in spec.eigenvalues],
        "residuals": [float(r) for r in spec.residuals],
    }
    if gap is not None:
        d.update(n_small=gap.n_small, threshold=gap.threshold,
                 ratio_to_prediction=gap.ratio_to_prediction)
    return json.dumps(d, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# harmonic oscillator reference


@dataclass
class HarmonicReference:
    lambda0_pred: float
    lambda1_pred: float
    lambda0_num: float
    lambda1_num: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def harmonic_reference(M, eps: float, box: LatticeBox, center=None) -> HarmonicReference:
    """Compare ``-eps^2 Delta_eps + <x - c, M (x - c)>`` with its harmonic values.

    Predictions: ``lambda0 = sum sqrt(kappa)``, ``lambda1 = lambda0 + 2 min sqrt(kappa)``
    (``kappa`` the eigenvalues of ``M``); numerical values are the two
    lowest eigenvalues divided by ``eps``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    kap = np.linalg.eigvalsh(M)
    if np.any(kap <= 0):
        raise InvalidInput("M must be positive definite")
    if box.eps != eps:
        raise InvalidInput("box.eps differs from eps")
    c = box.center if center is None else np.asarray(center, dtype=float)

    def U(x):
        y = x - c
        return np.einsum("ni,ij,nj->n", y, M, y)

    op = assemble_schrodinger(U, box, "harmonic")
    res = lowest_eigenpairs(op, 2)
    s = np.sqrt(kap)
    return HarmonicReference(float(s.sum()), float(s.sum() + 2 * s.min()),
                             float(res.eigenvalues[0] / eps), float(res.eigenvalues[1] / eps))


# ---------------------------------------------------------------------------
# exponential fit


@dataclass
class RateFit:
    E_fit: float
    A_fit: float
    residuals: list[float]

    def to_dict(self) -> dict:
        return {"E_fit": self.E_fit, "A_fit": self.A_fit, "residuals": self.residuals}


def exponential_rate_fit(sweep: Sequence[tuple[float, float]]) -> RateFit:
    """Least squares for ``ln lambda = ln eps + ln A - E / eps``."""
    if len(sweep) < 3:
        raise DegenerateFit("need at least 3 sweep points")
    eps = np.array([s[0] for s in sweep], dtype=float)
    lam = np.array([s[1] for s in sweep], dtype=float)
    if np.any(eps <= 0) or np.any(lam <= 0):
        raise InvalidInput("eps and lambda must be positive")
    inv = 1.0 / eps
    if (inv.max() - inv.min()) < 0.2 * inv.min():
        raise DegenerateFit("1/eps spread below 20%; E and A are not identifiable")
    y = np.log(lam) - np.log(eps)
    X = np.stack([np.ones_like(inv), -inv], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    if np.max(np.abs(r)) > 0.5:
        warnings.warn("exponential fit residuals exceed 0.5 in log scale", QualityWarning,
                      stacklevel=2)
    return RateFit(float(coef[1]), float(math.exp(coef[0])), r.tolist())


__all__ += ["HarmonicReference", "RateFit", "spectrum_json", "harmonic_ground_energy"]
