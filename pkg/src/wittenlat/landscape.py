"""Energy landscapes: potentials, critical points, barrier heights and
Eyring-Kramers constants.

All evaluators are vectorized over a leading batch shape: a point array of
shape ``(..., d)`` gives ``f`` of shape ``(...)``, ``grad`` of shape
``(..., d)`` and ``hess`` of shape ``(..., d, d)``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    BoxTooSmall,
    InvalidInput,
    NondegeneracyViolation,
    NoRelevantSaddle,
    NotSeparated,
)

log = logging.getLogger(__name__)

DEGENERACY_REL_TOL = 1e-8
VALUE_TIE_TOL = 1e-9


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class PotentialSpec:
    name: str
    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    provenance: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.eval(x)

    def shifted(self, c: float) -> "PotentialSpec":
        """Return ``f + c``; gradients and Hessians are unchanged."""
        ev = self.eval
        return PotentialSpec(
            name=f"{self.name}+{c:g}",
            dim=self.dim,
            eval=lambda x: ev(x) + c,
            grad=self.grad,
            hess=self.hess,
            provenance=self.provenance,
            params={**self.params, "shift": c},
        )


def _parse_multi_index(key, dim: int) -> tuple[int, ...]:
    if isinstance(key, str):
        parts = [p for p in key.replace(" ", "").split(",") if p != ""]
        alpha = tuple(int(p) for p in parts)
    else:
        alpha = tuple(int(a) for a in key)
    if len(alpha) != dim or any(a < 0 for a in alpha):
        raise InvalidInput(f"bad multi-index {key!r} for dim={dim}")
    return alpha


def polynomial_potential(coeffs, dim: int, name: str = "polynomial") -> PotentialSpec:
    """Build a potential from a ``multi-index -> coefficient`` table.

    Keys are exponent tuples or comma-separated strings (``"2,0"``); a list
    of ``[multi_index, coefficient]`` pairs is accepted as well.
    """
    items = coeffs.items() if isinstance(coeffs, dict) else coeffs
    table: dict[tuple[int, ...], float] = {}
    for key, c in items:
        alpha = _parse_multi_index(key, dim)
        table[alpha] = table.get(alpha, 0.0) + float(c)
    terms = [(np.array(a, dtype=int), c) for a, c in sorted(table.items()) if c != 0.0]
    max_deg = max((int(a.max()) for a, _ in terms), default=0)

    def powers(x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != dim:
            raise InvalidInput(f"expected trailing dimension {dim}, got {x.shape}")
        # pw[k] = x**k, stacked on a new leading axis
        pw = np.empty((max_deg + 1,) + x.shape)
        pw[0] = 1.0
        for k in range(1, max_deg + 1):
            pw[k] = pw[k - 1] * x
        return x, pw

    def mono(pw, alpha):
        out = 1.0
        for j, a in enumerate(alpha):
            if a:
                out = out * pw[a][..., j]
        return out

    def f(x):
        x, pw = powers(x)
        out = np.zeros(x.shape[:-1])
        for alpha, c in terms:
            out = out + c * mono(pw, alpha)
        return out

    def grad(x):
        x, pw = powers(x)
        out = np.zeros(x.shape)
        for alpha, c in terms:
            for j in range(dim):
                if alpha[j] == 0:
                    continue
                beta = alpha.copy()
                beta[j] -= 1
                out[..., j] += c * alpha[j] * mono(pw, beta)
        return out

    def hess(x):
        x, pw = powers(x)
        out = np.zeros(x.shape + (dim,))
        for alpha, c in terms:
            for i in range(dim):
                if alpha[i] == 0:
                    continue
                for j in range(i, dim):
                    beta = alpha.copy()
                    beta[i] -= 1
                    if beta[j] == 0:
                        continue
                    fac = alpha[i] * beta[j]
                    beta[j] -= 1
                    val = c * fac * mono(pw, beta)
                    out[..., i, j] += val
                    if i != j:
                        out[..., j, i] += val
        return out

    return PotentialSpec(
        name=name,
        dim=dim,
        eval=f,
        grad=grad,
        hess=hess,
        provenance="polynomial",
        params={"coeffs": {",".join(map(str, a)): c for a, c in sorted(table.items())}},
    )


def _registry() -> dict:
    text = resources.files("wittenlat").joinpath("data/potentials.json").read_text()
    return json.loads(text)["potentials"]


BUILTINS = ("double_well_1d", "single_well_1d", "triple_well_1d",
            "double_well_aniso_2d", "double_well_tilted_1d")


def builtin(name: str, **params) -> PotentialSpec:
    """Look up a registered potential.

    ``double_well_aniso_2d`` takes ``c`` (default 2): ``(x^2-1)^2 + c y^2``.
    ``double_well_tilted_1d`` takes ``b`` (default 0.15): ``(x^2-1)^2 + b x``.
    """
    if name == "double_well_aniso_2d":
        c = float(params.get("c", 2.0))
        p = polynomial_potential({"4,0": 1.0, "2,0": -2.0, "0,0": 1.0, "0,2": c}, 2, name)
    elif name == "double_well_tilted_1d":
        b = float(params.get("b", 0.15))
        p = polynomial_potential({"4": 1.0, "2": -2.0, "0": 1.0, "1": b}, 1, name)
    else:
        reg = _registry()
        if name not in reg:
            raise InvalidInput(f"unknown builtin potential {name!r}; known: {sorted(BUILTINS)}")
        entry = reg[name]
        p = polynomial_potential(entry["coeffs"], entry["dim"], name)
    return PotentialSpec(p.name, p.dim, p.eval, p.grad, p.hess, "builtin", dict(params))


def load_potential(spec) -> PotentialSpec:
    """Load a potential from a JSON file path or an already-parsed dict.

    Format: ``{"name", "dim", "kind": "builtin"|"polynomial", "coeffs", "params"}``.
    """
    if isinstance(spec, (str, Path)):
        spec = json.loads(Path(spec).read_text())
    kind = spec.get("kind", "builtin")
    if kind == "builtin":
        p = builtin(spec["name"], **spec.get("params", {}))
        if "dim" in spec and int(spec["dim"]) != p.dim:
            raise InvalidInput(f"dim mismatch for builtin {spec['name']!r}")
        return p
    if kind == "polynomial":
        return polynomial_potential(spec["coeffs"], int(spec["dim"]), spec.get("name", "polynomial"))
    raise InvalidInput(f"unknown potential kind {kind!r}")


def check_derivatives(p: PotentialSpec, points: np.ndarray, h: float = 1e-5) -> tuple[float, float]:
    """Worst violation of the central-difference consistency of grad and hess.

    Returns ``(grad_excess, hess_excess)``: the maximum over points and
    components of ``|analytic - fd| / (1 + |analytic|)``. Values ``<= 1e-6``
    mean the evaluators are consistent.
    """
    points = np.atleast_2d(points)
    d = p.dim
    g = p.grad(points)
    H = p.hess(points)
    ge = he = 0.0
    gnorm = np.linalg.norm(g, axis=-1)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        fd = (p.eval(points + e) - p.eval(points - e)) / (2 * h)
        ge = max(ge, float(np.max(np.abs(g[:, j] - fd) / (1 + gnorm))))
        fdg = (p.grad(points + e) - p.grad(points - e)) / (2 * h)
        hn = np.linalg.norm(H[:, :, j], axis=-1)
        he = max(he, float(np.max(np.abs(H[:, :, j] - fdg) / (1 + hn[:, None]))))
    return ge, he


# ---------------------------------------------------------------------------
# regions and critical points


@dataclass(frozen=True)
class Region:
    """Axis-aligned box ``[lo, hi]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InvalidInput(f"invalid region lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def around(cls, center, half_widths) -> "Region":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        w = np.broadcast_to(np.asarray(half_widths, dtype=float), c.shape)
        return cls(c - w, c + w)

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, x, pad: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo - pad) & (x <= self.hi + pad), axis=-1)

    def grid_axes(self, step: float) -> list[np.ndarray]:
        axes = []
        for a, b in zip(self.lo, self.hi):
            n = int(math.floor((b - a) / step + 1e-9))
            axes.append(a + step * np.arange(n + 1))
        return axes


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    value: float
    hessian_eigenvalues: np.ndarray
    index: int

    @property
    def kind(self) -> str:
        return "minimum" if self.index == 0 else f"saddle{self.index}"

    @property
    def is_minimum(self) -> bool:
        return self.index == 0

    def to_dict(self) -> dict:
        return {
            "location": self.location.tolist(),
            "value": self.value,
            "hessian_eigenvalues": self.hessian_eigenvalues.tolist(),
            "index": self.index,
            "kind": self.kind,
        }


def _hessian_spectrum(p: PotentialSpec, z: np.ndarray, degeneracy_rel: float):
    H = np.asarray(p.hess(z), dtype=float)
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    scale = float(np.max(np.abs(w)))
    if scale == 0.0 or np.min(np.abs(w)) < degeneracy_rel * scale:
        raise NondegeneracyViolation(
            f"critical point at {z.tolist()} has Hessian eigenvalues {w.tolist()}"
        )
    return H, w, V


def classify_critical_point(
    p: PotentialSpec,
    z,
    newton_tol: float = 1e-8,
    degeneracy_rel: float = DEGENERACY_REL_TOL,
) -> CriticalPoint:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    g = np.linalg.norm(p.grad(z))
    if g > newton_tol:
        raise InvalidInput(f"|grad f(z)| = {g:.3e} exceeds newton_tol={newton_tol:g}")
    _, w, _ = _hessian_spectrum(p, z, degeneracy_rel)
    return CriticalPoint(
        location=z,
        value=float(p.eval(z)),
        hessian_eigenvalues=w,
        index=int(np.sum(w < 0)),
    )


def find_critical_points(
    p: PotentialSpec,
    box: Region,
    seed_grid_step: float,
    newton_tol: float = 1e-10,
    max_iter: int = 60,
    degeneracy_rel: float = DEGENERACY_REL_TOL,
) -> list[CriticalPoint]:
    """Newton's method on ``grad f = 0`` from every node of a seed grid.

    Seeds that fail to converge or leave the box are dropped (and logged).
    Converged points closer than ``10 * newton_tol`` are merged; the result
    is sorted lexicographically by location.
    """
    if seed_grid_step <= 0 or newton_tol <= 0:
        raise InvalidInput("seed_grid_step and newton_tol must be positive")
    axes = box.grid_axes(seed_grid_step)
    x = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p.dim)
    active = np.ones(len(x), dtype=bool)
    converged = np.zeros(len(x), dtype=bool)
    max_step = 0.25 * float(np.min(box.hi - box.lo))
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        g = p.grad(x[idx])
        done = np.linalg.norm(g, axis=-1) <= newton_tol
        converged[idx[done]] = True
        active[idx[done]] = False
        idx, g = idx[~done], g[~done]
        if idx.size == 0:
            break
        w, V = np.linalg.eigh(p.hess(x[idx]))
        floor = 1e-14 * np.max(np.abs(w), axis=-1, keepdims=True) + 1e-300
        inv = np.where(np.abs(w) > floor, 1.0 / np.where(w == 0, 1.0, w), 0.0)
        coef = np.einsum("nji,nj->ni", V, g) * inv
        step = np.einsum("nij,nj->ni", V, coef)
        sn = np.linalg.norm(step, axis=-1, keepdims=True)
        step = np.where(sn > max_step, step * (max_step / np.maximum(sn, 1e-300)), step)
        x[idx] -= step
        out = ~box.contains(x[idx], pad=seed_grid_step)
        active[idx[out]] = False
    n_fail = int(np.sum(~converged))
    if n_fail:
        log.debug("find_critical_points: %d of %d seeds did not converge", n_fail, len(x))

    pts = x[converged & box.contains(x)]
    if len(pts) == 0:
        return []
    order = np.lexsort(pts.T[::-1])
    pts = pts[order]
    merge_tol = 10 * newton_tol
    reps: list[np.ndarray] = []
    for q in pts:
        if not any(np.linalg.norm(q - r) < merge_tol for r in reps):
            reps.append(q)
    # also merge near-duplicates that lexicographic order separated
    return [classify_critical_point(p, r, newton_tol=max(newton_tol, 1e-300) * 10,
                                    degeneracy_rel=degeneracy_rel) for r in reps]


def minima_of(points: Sequence[CriticalPoint]) -> list[CriticalPoint]:
    return [c for c in points if c.index == 0]


# ---------------------------------------------------------------------------
# sublevel connectivity


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Nearest-neighbour (2d-neighbour) connected components of a boolean grid."""
    return ndimage.label(mask)


@dataclass
class SublevelGrid:
    """``f`` sampled on a regular grid over a region, for connectivity queries."""

    axes: list[np.ndarray]
    values: np.ndarray

    @classmethod
    def sample(cls, p: PotentialSpec, box: Region, step: float) -> "SublevelGrid":
        axes = box.grid_axes(step)
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return cls(axes, p.eval(pts))

    def nearest(self, x) -> tuple[int, ...]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return tuple(int(np.argmin(np.abs(ax - xi))) for ax, xi in zip(self.axes, x))

    def connected(self, level: float, a, b) -> tuple[bool, np.ndarray, int]:
        lab, _ = label_components(self.values <= level)
        la, lb = lab[a], lab[b]
        return bool(la != 0 and la == lb), lab, int(la)

    def touches_boundary(self, labels: np.ndarray, lab: int) -> bool:
        comp = labels == lab
        for ax in range(comp.ndim):
            if comp.take(0, axis=ax).any() or comp.take(-1, axis=ax).any():
                return True
        return False


def disconnecting_height(
    p: PotentialSpec,
    m0,
    m1,
    box: Region,
    grid_step: float = 0.01,
) -> float:
    """Lowest grid level at which the sublevel sets of ``m0`` and ``m1`` merge.

    Binary search over the sorted grid values of ``f`` (equivalent to a
    union-find sweep in increasing ``f``), with 2d-neighbour connectivity.
    """
    grid = SublevelGrid.sample(p, box, grid_step)
    a, b = grid.nearest(m0), grid.nearest(m1)
    if a == b:
        raise InvalidInput("m0 and m1 map to the same grid node")
    vals = np.unique(grid.values)
    lo = int(np.searchsorted(vals, max(grid.values[a], grid.values[b])))
    if grid.connected(vals[lo], a, b)[0]:
        raise NotSeparated("m0 and m1 are connected at the lowest tested level")
    hi = len(vals) - 1
    if not grid.connected(vals[hi], a, b)[0]:
        raise BoxTooSmall("m0 and m1 never connect inside the box")
    # invariant: disconnected at lo, connected at hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if grid.connected(vals[mid], a, b)[0]:
            hi = mid
        else:
            lo = mid
    h_star = float(vals[hi])
    _, lab, la = grid.connected(h_star, a, b)
    if grid.touches_boundary(lab, la):
        raise BoxTooSmall(f"connecting component at h*={h_star:.6g} touches the box boundary")
    return h_star


# ---------------------------------------------------------------------------
# saddles and Eyring-Kramers constants


@dataclass(frozen=True)
class SaddleData:
    critical_point: CriticalPoint
    mu: float
    tau: np.ndarray
    det_abs: float

    @property
    def location(self) -> np.ndarray:
        return self.critical_point.location

    @property
    def value(self) -> float:
        return self.critical_point.value

    def with_orientation(self, sign: float) -> "SaddleData":
        return SaddleData(self.critical_point, self.mu, np.sign(sign) * self.tau, self.det_abs)

    def to_dict(self) -> dict:
        return {
            "location": self.location.tolist(),
            "value": self.value,
            "mu": self.mu,
            "tau": self.tau.tolist(),
            "det_abs": self.det_abs,
        }


def saddle_data(p: PotentialSpec, cp: CriticalPoint) -> SaddleData:
    if cp.index != 1:
        raise InvalidInput(f"saddle_data needs an index-1 point, got index {cp.index}")
    H = np.asarray(p.hess(cp.location), dtype=float)
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    tau = V[:, 0] / np.linalg.norm(V[:, 0])
    # deterministic sign: first nonzero component positive
    k = int(np.argmax(np.abs(tau) > 1e-12))
    if tau[k] < 0:
        tau = -tau
    return SaddleData(cp, float(w[0]), tau, float(abs(np.prod(w))))


def _reconnects(p: PotentialSpec, s: SaddleData, radius: float) -> bool:
    """Local check that ``s`` joins two sublevel lobes.

    In a ball around ``s`` the set ``{f < f(s) - delta}`` must split into two
    pieces that become connected in ``{f < f(s) + delta}``.
    """
    w = np.linalg.eigvalsh(p.hess(s.location))
    mu, top = abs(w[0]), float(np.max(np.abs(w)))
    delta = mu * radius**2 / 32.0
    neck = math.sqrt(2 * delta / top)
    step = min(radius / 30.0, neck / 3.0)
    box = Region.around(s.location, radius)
    axes = box.grid_axes(step)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    ball = np.linalg.norm(pts - s.location, axis=-1) <= radius
    F = p.eval(pts)
    _, n_below = label_components(ball & (F < s.value - delta))
    lab_above, _ = label_components(ball & (F < s.value + delta))
    if n_below != 2:
        return False
    lab_below, _ = label_components(ball & (F < s.value - delta))
    joined = {int(lab_above[lab_below == k].flat[0]) for k in (1, 2)}
    return len(joined) == 1 and 0 not in joined


def relevant_saddles(
    p: PotentialSpec,
    candidates: Sequence[CriticalPoint],
    h_star: float,
    level_tol: float = 1e-2,
) -> list[SaddleData]:
    """Index-1 critical points at level ``h_star`` that locally join two lobes."""
    if level_tol <= 0:
        raise InvalidInput("level_tol must be positive")
    out = []
    for c in candidates:
        if c.index != 1 or abs(c.value - h_star) > level_tol:
            continue
        others = [np.linalg.norm(o.location - c.location) for o in candidates if o is not c]
        radius = min(0.5, 0.5 * min(others)) if others else 0.5
        s = saddle_data(p, c)
        if _reconnects(p, s, radius):
            out.append(s)
    if not out:
        raise NoRelevantSaddle(f"no index-1 point reconnects the wells at h*={h_star:.6g}")
    return out


@dataclass(frozen=True)
class EKPrediction:
    """Barrier height and prefactor of the exponentially small eigenvalue.

    ``h_escape`` is the level of the shallower minimum, the one whose well is
    left first; in the tied case it coincides with ``h_low``.
    """

    h_star: float
    h_low: float
    h_escape: float
    E: float
    A: float
    per_saddle: tuple[float, ...]
    degenerate_case: bool

    def rate(self, eps: float) -> float:
        return eps * self.A * math.exp(-self.E / eps)

    def to_dict(self) -> dict:
        return {
            "h_star": self.h_star,
            "h_low": self.h_low,
            "h_escape": self.h_escape,
            "E": self.E,
            "A": self.A,
            "per_saddle": list(self.per_saddle),
            "degenerate_case": self.degenerate_case,
        }


def _hess_det(cp: CriticalPoint) -> float:
    return float(np.prod(cp.hessian_eigenvalues))


def eyring_kramers_constants(
    p: PotentialSpec,
    minima: Sequence[CriticalPoint],
    saddles: Sequence[SaddleData],
    value_tie_tol: float = VALUE_TIE_TOL,
    untied_branch: str = "shallow",
) -> EKPrediction:
    """Barrier ``E`` and prefactor ``A`` in ``lambda ~ eps * A * exp(-E/eps)``.

    Each saddle contributes ``|mu|/(2 pi) * N / sqrt(|det Hess f(s)|)``. With
    tied minima ``N = sqrt(det Hess f(m0)) + sqrt(det Hess f(m1))`` and
    ``E = h* - f(m)``.

    For untied minima, ``untied_branch="shallow"`` (default) takes ``N`` and
    ``E`` from the higher minimum, the well that is escaped from; this is
    what the computed eigenvalues follow. ``untied_branch="lower"`` uses the
    lower minimum for both, kept for comparison.
    """
    if untied_branch not in ("shallow", "lower"):
        raise InvalidInput(f"untied_branch must be 'shallow' or 'lower', got {untied_branch!r}")
    if len(minima) != 2:
        raise InvalidInput("exactly two minima are required")
    if any(m.index != 0 for m in minima):
        raise InvalidInput("a 'minimum' has nonzero Morse index")
    if not saddles:
        raise InvalidInput("at least one saddle is required")
    if any(s.critical_point.index != 1 for s in saddles):
        raise InvalidInput("a saddle has Morse index != 1")
    values = [s.value for s in saddles]
    if max(values) - min(values) > value_tie_tol:
        raise InvalidInput("saddle values differ by more than value_tie_tol")
    h_star = max(values)
    f0, f1 = minima[0].value, minima[1].value
    tied = abs(f0 - f1) <= value_tie_tol
    sq = [math.sqrt(_hess_det(m)) for m in minima]
    if tied:
        numerator = sq[0] + sq[1]
        h_escape = min(f0, f1)
    else:
        pick = (0 if f0 > f1 else 1) if untied_branch == "shallow" else (0 if f0 < f1 else 1)
        numerator = sq[pick]
        h_escape = minima[pick].value
    per = tuple(abs(s.mu) / (2 * math.pi) * numerator / math.sqrt(s.det_abs) for s in saddles)
    E = h_star - h_escape
    if E <= 0:
        raise InvalidInput(f"nonpositive barrier E={E}")
    return EKPrediction(
        h_star=h_star,
        h_low=min(f0, f1),
        h_escape=h_escape,
        E=E,
        A=float(math.fsum(per)),
        per_saddle=per,
        degenerate_case=tied,
    )


# ---------------------------------------------------------------------------
# one-call analysis


@dataclass
class LandscapeAnalysis:
    potential: PotentialSpec
    box: Region
    critical_points: list[CriticalPoint]
    minima: list[CriticalPoint]
    h_star: float | None = None
    saddles: list[SaddleData] = field(default_factory=list)
    ek: EKPrediction | None = None

    def to_dict(self) -> dict:
        return {
            "potential": self.potential.name,
            "box": {"lo": self.box.lo.tolist(), "hi": self.box.hi.tolist()},
            "critical_points": [c.to_dict() for c in self.critical_points],
            "h_star": self.h_star,
            "saddles": [s.to_dict() for s in self.saddles],
            "ek": self.ek.to_dict() if self.ek else None,
        }


def analyze(
    p: PotentialSpec,
    box: Region,
    seed_grid_step: float = 0.1,
    grid_step: float = 0.01,
    newton_tol: float = 1e-10,
    level_tol: float | None = None,
) -> LandscapeAnalysis:
    """Critical points, and for two-well landscapes h*, saddles and E, A."""
    cps = find_critical_points(p, box, seed_grid_step, newton_tol)
    mins = minima_of(cps)
    res = LandscapeAnalysis(p, box, cps, mins)
    if len(mins) != 2:
        return res
    m0, m1 = sorted(mins, key=lambda m: (m.value, tuple(m.location)))
    res.minima = [m0, m1]
    res.h_star = disconnecting_height(p, m0.location, m1.location, box, grid_step)
    if level_tol is None:
        # one grid increment of f near the barrier
        gmax = float(np.max(np.linalg.norm(p.grad(np.stack(np.meshgrid(
            *box.grid_axes(grid_step * 10), indexing="ij"), axis=-1)), axis=-1)))
        level_tol = max(1e-6, 2 * grid_step * min(gmax, 10.0))
    res.saddles = relevant_saddles(p, cps, res.h_star, level_tol)
    res.ek = eyring_kramers_constants(p, res.minima, res.saddles)
    return res


# ---------------------------------------------------------------------------
# box validation


def boundary_points(box: Region, step: float) -> np.ndarray:
    """Grid points on the faces of ``box``."""
    axes = box.grid_axes(step)
    pts = []
    for ax in range(box.dim):
        for end in (box.lo[ax], box.hi[ax]):
            sub = [a if j != ax else np.array([end]) for j, a in enumerate(axes)]
            pts.append(np.stack(np.meshgrid(*sub, indexing="ij"), axis=-1).reshape(-1, box.dim))
    return np.concatenate(pts)


def box_margin(eps_min: float, E: float) -> float:
    """Required height of ``f`` on the boundary above ``h*``: ``max(10 eps ln(1/eps), E)``."""
    return max(10 * eps_min * math.log(1 / eps_min), E)


def validate_box(
    p: PotentialSpec,
    box: Region,
    h_star: float,
    E: float,
    eps_min: float,
    grad_threshold: float = 1e-3,
    step: float = 0.01,
) -> dict:
    """Check that truncating to ``box`` is harmless down to ``eps_min``.

    On the boundary ``|grad f|`` must exceed ``grad_threshold`` (no critical
    point sits on it) and ``f`` must exceed ``h* + box_margin``. Raises
    ``BoxTooSmall`` otherwise; returns the measured quantities.
    """
    pts = boundary_points(box, step)
    fmin = float(np.min(p.eval(pts)))
    gmin = float(np.min(np.linalg.norm(p.grad(pts), axis=-1)))
    margin = box_margin(eps_min, E)
    if gmin <= grad_threshold:
        raise BoxTooSmall(f"min |grad f| on the boundary is {gmin:.3g} <= {grad_threshold:g}")
    if fmin < h_star + margin:
        raise BoxTooSmall(
            f"min f on the boundary {fmin:.4g} is below h* + margin = {h_star + margin:.4g}"
        )
    return {"boundary_min_f": fmin, "boundary_min_grad": gmin, "margin": margin}
