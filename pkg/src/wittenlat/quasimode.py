"""Two-well quasimodes for the lattice Witten operator.

The quasimode is the ground-state weight ``w = exp(-f/2eps)`` multiplied by
a smoothed indicator ``kappa`` of one well: ``kappa = -1`` on the basin of
``m0``, ``+1`` on the basin of ``m1``, and an error-function profile in the
reaction coordinate across each saddle tube. A sublevel cutoff ``theta``
removes the high-energy region, and a final projection makes the result
orthogonal to ``w``:

    psi = (theta kappa / 2 - c / 2) w,   c = <theta kappa w, w> / ||w||^2.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, ndimage
from scipy.special import erf

from .errors import (
    ComponentAmbiguous,
    ConfigInvalid,
    InvalidInput,
    QualityWarning,
)
from .landscape import (
    CriticalPoint,
    EKPrediction,
    PotentialSpec,
    Region,
    SaddleData,
)
from .lattice import (
    LatticeBox,
    LatticeVector,
    SparseOperator,
    gst_weight,
    matvec,
    smooth_step,
    weighted_gradient_form,
)

RHO_START_FACTOR = 0.9
MAX_HALVINGS = 6


# ---------------------------------------------------------------------------
# configuration


def chi_profile(eta, rho: float):
    """Even cutoff: 1 on ``|eta| <= rho/3``, 0 on ``|eta| >= 2 rho/3``."""
    eta = np.abs(np.asarray(eta, dtype=float))
    return smooth_step((2 * rho / 3 - eta) / (rho / 3))


def theta_profile(fvals, h_star: float, rho: float):
    """1 on ``f <= h* + rho/2``, 0 on ``f >= h* + 3 rho/4``, smooth in ``f``."""
    f = np.asarray(fvals, dtype=float)
    return smooth_step((h_star + 0.75 * rho - f) / (0.25 * rho))


def reaction_coordinate(s: SaddleData, x) -> np.ndarray:
    """``xi(x) = <x - s, tau>``; vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    return (x - s.location) @ s.tau


@dataclass
class QuasimodeConfig:
    rho: float
    saddles: list[SaddleData]
    minima: tuple[CriticalPoint, CriticalPoint]
    h_star: float
    interpolation: str = "exp(-1/t) glue in f"

    def chi(self, eta):
        return chi_profile(eta, self.rho)

    def theta(self, fvals):
        return theta_profile(fvals, self.h_star, self.rho)

    def tube_coords(self, k: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.saddles[k]
        y = np.asarray(x, dtype=float) - s.location
        xi = y @ s.tau
        perp = np.linalg.norm(y - xi[..., None] * s.tau, axis=-1)
        return xi, perp

    def tube_mask(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Membership in the union of tubes, and the tube index (-1 outside)."""
        which = np.full(np.asarray(x).shape[:-1], -1, dtype=int)
        for k in range(len(self.saddles)):
            xi, perp = self.tube_coords(k, x)
            inside = (np.abs(xi) < self.rho) & (perp < self.rho)
            which = np.where(inside & (which < 0), k, which)
        return which >= 0, which

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "h_star": self.h_star,
            "interpolation": self.interpolation,
            "saddles": [s.to_dict() for s in self.saddles],
            "minima": [m.to_dict() for m in self.minima],
        }


def _descend(p: PotentialSpec, x0: np.ndarray, minima: Sequence[CriticalPoint],
             max_steps: int = 20000) -> np.ndarray:
    """Index of the minimum reached by steepest descent from each start point."""
    x = np.array(x0, dtype=float)
    locs = np.array([m.location for m in minima])
    for _ in range(max_steps):
        g = p.grad(x)
        H = p.hess(x)
        lam = np.max(np.abs(np.linalg.eigvalsh(H)), axis=-1)
        dt = 0.2 / np.maximum(lam, 1e-8)
        step = -dt[:, None] * g
        sn = np.linalg.norm(step, axis=-1, keepdims=True)
        x = x + np.where(sn > 0.05, step * 0.05 / np.maximum(sn, 1e-300), step)
        dist = np.linalg.norm(x[:, None, :] - locs[None], axis=-1)
        if np.all(dist.min(axis=1) < 1e-3):
            break
    dist = np.linalg.norm(x[:, None, :] - locs[None], axis=-1)
    return np.argmin(dist, axis=1)


def orient_saddles(p: PotentialSpec, saddles: Sequence[SaddleData],
                   minima: tuple[CriticalPoint, CriticalPoint], probe: float = 0.05) -> list[SaddleData]:
    """Flip each ``tau`` so that the ``+tau`` side of the saddle drains into ``m1``."""
    out = []
    for s in saddles:
        starts = np.stack([s.location + probe * s.tau, s.location - probe * s.tau])
        ends = _descend(p, starts, minima)
        if set(ends.tolist()) != {0, 1}:
            raise ConfigInvalid(
                f"saddle at {s.location.tolist()} does not connect m0 and m1 by steepest descent"
            )
        out.append(s if ends[0] == 1 else s.with_orientation(-1.0))
    return out


def _grid_points(box: Region, step: float) -> tuple[np.ndarray, tuple[int, ...]]:
    axes = box.grid_axes(step)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return pts.reshape(-1, box.dim), pts.shape[:-1]


def _nearest_flat(points: np.ndarray, x: np.ndarray) -> int:
    return int(np.argmin(np.linalg.norm(points - x, axis=-1)))


def validate_config(p: PotentialSpec, cfg: QuasimodeConfig, box: Region,
                    grid_step: float | None = None) -> list[str]:
    """Return the list of violated validity conditions (empty when valid)."""
    rho = cfg.rho
    step = grid_step or min(0.01, rho / 20)
    pts, shape = _grid_points(box, step)
    F = p.eval(pts)
    problems = []
    # tubes pairwise disjoint (centers more than 2 sqrt(2) rho apart suffices)
    for i in range(len(cfg.saddles)):
        for j in range(i + 1, len(cfg.saddles)):
            d = np.linalg.norm(cfg.saddles[i].location - cfg.saddles[j].location)
            if d <= 2 * math.sqrt(2) * rho:
                problems.append("tubes overlap")
    in_tube, which = cfg.tube_mask(pts)
    # the sublevel set minus the tubes splits into the two basins
    mask = (F < cfg.h_star + rho) & ~in_tube
    lab, nlab = ndimage.label(mask.reshape(shape))
    lab = lab.ravel()
    l0 = lab[_nearest_flat(pts, cfg.minima[0].location)]
    l1 = lab[_nearest_flat(pts, cfg.minima[1].location)]
    if l0 == 0 or l1 == 0 or l0 == l1:
        problems.append("sublevel set minus tubes does not separate m0 and m1")
    else:
        theta = cfg.theta(F)
        stray = mask & (lab != l0) & (lab != l1) & (theta > 0)
        if np.any(stray):
            problems.append("extra sublevel components where theta > 0")
    # phi_k = f + |mu| xi^2 stays above f(s_k) on the tube
    for k, s in enumerate(cfg.saddles):
        sel = which == k
        xi, _ = cfg.tube_coords(k, pts[sel])
        phi = F[sel] + abs(s.mu) * xi**2
        off = np.linalg.norm(pts[sel] - s.location, axis=-1) > 2 * step
        if np.any(phi[off] <= s.value):
            problems.append(f"phi not above f(s) on tube {k}")
        # tube side walls must not cut the support of theta where kappa varies
        xi_all, perp_all = cfg.tube_coords(k, pts)
        wall = (np.abs(xi_all) < 2 * rho / 3) & (np.abs(perp_all - rho) < step)
        if np.any(wall & (F < cfg.h_star + 0.75 * rho)):
            problems.append(f"tube {k} side wall meets the theta support")
    # box boundary must lie outside the theta support
    edge = np.zeros(shape, dtype=bool)
    for ax in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[ax] = 0
        edge[tuple(sl)] = True
        sl[ax] = -1
        edge[tuple(sl)] = True
    if np.any(edge.ravel() & (F < cfg.h_star + 0.75 * rho)):
        problems.append("theta support touches the box boundary")
    return problems


def make_config(
    p: PotentialSpec,
    minima: Sequence[CriticalPoint],
    saddles: Sequence[SaddleData],
    h_star: float,
    box: Region,
    critical_points: Sequence[CriticalPoint] | None = None,
    rho: float | None = None,
    max_halvings: int = MAX_HALVINGS,
) -> QuasimodeConfig:
    """Orient the saddles and choose ``rho``.

    Without an explicit ``rho`` the search starts at ``0.9`` times the
    distance from the saddles to the nearest other critical point and halves
    until every validity condition holds.
    """
    if len(minima) != 2:
        raise InvalidInput("the quasimode needs exactly two minima")
    m0, m1 = minima
    oriented = orient_saddles(p, saddles, (m0, m1))
    if rho is not None:
        cfg = QuasimodeConfig(float(rho), oriented, (m0, m1), h_star)
        problems = validate_config(p, cfg, box)
        if problems:
            raise ConfigInvalid("; ".join(problems))
        return cfg
    others = list(critical_points) if critical_points is not None else list(minima)
    dists = []
    for s in oriented:
        for c in others:
            d = float(np.linalg.norm(c.location - s.location))
            if d > 1e-9:
                dists.append(d)
    r = RHO_START_FACTOR * min(dists)
    last = []
    for _ in range(max_halvings + 1):
        cfg = QuasimodeConfig(r, oriented, (m0, m1), h_star)
        last = validate_config(p, cfg, box)
        if not last:
            return cfg
        r *= 0.5
    raise ConfigInvalid(f"no valid rho after {max_halvings} halvings: {'; '.join(last)}")


# ---------------------------------------------------------------------------
# profile and construction


@dataclass(frozen=True)
class KappaNormalization:
    value: float
    asymptotic: float


def _chi_gauss_integral(a: float, b: float, mu_abs: float, rho: float, eps: float) -> float:
    """``int_a^b chi(eta) exp(-|mu| eta^2 / 2eps) d eta`` for ``0 <= a <= b``."""
    c = mu_abs / (2 * eps)
    total = 0.0
    lo1, hi1 = a, min(b, rho / 3)
    if hi1 > lo1:
        total += 0.5 * math.sqrt(math.pi / c) * (erf(math.sqrt(c) * hi1) - erf(math.sqrt(c) * lo1))
    lo2, hi2 = max(a, rho / 3), min(b, 2 * rho / 3)
    if hi2 > lo2:
        val, _ = integrate.quad(lambda t: float(chi_profile(t, rho)) * math.exp(-c * t * t),
                                lo2, hi2, epsabs=0.0, epsrel=1e-13, limit=200)
        total += val
    return total


def kappa_normalization(s: SaddleData, cfg: QuasimodeConfig, eps: float) -> KappaNormalization:
    """``C = [int_0^{2rho/3} chi exp(-|mu| eta^2/2eps)]^{-1}`` and ``2 sqrt(|mu|/(2 pi eps))``."""
    if eps <= 0:
        raise InvalidInput("eps must be positive")
    half = _chi_gauss_integral(0.0, 2 * cfg.rho / 3, abs(s.mu), cfg.rho, eps)
    return KappaNormalization(1.0 / half, 2 * math.sqrt(abs(s.mu) / (2 * math.pi * eps)))


def kappa_profile(s: SaddleData, cfg: QuasimodeConfig, eps: float, xi: np.ndarray) -> np.ndarray:
    """``C int_0^xi chi exp(-|mu| eta^2/2eps) d eta``, equal to ``sign(xi)`` beyond ``2 rho/3``."""
    C = kappa_normalization(s, cfg, eps).value
    xi = np.asarray(xi, dtype=float)
    a = np.abs(xi)
    out = np.empty_like(a)
    order = np.argsort(a)
    acc, prev = 0.0, 0.0
    for idx in order:
        t = min(a[idx], 2 * cfg.rho / 3)
        if t > prev:
            acc += _chi_gauss_integral(prev, t, abs(s.mu), cfg.rho, eps)
            prev = t
        out[idx] = C * acc
    return np.sign(xi) * np.minimum(out, 1.0)


@dataclass
class QuasimodeParts:
    psi: LatticeVector
    weight: np.ndarray
    theta: np.ndarray
    kappa: np.ndarray
    projection: float


def quasimode_parts(p: PotentialSpec, box: LatticeBox, cfg: QuasimodeConfig, eps: float) -> QuasimodeParts:
    if abs(box.eps - eps) > 1e-15 * eps:
        raise InvalidInput("box.eps differs from eps")
    x = box.points
    F = p.eval(x)
    w = gst_weight(p, box, warn=False)
    theta = cfg.theta(F)
    in_tube, which = cfg.tube_mask(x)
    mask = (F < cfg.h_star + cfg.rho) & ~in_tube
    lab, _ = ndimage.label(mask.reshape(box.shape))
    lab = lab.ravel()
    l0 = lab[box.nearest_index(cfg.minima[0].location)]
    l1 = lab[box.nearest_index(cfg.minima[1].location)]
    if l0 == 0 or l1 == 0 or l0 == l1:
        raise ComponentAmbiguous("lattice sublevel set does not separate the two minima")
    kappa = np.zeros(box.n)
    kappa[lab == l0] = -1.0
    kappa[lab == l1] = 1.0
    for k, s in enumerate(cfg.saddles):
        sel = which == k
        kappa[sel] = kappa_profile(s, cfg, eps, reaction_coordinate(s, x[sel]))
    stray = (theta > 0) & ~in_tube & (lab != l0) & (lab != l1)
    if np.any(stray):
        raise ComponentAmbiguous(f"{int(stray.sum())} lattice sites with theta > 0 are unclassified")
    tk = theta * kappa
    w2 = w * w
    c = math.fsum(tk * w2) / math.fsum(w2)
    psi = 0.5 * (tk - c) * w
    return QuasimodeParts(LatticeVector(box, psi), w, theta, kappa, c)


def build_quasimode(p: PotentialSpec, box: LatticeBox, cfg: QuasimodeConfig, eps: float) -> LatticeVector:
    return quasimode_parts(p, box, cfg, eps).psi


# ---------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class Measured:
    measured: float
    predicted: float

    @property
    def ratio(self) -> float:
        return self.measured / self.predicted


def quasimode_norm(psi: LatticeVector, p: PotentialSpec, ek: EKPrediction,
                   minima: Sequence[CriticalPoint]) -> Measured:
    """``||psi||^2`` against ``(2 pi eps)^{d/2} J exp(-h/eps)``.

    Tied minima: ``J = (sqrt(det m0) + sqrt(det m1))^{-1}``, ``h = f(m)``.
    Untied: ``J = det(m_s)^{-1/2}``, ``h = f(m_s)`` with ``m_s`` the higher
    (shallower) minimum, on which the quasimode concentrates.
    """
    eps = psi.box.eps
    d = psi.box.dim
    dets = [float(np.prod(m.hessian_eigenvalues)) for m in minima]
    if ek.degenerate_case:
        J = 1.0 / (math.sqrt(dets[0]) + math.sqrt(dets[1]))
    else:
        k = int(np.argmax([m.value for m in minima]))
        J = 1.0 / math.sqrt(dets[k])
    pred = (2 * math.pi * eps) ** (d / 2) * J * math.exp(-ek.h_escape / eps)
    return Measured(psi.norm() ** 2, pred)


@dataclass(frozen=True)
class DirichletMeasured(Measured):
    matvec_value: float = float("nan")


def quasimode_dirichlet(psi: LatticeVector, op: SparseOperator, ek: EKPrediction,
                        saddles: Sequence[SaddleData], p: PotentialSpec) -> DirichletMeasured:
    """``<H psi, psi>`` against ``eps sum_k |mu_k|/(2 pi) (2 pi eps)^{d/2} |det_k|^{-1/2} e^{-h*/eps}``.

    The measured value is the edge sum of squares (``weighted_gradient_form``),
    which keeps full relative accuracy when the form is exponentially small;
    the plain matvec value is reported alongside.
    """
    eps = psi.box.eps
    d = psi.box.dim
    pred = eps * sum(abs(s.mu) / (2 * math.pi) * (2 * math.pi * eps) ** (d / 2) / math.sqrt(s.det_abs)
                     for s in saddles) * math.exp(-ek.h_star / eps)
    meas = weighted_gradient_form(psi, p)
    mv = matvec(op, psi).inner(psi)
    return DirichletMeasured(meas, pred, mv)


@dataclass(frozen=True)
class ResidualMeasured:
    measured_sq: float
    scale: float

    @property
    def ratio(self) -> float:
        return self.measured_sq / self.scale


def quasimode_residual(psi: LatticeVector, op: SparseOperator, h_star: float) -> ResidualMeasured:
    """``||H psi||^2`` and the reference scale ``eps^3 exp(-h*/eps)``."""
    eps = psi.box.eps
    Hpsi = matvec(op, psi)
    return ResidualMeasured(Hpsi.norm() ** 2, eps**3 * math.exp(-h_star / eps))


def abstract_lower_bound(dirichlet: float, residual_sq: float, norm_sq: float, tau: float) -> float:
    """``<Tu,u>(1 - R)`` with ``R^2 = ||Tu||^2 / (tau <Tu,u>)`` for ``u = psi/||psi||``.

    When ``R >= 1`` the bound is vacuous and 0 is returned with a
    ``QualityWarning``.
    """
    if dirichlet <= 0 or norm_sq <= 0 or tau <= 0 or residual_sq < 0:
        raise InvalidInput("dirichlet, norm_sq and tau must be positive, residual_sq nonnegative")
    q = dirichlet / norm_sq
    r2 = (residual_sq / norm_sq) / (tau * q)
    R = math.sqrt(r2)
    if R >= 1.0:
        warnings.warn(f"lower bound vacuous (R = {R:.3g} >= 1); returning 0",
                      QualityWarning, stacklevel=2)
        return 0.0
    return q * (1.0 - R)


# ---------------------------------------------------------------------------
# reports


SCHEMA_VERSION = 1


@dataclass
class QuasimodeReport:
    eps: float
    norm_sq_measured: float
    norm_sq_predicted: float
    dirichlet_measured: float
    dirichlet_predicted: float
    dirichlet_matvec: float
    residual_sq_measured: float
    residual_scale: float
    rayleigh_quotient: float
    lower_bound: float
    ortho_defect: float
    kappa_constants: list[float]
    config: dict = field(default_factory=dict)
    lambda2: float | None = None

    @property
    def norm_ratio(self) -> float:
        return self.norm_sq_measured / self.norm_sq_predicted

    @property
    def dirichlet_ratio(self) -> float:
        return self.dirichlet_measured / self.dirichlet_predicted

    @property
    def residual_ratio(self) -> float:
        return self.residual_sq_measured / self.residual_scale

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(schema_version=SCHEMA_VERSION, norm_ratio=self.norm_ratio,
                 dirichlet_ratio=self.dirichlet_ratio, residual_ratio=self.residual_ratio)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def quasimode_report(
    p: PotentialSpec,
    box: LatticeBox,
    op: SparseOperator,
    cfg: QuasimodeConfig,
    ek: EKPrediction,
    tau: float,
    lambda2: float | None = None,
) -> QuasimodeReport:
    """Build the quasimode on ``box`` and evaluate every estimate."""
    eps = box.eps
    parts = quasimode_parts(p, box, cfg, eps)
    psi = parts.psi
    nrm = quasimode_norm(psi, p, ek, cfg.minima)
    dir_ = quasimode_dirichlet(psi, op, ek, cfg.saddles, p)
    res = quasimode_residual(psi, op, ek.h_star)
    lb = abstract_lower_bound(dir_.measured, res.measured_sq, nrm.measured, tau)
    wv = LatticeVector(box, parts.weight)
    ortho = abs(psi.inner(wv))
    return QuasimodeReport(
        eps=eps,
        norm_sq_measured=nrm.measured,
        norm_sq_predicted=nrm.predicted,
        dirichlet_measured=dir_.measured,
        dirichlet_predicted=dir_.predicted,
        dirichlet_matvec=dir_.matvec_value,
        residual_sq_measured=res.measured_sq,
        residual_scale=res.scale,
        rayleigh_quotient=dir_.measured / nrm.measured,
        lower_bound=lb,
        ortho_defect=ortho,
        kappa_constants=[kappa_normalization(s, cfg, eps).value for s in cfg.saddles],
        config=cfg.to_dict(),
        lambda2=lambda2,
    )


# ---------------------------------------------------------------------------
# rough quasimodes


def rough_quasimode(p: PotentialSpec, box: LatticeBox, center, radius: float) -> LatticeVector:
    """``chi exp(-f/2eps)`` normalized, with ``chi`` a smooth bump of the given radius."""
    x = box.points
    r = np.linalg.norm(x - np.asarray(center, dtype=float), axis=-1)
    chi = smooth_step((radius - r) / (0.5 * radius))
    v = chi * gst_weight(p, box, warn=False)
    vec = LatticeVector(box, v)
    return vec * (1.0 / vec.norm())


def rough_rayleigh(p: PotentialSpec, box: LatticeBox, center, radius: float) -> float:
    u = rough_quasimode(p, box, center, radius)
    return weighted_gradient_form(u, p) / u.norm() ** 2
