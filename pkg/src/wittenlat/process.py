"""Continuous-time nearest-neighbour jump process with rates
``r(x, x + eps v) = exp(-(f(x + eps v) - f(x)) / (2 eps)) / eps``.

Trajectories are simulated exactly in law (exponential holding times and
jump choice proportional to the rates). Each trajectory owns a Philox
stream derived from ``SeedSequence(seed, spawn_key=(traj_index,))`` and
consumes exactly two uniforms per jump, so a record depends only on
``(seed, traj_index)``, never on batching or thread count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import AllCensored, BoxLeak, InsufficientData, InvalidInput
from .landscape import PotentialSpec, Region
from .lattice import EXP_CLAMP, LatticeBox, box_for_region

CHUNK = 256


@dataclass
class SimConfig:
    potential: PotentialSpec
    eps: float
    region: Region
    start: np.ndarray
    target_center: np.ndarray
    target_radius: float
    seed: int = 0
    max_time: float = math.inf
    n_trajectories: int = 1
    boundary: str = "error"

    def __post_init__(self):
        self.start = np.atleast_1d(np.asarray(self.start, dtype=float))
        self.target_center = np.atleast_1d(np.asarray(self.target_center, dtype=float))
        if self.eps <= 0:
            raise InvalidInput("eps must be positive")
        if self.boundary not in ("error", "reflect"):
            raise InvalidInput("boundary must be 'error' or 'reflect'")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInput("seed must be a 64-bit unsigned integer")
        if self.n_trajectories < 1:
            raise InvalidInput("n_trajectories must be positive")

    def to_dict(self) -> dict:
        return {
            "potential": self.potential.name,
            "eps": self.eps,
            "region": {"lo": self.region.lo.tolist(), "hi": self.region.hi.tolist()},
            "start": self.start.tolist(),
            "target_center": self.target_center.tolist(),
            "target_radius": self.target_radius,
            "seed": int(self.seed),
            "max_time": None if math.isinf(self.max_time) else self.max_time,
            "n_trajectories": self.n_trajectories,
            "boundary": self.boundary,
        }


def default_target_radius(eps: float, m0, m1) -> float:
    """``max(3 eps, 0.1)``, capped at a fifth of the distance between the minima."""
    d = float(np.linalg.norm(np.asarray(m1, dtype=float) - np.asarray(m0, dtype=float)))
    return min(max(3 * eps, 0.1), 0.2 * d)


@dataclass(frozen=True)
class HittingRecord:
    hit: bool
    time: float
    steps: int
    seed: int
    traj_index: int


@dataclass
class _Chain:
    """Rate and neighbour tables of the jump process on the lattice box."""

    box: LatticeBox
    rates: np.ndarray
    neighbors: np.ndarray
    target: np.ndarray
    start: int

    @classmethod
    def build(cls, cfg: SimConfig) -> "_Chain":
        box = box_for_region(cfg.region, cfg.eps)
        x = box.points
        f = cfg.potential.eval(x)
        nset = box.neighbor_set
        kk = np.array(np.unravel_index(np.arange(box.n), box.shape)).T
        rates = np.empty((box.n, len(nset)))
        nbr = np.empty((box.n, len(nset)), dtype=np.int64)
        for j, v in enumerate(nset):
            z = -(cfg.potential.eval(x + cfg.eps * v) - f) / (2 * cfg.eps)
            kn = kk + v
            inside = np.all((kn >= 0) & (kn < np.array(box.shape)), axis=1)
            if np.any(np.abs(z[inside]) > EXP_CLAMP):
                raise BoxLeak("rate exponent exceeds the clamp inside the simulation box")
            z = np.clip(z, -EXP_CLAMP, EXP_CLAMP)
            rates[:, j] = np.exp(z) / cfg.eps
            idx = np.full(box.n, -1, dtype=np.int64)
            idx[inside] = np.ravel_multi_index(tuple(kn[inside].T), box.shape)
            nbr[:, j] = idx
            if cfg.boundary == "reflect":
                rates[~inside, j] = 0.0
        target = np.linalg.norm(x - cfg.target_center, axis=-1) <= cfg.target_radius + 1e-12
        if not np.any(target):
            raise InvalidInput("target ball contains no lattice site")
        start = box.nearest_index(cfg.start)
        if target[start]:
            raise InvalidInput("start site lies in the target")
        return cls(box, rates, nbr, target, start)


def _stream(seed: int, traj_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(traj_index),))))


def _run_block(chain: _Chain, cfg: SimConfig, indices: Sequence[int],
               t_end: float | None = None) -> tuple[list[HittingRecord], np.ndarray]:
    """Advance walkers ``indices`` until they hit the target or time runs out.

    With ``t_end`` set, the target is ignored and the walkers run until
    ``t_end``; their final sites are returned.
    """
    n = len(indices)
    gens = [_stream(cfg.seed, i) for i in indices]
    site = np.full(n, chain.start, dtype=np.int64)
    t = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    hit = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    horizon = cfg.max_time if t_end is None else t_end
    buf = np.empty((n, 2 * CHUNK))
    pos = 2 * CHUNK
    cum = np.cumsum(chain.rates, axis=1)
    total = cum[:, -1]
    while np.any(active):
        if pos == 2 * CHUNK:
            for a in np.flatnonzero(active):
                buf[a] = gens[a].random(2 * CHUNK)
            pos = 0
        act = np.flatnonzero(active)
        u1 = buf[act, pos]
        u2 = buf[act, pos + 1]
        pos += 2
        s = site[act]
        tot = total[s]
        dt = -np.log1p(-u1) / tot
        t_new = t[act] + dt
        over = t_new > horizon
        t[act[over]] = horizon
        active[act[over]] = False
        go = act[~over]
        if go.size == 0:
            continue
        t[go] = t_new[~over]
        sg = site[go]
        thr = u2[~over] * total[sg]
        c = cum[sg]
        j = np.minimum(np.sum(c <= thr[:, None], axis=1), c.shape[1] - 1)
        nxt = chain.neighbors[sg, j]
        if np.any(nxt < 0):
            raise BoxLeak("a walker stepped outside the validated lattice box")
        site[go] = nxt
        steps[go] += 1
        if t_end is None:
            h = chain.target[nxt]
            hit[go[h]] = True
            active[go[h]] = False
    recs = [HittingRecord(bool(hit[a]), float(t[a]), int(steps[a]), int(cfg.seed), int(i))
            for a, i in enumerate(indices)]
    return recs, site


def simulate_batch(cfg: SimConfig, indices: Sequence[int] | None = None,
                   threads: int = 1) -> list[HittingRecord]:
    """Simulate trajectories ``indices`` (default ``0..n_trajectories-1``) in order."""
    chain = _Chain.build(cfg)
    idx = list(range(cfg.n_trajectories)) if indices is None else [int(i) for i in indices]
    if threads <= 1 or len(idx) < 2 * threads:
        return _run_block(chain, cfg, idx)[0]
    blocks = [idx[k::threads] for k in range(threads)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(lambda b: _run_block(chain, cfg, b)[0], blocks))
    by_index = {r.traj_index: r for part in parts for r in part}
    return [by_index[i] for i in idx]


def simulate_trajectory(cfg: SimConfig, traj_index: int) -> HittingRecord:
    return simulate_batch(cfg, [traj_index])[0]


def endpoint_sites(cfg: SimConfig, t_end: float, n: int) -> tuple[np.ndarray, LatticeBox]:
    """Sites occupied at time ``t_end`` by ``n`` independent walkers."""
    chain = _Chain.build(cfg)
    _, sites = _run_block(chain, cfg, list(range(n)), t_end=t_end)
    return sites, chain.box


# ---------------------------------------------------------------------------
# statistics and output


@dataclass
class HittingSummary:
    mean: float
    stderr: float
    n: int
    n_censored: int
    median: float
    exp_diagnostic: float

    def to_dict(self) -> dict:
        return asdict(self)


def mean_hitting_time(records: Sequence[HittingRecord]) -> HittingSummary:
    """Mean and standard error over uncensored records.

    ``exp_diagnostic = mean * ln 2 / median`` is close to 1 for an
    exponential law.
    """
    times = np.array([r.time for r in records if r.hit])
    n_cens = sum(1 for r in records if not r.hit)
    if len(records) > 0 and times.size == 0:
        raise AllCensored(f"all {len(records)} trajectories were censored")
    if times.size < 2:
        raise InsufficientData("need at least two uncensored trajectories")
    mean = float(np.mean(times))
    se = float(np.std(times, ddof=1) / math.sqrt(times.size))
    med = float(np.median(times))
    return HittingSummary(mean, se, int(times.size), n_cens, med, mean * math.log(2) / med)


def target_basin_mass(p: PotentialSpec, box: LatticeBox, psi2: np.ndarray, target_center) -> float:
    """Boltzmann mass of the metastable basin that contains ``target_center``.

    The basin is where the second eigenfunction of the generator,
    ``psi2 / exp(-f/2eps)``, has the sign it takes at the target; ``psi2``
    is the second eigenvector of the Witten operator on ``box``. For a
    two-well landscape the mean transition time into the target basin
    satisfies ``mean * lambda2(-L) * mass ~ 1``.
    """
    f = p.eval(box.points)
    w2 = np.exp(-(f - f.min()) / box.eps)
    # dividing by the positive weight does not change signs
    phi = np.asarray(psi2, dtype=float)
    sign = np.sign(phi[box.nearest_index(target_center)])
    if sign == 0:
        raise InvalidInput("second eigenfunction vanishes at the target")
    basin = np.sign(phi) == sign
    return float(math.fsum(w2[basin]) / math.fsum(w2))


def records_csv(records: Sequence[HittingRecord]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["seed", "traj_index", "hit", "time", "steps"])
    for r in records:
        w.writerow([r.seed, r.traj_index, int(r.hit), f"{r.time:.17g}", r.steps])
    return out.getvalue()


def aggregate_json(cfg: SimConfig, summary: HittingSummary, lambda2_ref: float | None) -> str:
    d = {
        "eps": cfg.eps,
        "n": summary.n,
        "mean": summary.mean,
        "stderr": summary.stderr,
        "censored": summary.n_censored,
        "exp_diagnostic": summary.exp_diagnostic,
        "lambda2_ref": lambda2_ref,
        "product": None if lambda2_ref is None else summary.mean * lambda2_ref,
    }
    return json.dumps(d, indent=2, sort_keys=True)
