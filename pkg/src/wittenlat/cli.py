"""Command line front end: ``wl <subcommand> [options]``.

Subcommands: ``landscape``, ``spectrum``, ``sweep``, ``quasimode``,
``laplace-check`` and ``simulate``. Each writes a JSON report (with the
resolved configuration and a schema version) and a CSV table into the
output directory.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 invariant violation.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .eigensolver import (
    count_small_eigenvalues,
    exponential_rate_fit,
    lowest_eigenpairs,
    small_threshold,
)
from .errors import (
    ComponentAmbiguous,
    ConfigError,
    ConfigInvalid,
    InvalidInput,
    NondegeneracyViolation,
    NoRelevantSaddle,
    NotSeparated,
    PhasePositivityViolated,
    WittenLatError,
)
from .landscape import Region, analyze, load_potential, validate_box
from .laplace import (
    GaussianSumSpec,
    PhaseSpec,
    gaussian_sum_direct,
    gaussian_sum_poisson,
    laplace_sum_general,
    loglog_slope,
)
from .lattice import assemble_witten, box_for_region
from .process import (
    SimConfig,
    aggregate_json,
    default_target_radius,
    mean_hitting_time,
    records_csv,
    simulate_batch,
    target_basin_mass,
)
from .quasimode import make_config, quasimode_report

log = logging.getLogger("wittenlat")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4
INVARIANT_ERRORS = (
    NotSeparated,
    NoRelevantSaddle,
    ConfigInvalid,
    ComponentAmbiguous,
    PhasePositivityViolated,
    NondegeneracyViolation,
)
SUBCOMMANDS = ("landscape", "spectrum", "sweep", "quasimode", "laplace-check", "simulate")

DEFAULT_BOXES = {
    "double_well_1d": [[0.0], [2.5]],
    "single_well_1d": [[0.0], [3.5]],
    "triple_well_1d": [[0.0], [3.0]],
    "double_well_tilted_1d": [[0.0], [2.5]],
    "double_well_aniso_2d": [[0.0, 0.0], [2.5, 2.5]],
}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "potential": {"kind": "builtin", "name": "double_well_1d"},
    "box": None,
    "eps_list": [0.2, 0.15, 0.1, 0.07, 0.05],
    "k": 3,
    "rho": None,
    "seed_grid_step": 0.1,
    "grid_step": 0.01,
    "sim": {"eps": 0.3, "seed": 12345, "n_trajectories": 10000, "target_radius": None,
            "max_time": None},
    "laplace": {
        "Q_list": [[[1.0]], [[2.0]], [[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 4.0]],
                   [[2.0, 0.5], [0.5, 1.0]]],
        "m_list": [0, 1, 2],
        "eps_list": [1.0, 0.5, 0.1, 0.05],
        "phase_eps": [0.1, 0.05, 0.025],
        "phase_delta": 1.5,
    },
}


# ---------------------------------------------------------------------------
# configuration


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        raise ConfigError("unknown key", field=sorted(unknown)[0])
    return _merge(DEFAULTS, user)


def resolve(cfg: dict, args: argparse.Namespace) -> dict:
    """Apply flag overrides and validate; returns the resolved config."""
    cfg = copy.deepcopy(cfg)
    if args.potential:
        cfg["potential"] = {"kind": "builtin", "name": args.potential}
    if args.eps:
        cfg["eps_list"] = list(args.eps)
        cfg["sim"]["eps"] = args.eps[0]
    if args.seed is not None:
        cfg["sim"]["seed"] = args.seed
    if args.trajectories is not None:
        cfg["sim"]["n_trajectories"] = args.trajectories
    if args.rho is not None:
        cfg["rho"] = args.rho
    if args.k is not None:
        cfg["k"] = args.k

    eps_list = cfg["eps_list"]
    if not isinstance(eps_list, list) or not eps_list:
        raise ConfigError("eps_list must be a nonempty list", field="eps_list")
    if any((not isinstance(e, (int, float))) or e <= 0 for e in eps_list):
        raise ConfigError("eps values must be positive numbers", field="eps_list")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("eps_list must be strictly decreasing", field="eps_list")
    if not isinstance(cfg["k"], int) or cfg["k"] < 2:
        raise ConfigError("k must be an integer >= 2", field="k")
    pot = cfg["potential"]
    if isinstance(pot, str):
        try:
            pot = json.loads(Path(pot).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load potential file: {exc}", field="potential") from exc
        cfg["potential"] = pot
    try:
        p = load_potential(pot)
    except (InvalidInput, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad potential: {exc}", field="potential") from exc
    if cfg["box"] is None:
        if pot.get("kind", "builtin") == "builtin" and pot.get("name") in DEFAULT_BOXES:
            c, hw = DEFAULT_BOXES[pot["name"]]
            cfg["box"] = {"center": c, "half_widths": hw}
        else:
            raise ConfigError("box is required for non-builtin potentials", field="box")
    box = cfg["box"]
    try:
        c = np.broadcast_to(np.asarray(box["center"], dtype=float), (p.dim,))
        hw = np.broadcast_to(np.asarray(box["half_widths"], dtype=float), (p.dim,))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad box: {exc}", field="box") from exc
    if np.any(hw <= 0):
        raise ConfigError("half_widths must be positive", field="box")
    cfg["box"] = {"center": c.tolist(), "half_widths": hw.tolist()}
    cfg["_resolved"] = {"potential": p, "region": Region(c - hw, c + hw)}
    return cfg


def _public(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


# ---------------------------------------------------------------------------
# output helpers


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _report(cfg: dict, subcommand: str, body: dict) -> str:
    return _json({"schema_version": SCHEMA_VERSION, "version": __version__,
                  "subcommand": subcommand, "config": _public(cfg), **body})


# ---------------------------------------------------------------------------
# subcommands


def _landscape(cfg: dict):
    p, region = cfg["_resolved"]["potential"], cfg["_resolved"]["region"]
    return analyze(p, region, cfg["seed_grid_step"], cfg["grid_step"])


def cmd_landscape(cfg: dict, out: Path, threads: int) -> int:
    a = _landscape(cfg)
    body = a.to_dict()
    if a.ek is not None:
        body["box_check"] = validate_box(a.potential, a.box, a.h_star, a.ek.E, min(cfg["eps_list"]))
    _write(out, "landscape.json", _report(cfg, "landscape", body))
    rows = [[c.kind, c.index, c.value, *c.location.tolist(), *c.hessian_eigenvalues.tolist()]
            for c in a.critical_points]
    d = a.potential.dim
    hdr = ["kind", "index", "value"] + [f"x{j}" for j in range(d)] + [f"hess_eig{j}" for j in range(d)]
    _write(out, "critical_points.csv", _csv(hdr, rows))
    return EXIT_OK


def _spectrum_rows(cfg: dict, a):
    p, region = cfg["_resolved"]["potential"], cfg["_resolved"]["region"]
    rows = []
    for eps in cfg["eps_list"]:
        box = box_for_region(region, eps)
        op = assemble_witten(p, box)
        spec = lowest_eigenpairs(op, cfg["k"])
        thr = small_threshold(a.minima, eps)
        pred = a.ek.rate(eps) if a.ek is not None else None
        gap = count_small_eigenvalues(spec, thr, pred)
        rows.append((eps, box, op, spec, gap))
    return rows


def cmd_spectrum(cfg: dict, out: Path, threads: int) -> int:
    a = _landscape(cfg)
    rows = _spectrum_rows(cfg, a)
    body = {"spectra": [{**spec.to_dict(), **gap.to_dict()} for _, _, _, spec, gap in rows]}
    _write(out, "spectrum.json", _report(cfg, "spectrum", body))
    k = cfg["k"]
    hdr = ["eps", "n_sites", "n_small", "threshold"] + [f"lambda{j + 1}" for j in range(k)]
    table = [[eps, box.n, gap.n_small, gap.threshold, *[float(v) for v in spec.eigenvalues]]
             for eps, box, _, spec, gap in rows]
    _write(out, "spectrum.csv", _csv(hdr, table))
    return EXIT_OK


CONVERGENCE_COLUMNS = ["eps", "lambda2", "predicted", "ratio", "scaled_error"]


def emit_convergence_table(rows: list[dict]) -> str:
    """CSV with ``eps, lambda2, predicted, ratio, (ratio-1)/sqrt(eps)`` at 17 digits."""
    table = []
    for r in rows:
        ratio = r["lambda2"] / r["predicted"]
        table.append([float(r["eps"]), float(r["lambda2"]), float(r["predicted"]), ratio,
                      (ratio - 1.0) / math.sqrt(r["eps"])])
    return _csv(CONVERGENCE_COLUMNS, table)


def _require_two_wells(a):
    if a.ek is None:
        raise NotSeparated(f"{len(a.minima)} minima found; this subcommand needs exactly two")


def cmd_sweep(cfg: dict, out: Path, threads: int) -> int:
    a = _landscape(cfg)
    _require_two_wells(a)
    p, region = cfg["_resolved"]["potential"], cfg["_resolved"]["region"]
    qcfg = make_config(p, a.minima, a.saddles, a.h_star, region, a.critical_points, rho=cfg["rho"])
    rows = []
    for eps, box, op, spec, gap in _spectrum_rows(cfg, a):
        lam = [float(v) for v in spec.eigenvalues]
        pred = a.ek.rate(eps)
        rep = quasimode_report(p, box, op, qcfg, a.ek, gap.threshold, lam[1])
        rows.append({
            "eps": eps, "lambda1": lam[0], "lambda2": lam[1], "lambda3": lam[2],
            "n_small": gap.n_small, "ek_E": a.ek.E, "ek_A": a.ek.A, "predicted": pred,
            "ratio": lam[1] / pred, "quasimode_rayleigh": rep.rayleigh_quotient,
            "lower_bound": rep.lower_bound,
        })
    for r in rows:
        if not math.isfinite(r["ratio"]):
            raise NotSeparated(f"non-finite ratio at eps={r['eps']}")
    fit = exponential_rate_fit([(r["eps"], r["lambda2"]) for r in rows]) if len(rows) >= 3 else None
    body = {"rows": rows, "fit": fit.to_dict() if fit else None, "ek": a.ek.to_dict(),
            "rho": qcfg.rho}
    _write(out, "sweep.json", _report(cfg, "sweep", body))
    _write(out, "convergence.csv", emit_convergence_table(rows))
    return EXIT_OK


def cmd_quasimode(cfg: dict, out: Path, threads: int) -> int:
    a = _landscape(cfg)
    _require_two_wells(a)
    p, region = cfg["_resolved"]["potential"], cfg["_resolved"]["region"]
    qcfg = make_config(p, a.minima, a.saddles, a.h_star, region, a.critical_points, rho=cfg["rho"])
    reports = []
    for eps, box, op, spec, gap in _spectrum_rows(cfg, a):
        reports.append(quasimode_report(p, box, op, qcfg, a.ek, gap.threshold,
                                        float(spec.eigenvalues[1])))
    _write(out, "quasimode.json", _report(cfg, "quasimode", {"reports": [r.to_dict() for r in reports]}))
    hdr = ["eps", "norm_ratio", "dirichlet_ratio", "residual_ratio", "rayleigh_quotient",
           "lambda2", "lower_bound"]
    table = [[r.eps, r.norm_ratio, r.dirichlet_ratio, r.residual_ratio, r.rayleigh_quotient,
              r.lambda2, r.lower_bound] for r in reports]
    _write(out, "quasimode.csv", _csv(hdr, table))
    return EXIT_OK


def cmd_laplace(cfg: dict, out: Path, threads: int) -> int:
    lc = cfg["laplace"]
    rows, n_fail = [], 0
    for Q in lc["Q_list"]:
        Q = np.asarray(Q, dtype=float)
        for m in lc["m_list"]:
            for eps in lc["eps_list"]:
                s = GaussianSumSpec(Q, np.zeros(Q.shape[0]), m, eps)
                P = gaussian_sum_poisson(s)
                D = gaussian_sum_direct(s)
                tol = max(P.correction_bound, 1e-12 * P.leading)
                ok = abs(D - P.leading) <= tol
                n_fail += not ok
                rows.append([Q.shape[0], json.dumps(Q.tolist()), m, float(eps), D, P.leading,
                             abs(D - P.leading), tol, int(ok)])
    phases = {
        "cubic_k3": (3, lambda x: 0.5 * x[..., 0] ** 2 + 0.1 * x[..., 0] ** 3),
        "quartic_k4": (4, lambda x: 0.5 * x[..., 0] ** 2 + 0.1 * x[..., 0] ** 4),
    }
    slopes = {}
    for name, (k, phi) in phases.items():
        ph = PhaseSpec(phi, [0.0], lc["phase_delta"], k, [[1.0]])
        errs = [laplace_sum_general(ph, 0, e).rel_error for e in lc["phase_eps"]]
        slopes[name] = {"k": k, "eps": lc["phase_eps"], "rel_errors": errs,
                        "slope": loglog_slope(lc["phase_eps"], errs)}
    body = {"n_checks": len(rows), "n_failed": n_fail, "phase_slopes": slopes}
    _write(out, "laplace.json", _report(cfg, "laplace-check", body))
    hdr = ["d", "Q", "m", "eps", "direct", "leading", "abs_diff", "tolerance", "ok"]
    _write(out, "laplace.csv", _csv(hdr, rows))
    if n_fail:
        log.error("%d Poisson/direct comparisons exceeded their tolerance", n_fail)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_simulate(cfg: dict, out: Path, threads: int) -> int:
    a = _landscape(cfg)
    _require_two_wells(a)
    p, region = cfg["_resolved"]["potential"], cfg["_resolved"]["region"]
    sc = cfg["sim"]
    eps = float(sc["eps"])
    m0, m1 = a.minima
    r = sc["target_radius"]
    if r is None:
        r = default_target_radius(eps, m0.location, m1.location)
    sim = SimConfig(p, eps, region, m0.location, m1.location, float(r), seed=int(sc["seed"]),
                    max_time=math.inf if sc["max_time"] is None else float(sc["max_time"]),
                    n_trajectories=int(sc["n_trajectories"]))
    records = simulate_batch(sim, threads=threads)
    summary = mean_hitting_time(records)
    box = box_for_region(region, eps)
    spec = lowest_eigenpairs(assemble_witten(p, box), 2)
    lam2 = float(spec.eigenvalues[1]) / eps
    agg = json.loads(aggregate_json(sim, summary, lam2))
    mass = target_basin_mass(p, box, spec.eigenvectors[1].values, m1.location)
    agg.update(target_basin_mass=mass, basin_weighted_product=summary.mean * lam2 * mass)
    _write(out, "simulate.json", _report(cfg, "simulate", {"aggregate": agg, "sim": sim.to_dict()}))
    _write(out, "trajectories.csv", records_csv(records))
    return EXIT_OK


COMMANDS = {
    "landscape": cmd_landscape,
    "spectrum": cmd_spectrum,
    "sweep": cmd_sweep,
    "quasimode": cmd_quasimode,
    "laplace-check": cmd_laplace,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wl", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="JSON experiment configuration")
    ap.add_argument("--potential", help="builtin potential name (overrides the config)")
    ap.add_argument("--eps", type=float, nargs="+", help="eps values (strictly decreasing)")
    ap.add_argument("--out", default="wl_out", help="output directory (default: wl_out)")
    ap.add_argument("--seed", type=int, help="Monte Carlo seed (unsigned 64-bit)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for simulate")
    ap.add_argument("--trajectories", type=int, help="number of Monte Carlo trajectories")
    ap.add_argument("--rho", type=float, help="quasimode tube half-width override")
    ap.add_argument("-k", type=int, help="number of eigenpairs")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run_subcommand(name: str, cfg: dict, out: Path, threads: int = 1) -> int:
    try:
        return COMMANDS[name](cfg, Path(out), threads)
    except INVARIANT_ERRORS as exc:
        log.error("invariant violation: %s: %s", type(exc).__name__, exc)
        return EXIT_INVARIANT
    except WittenLatError as exc:
        log.error("numerical failure: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERIC


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(load_config(args.config), args)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", field="seed")
        if args.threads < 1:
            raise ConfigError("threads must be positive", field="threads")
    except ConfigError as exc:
        print(f"wl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_subcommand(args.subcommand, cfg, Path(args.out), args.threads)


if __name__ == "__main__":
    sys.exit(main())
