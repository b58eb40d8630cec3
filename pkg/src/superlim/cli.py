"""Command line pipeline: ``superlim <subcommand> <scenario.json> [options]``.

Each subcommand writes its artifacts into the run directory (``--out``) and
appends one record to ``manifest.jsonl`` there. Exit status is 0 on success,
1 when a check fails and 2 on input errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import cumulant as cu
from . import skeleton as sk
from . import stats as st
from .model import (AssumptionError, InvariantError, ScenarioError, builtin, builtin_names,
                    load_scenario, scenario_to_dict, validate_assumptions)
from .spectral import SpectralError, eigentriple_T, spectral_data

SUBCOMMANDS = ("validate", "spectra", "extinction", "cumulants", "skeleton", "sample-w",
               "smallvalue", "tailcheck", "densitycheck", "report")
MANIFEST = "manifest.jsonl"
DEFAULT_THETA = "0.1:100:31"


class InputError(Exception):
    """Bad user input; exit status 2."""


class Context:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self.checks = {}
        self.params = {}
        self._ext = None
        self.scenario = _load(args.scenario)

    @property
    def name(self):
        return self.scenario.name

    @property
    def ext(self):
        if self._ext is None:
            self._ext = cu.extinction_v(self.scenario)
        return self._ext

    def path(self, suffix):
        return self.out / f"{self.name}.{suffix}"

    def write_json(self, suffix, obj):
        p = self.path(suffix)
        with open(p, "w") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.outputs.append(p.name)
        return p

    def check(self, name, ok):
        self.checks[name] = bool(ok)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _load(spec):
    p = Path(spec)
    if p.exists():
        try:
            return load_scenario(p)
        except (ScenarioError, InvariantError, ValueError, KeyError, json.JSONDecodeError) as exc:
            raise InputError(f"invalid scenario {spec}: {exc}") from None
    if p.suffix == "" and spec in builtin_names():
        return builtin(spec)
    raise InputError(f"file not found: {spec}")


def scenario_hash(s) -> str:
    blob = json.dumps(scenario_to_dict(s), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def parse_theta_grid(spec: str) -> np.ndarray:
    """``lo:hi:n`` for a log-spaced grid, or a comma separated list."""
    try:
        if ":" in spec:
            lo, hi, n = spec.split(":")
            lo, hi, n = float(lo), float(hi), int(n)
            if lo < 0 or hi < lo or n < 1:
                raise ValueError
            grid = np.geomspace(lo, hi, n) if lo > 0 else np.linspace(lo, hi, n)
        else:
            grid = np.array(sorted(float(x) for x in spec.split(",") if x.strip()))
    except ValueError:
        raise InputError(f"bad theta grid {spec!r}; use lo:hi:n or a comma list") from None
    if grid.size == 0 or np.any(grid < 0):
        raise InputError("theta grid must be non-empty and non-negative")
    return grid


def _threads(args):
    env = os.environ.get("SUPERLIM_THREADS")
    if env:
        return max(1, int(env))
    return args.threads or sk.default_threads()


# --- subcommands --------------------------------------------------------------------------

def cmd_validate(ctx):
    rep = validate_assumptions(ctx.scenario)
    ctx.write_json("validate.json", rep.to_dict())
    ctx.check("assumptions", rep.ok)


def cmd_spectra(ctx):
    data = spectral_data(ctx.scenario, ctx.ext)
    ctx.write_json("spectra.json", data.to_dict())
    ctx.check("lambda0_positive", data.lambda0 > 0)
    ctx.check("lambda0_star_negative", data.lambda0_star < 0)


def cmd_extinction(ctx):
    s, ext = ctx.scenario, ctx.ext
    coeffs = cu.skeleton_coefficients(s, ext)
    c1, c2 = cu.comparability(s, ext)
    out = ext.to_dict()
    out.update({"b": coeffs.b, "offspring": [p.tolist() for p in coeffs.offspring],
                "truncated_mass": coeffs.truncated_mass, "C1": c1, "C2": c2})
    ctx.write_json("extinction.json", out)
    ctx.check("fixed_point", ext.residual < 1e-8)
    ctx.check("q_in_unit_interval", bool(np.all((ext.q > 0) & (ext.q < 1))))


def cmd_cumulants(ctx):
    s, ext, a = ctx.scenario, ctx.ext, ctx.args
    grid = parse_theta_grid(a.theta_grid)
    cgrid = parse_theta_grid(a.complex) if a.complex else np.zeros(0)
    ctx.params.update({"theta_grid": a.theta_grid, "complex": a.complex, "horizon_cap": a.horizon_cap})
    ll = cu.llogl_check(s)
    if not ll["finite"]:
        ctx.write_json("cumulants.json", {"llogl": ll})
        ctx.check("llogl_finite", False)
        return
    lam0, _, _ = eigentriple_T(s)
    table = cu.cumulant_table(s, ext, grid, cgrid, horizon_cap=a.horizon_cap)
    eps, const = cu.smallvalue_constants(s, ext)
    a_val, a_err = cu.operator_A(s, ext, cu.psi_eval(s, ext, 1.0))
    # self-consistency psi(theta) = Vbar_t psi(theta e^{-lambda0 t}) at t = 1
    shifted = np.atleast_2d(cu.psi_eval(s, ext, grid * math.exp(-lam0)))
    resid = float(np.max(np.abs(cu.vbar_t(s, ext, shifted, 1.0) - table.psi)))
    out = table.to_dict()
    out.update({"epsilon0": eps, "smallvalue_constant": const, "A_psi1": a_val, "A_error": a_err,
                "psi_selfconsistency": resid, "llogl": ll, "v": ext.v})
    ctx.write_json("cumulants.json", out)
    csv = ctx.path("cumulants.csv")
    cols = ["theta"] + [f"Phi_{x}" for x in range(s.d)] + [f"psi_{x}" for x in range(s.d)]
    with open(csv, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for th, ph, ps in zip(grid, table.Phi, table.psi):
            fh.write(",".join(f"{x:.17g}" for x in [th, *ph, *ps]) + "\n")
    ctx.outputs.append(csv.name)
    ctx.check("psi_in_band", bool(np.all((table.psi >= -1e-12) & (table.psi <= 1 + 1e-12))))
    ctx.check("psi_selfconsistency", resid < 1e-6)
    if cgrid.size:
        ctx.check("charfn_modulus", bool(np.all(np.abs(table.psi_complex) <= 1 + 1e-9)))


def _model(ctx):
    return sk.build_skeleton(ctx.scenario, ctx.ext)


def cmd_skeleton(ctx):
    a = ctx.args
    s, ext = ctx.scenario, ctx.ext
    model = _model(ctx)
    batch = sk.sample_WZ(model, a.site, a.horizon, a.samples, seed=a.seed, threads=_threads(a))
    ctx.outputs.extend(Path(p).name for p in batch.save(ctx.path("wz")))
    x = batch.values
    se = x.std(ddof=1) / math.sqrt(x.size)
    target = model.phi0_over_v[a.site]
    thetas = np.array([0.5, 1.0, 2.0, 5.0])
    psi = cu.psi_eval(s, ext, thetas)[:, a.site]
    emp = st.empirical_laplace(x, thetas)
    lt_se = np.array([np.exp(-t * x).std(ddof=1) for t in thetas]) / math.sqrt(x.size)
    ctx.write_json("skeleton.json", {"mean": x.mean(), "se": se, "target_mean": target,
                                     "theta": thetas, "laplace_empirical": emp, "laplace_psi": psi,
                                     "laplace_se": lt_se, "site": a.site})
    ctx.check("martingale_mean", abs(x.mean() - target) <= 3 * se)
    ctx.check("laplace_matches_psi", bool(np.all(np.abs(emp - psi) <= 3 * lt_se)))


def _w_batch(ctx):
    """W batch from ``--batch``, the run directory, or a fresh sample."""
    a = ctx.args
    if a.batch:
        p = Path(a.batch)
        if not p.exists():
            raise InputError(f"batch not found: {p}; run `superlim sample-w` first or drop --batch")
        batch = sk.load_batch(p)
        if batch.kind != "W":
            raise InputError(f"{p} holds a {batch.kind} batch, expected W")
        ctx.params["batch"] = str(p)
        return batch
    p = ctx.path("w.csv")
    if p.exists():
        batch = sk.load_batch(p)
        if (batch.seed, batch.values.size, batch.horizon_T) == (a.seed, a.samples, a.horizon):
            ctx.params["batch"] = p.name
            return batch
    return _sample_w(ctx)


def _sample_w(ctx):
    a = ctx.args
    batch = sk.sample_W(_model(ctx), a.horizon, a.samples, seed=a.seed, threads=_threads(a))
    ctx.outputs.extend(Path(p).name for p in batch.save(ctx.path("w")))
    return batch


def cmd_sample_w(ctx):
    s, ext = ctx.scenario, ctx.ext
    batch = _sample_w(ctx)
    mass = float(ext.v @ s.mu)
    n = batch.values.size
    p0 = float(np.mean(batch.values == 0))
    sigma = math.sqrt(math.exp(-mass) * (1 - math.exp(-mass)) / n)
    grid = parse_theta_grid(ctx.args.theta_grid)
    grid = grid[(grid >= 0.1) & (grid <= 10)] if np.any((grid >= 0.1) & (grid <= 10)) else grid
    phi = np.atleast_2d(cu.big_Phi(s, ext, grid))
    dist = st.laplace_distance(batch, lambda th: np.exp(-phi @ s.mu), grid)
    tol = max(0.005, 5 / math.sqrt(n))
    ctx.write_json("sample-w.json", {"p0_empirical": p0, "p0_analytic": math.exp(-mass),
                                     "p0_sigma": sigma, "laplace_distance": dist,
                                     "laplace_tolerance": tol, "theta_grid": grid})
    ctx.check("zero_mass", abs(p0 - math.exp(-mass)) < 3 * sigma)
    ctx.check("laplace", dist < tol)


def cmd_smallvalue(ctx):
    s, ext, a = ctx.scenario, ctx.ext, ctx.args
    batch = _w_batch(ctx)
    eps, const = cu.smallvalue_constants(s, ext)
    try:
        fit = st.smallvalue_fit(batch, a.r_lo, a.r_hi, seed=a.seed)
    except st.InsufficientDataError as exc:
        ctx.write_json("smallvalue.json", {"error": str(exc), "epsilon0": eps, "constant": const})
        ctx.check("enough_small_values", False)
        return
    rel = abs(fit.constant / const - 1)
    ctx.params.update({"r_lo": a.r_lo, "r_hi": a.r_hi})
    ctx.write_json("smallvalue.json", {"epsilon0": eps, "constant": const, "fit": fit.to_dict(),
                                       "slope_error": fit.slope - eps, "constant_rel_error": rel})
    ctx.check("slope", abs(fit.slope - eps) <= 0.05)
    ctx.check("constant", rel <= 0.15)


def cmd_tailcheck(ctx):
    s, ext = ctx.scenario, ctx.ext
    batch = _w_batch(ctx)
    res = st.tail_decay_check(batch, cu.make_Ltilde(s, ext))
    ctx.write_json("tailcheck.json", res)
    ctx.check("tail_statistic_decreasing", res["pass"])


def _is_feller(s):
    return s.d == 1 and not any(s.branching.atoms) and s.branching.tail is None


def cmd_densitycheck(ctx):
    s, ext, a = ctx.scenario, ctx.ext, ctx.args
    batch = _w_batch(ctx)
    res = st.kde_positivity(batch, a.a, a.b)
    out = {"kde": res}
    ctx.check("kde_positive", res["pass"])
    mass = float(ext.v @ s.mu)
    ybatch = sk.sample_Y(_model(ctx), a.horizon, max(a.samples // 4, 10_000), seed=a.seed,
                         threads=_threads(a))
    grid = np.linspace(max(a.a, 1e-3), a.b, 256)
    f, g = sk.density_series(ybatch, mass, grid, return_g=True)
    lower = g * mass * math.exp(-mass)
    out["series"] = {"grid": grid, "f": f, "lower_bound": lower}
    ctx.check("series_dominates_first_term", bool(np.all(f >= lower - 1e-12)))
    if _is_feller(s):
        v = float(ext.v[0])
        exact = st.feller_density(grid, mass=mass, rate=v)
        kde, _ = st.positive_density(batch, grid)
        dist = float(np.max(np.abs(kde - exact)))
        out["exact"] = {"f": exact, "kde_sup_distance": dist}
        ctx.check("kde_matches_exact", dist < 0.02)
    ctx.write_json("densitycheck.json", out)


COMMANDS = {
    "validate": cmd_validate, "spectra": cmd_spectra, "extinction": cmd_extinction,
    "cumulants": cmd_cumulants, "skeleton": cmd_skeleton, "sample-w": cmd_sample_w,
    "smallvalue": cmd_smallvalue, "tailcheck": cmd_tailcheck, "densitycheck": cmd_densitycheck,
}


# --- report --------------------------------------------------------------------------------

def _read_manifest(d: Path):
    p = d / MANIFEST
    if not p.exists():
        return []
    with open(p) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _load_json(d, name):
    p = d / name
    if p.exists():
        with open(p) as fh:
            return json.load(fh)
    return None


def emit_report(run_dir) -> Path:
    """Aggregate every manifest check in ``run_dir`` into ``report.json`` and ``report.txt``."""
    d = Path(run_dir)
    if not d.is_dir():
        raise InputError(f"not a directory: {d}")
    records = _read_manifest(d)
    if not records:
        raise InputError(f"no manifest records in {d}")
    by_name = {}
    for rec in records:
        by_name.setdefault(rec["scenario"], []).append(rec)
    sections, lines = [], []
    for name in sorted(by_name):
        recs = by_name[name]
        checks = {}
        for rec in recs:
            for k, ok in rec["checks"].items():
                checks[f"{rec['subcommand']}.{k}"] = ok
        sec = {"scenario": name, "checks": checks, "all_pass": all(checks.values())}
        lines.append(f"== {name} ==")
        cum = _load_json(d, f"{name}.cumulants.json")
        sv = _load_json(d, f"{name}.smallvalue.json")
        if sv and "fit" in sv:
            fit = sv["fit"]
            sec["small_values"] = {"epsilon0_analytic": sv["epsilon0"], "slope": fit["slope"],
                                   "slope_ci": fit["slope_ci"], "constant_analytic": sv["constant"],
                                   "constant_fitted": fit["constant"], "constant_ci": fit["constant_ci"]}
            lines.append(
                f"small values: eps0 analytic {sv['epsilon0']:.6g} vs fitted {fit['slope']:.4g} "
                f"[{fit['slope_ci'][0]:.4g}, {fit['slope_ci'][1]:.4g}]; constant analytic "
                f"{sv['constant']:.6g} vs fitted {fit['constant']:.4g} "
                f"[{fit['constant_ci'][0]:.4g}, {fit['constant_ci'][1]:.4g}]")
        elif cum and "epsilon0" in cum:
            lines.append(f"small values: eps0 analytic {cum['epsilon0']:.6g}, constant "
                         f"{cum['smallvalue_constant']:.6g} (no fit in this run)")
        dc = _load_json(d, f"{name}.densitycheck.json")
        if dc:
            kde = dc["kde"]
            txt = (f"density: KDE minimum {kde['min_density']:.4g} at y={kde['argmin']:.3g} "
                   f"(threshold {kde['threshold']})")
            if "exact" in dc:
                txt += f"; sup distance to exact density {dc['exact']['kde_sup_distance']:.3g}"
            lines.append(txt)
            sec["density"] = {"min_density": kde["min_density"],
                              "exact_sup_distance": dc.get("exact", {}).get("kde_sup_distance")}
        tc = _load_json(d, f"{name}.tailcheck.json")
        if tc:
            stat = tc["statistic"]
            if stat:
                lines.append(f"tail: r P(W>r)/Ltilde(r) from {stat[0]:.4g} to {stat[-1]:.4g} "
                             f"(ratio {tc['ratio']:.3g})")
            else:
                lines.append(f"tail: inconclusive ({tc.get('reason', '')})")
        for k in sorted(checks):
            lines.append(f"  [{'PASS' if checks[k] else 'FAIL'}] {k}")
        sections.append(sec)
    report = {"sections": sections, "all_pass": all(s["all_pass"] for s in sections)}
    with open(d / "report.json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(d / "report.txt", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return d / "report.json"


# --- entry point ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="superlim", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("scenario", help="scenario JSON (or built-in name); run directory for report")
    p.add_argument("--out", default="run", help="run directory (default: ./run)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--horizon", type=float, default=15.0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--theta-grid", default=DEFAULT_THETA, help="lo:hi:n (log grid) or comma list")
    p.add_argument("--complex", default=None, help="theta grid for psi(i theta)")
    p.add_argument("--horizon-cap", type=float, default=None)
    p.add_argument("--batch", default=None, help="existing W batch CSV")
    p.add_argument("--site", type=int, default=0, help="starting site for skeleton")
    p.add_argument("--r-lo", type=float, default=1e-3)
    p.add_argument("--r-hi", type=float, default=1e-1)
    p.add_argument("--a", type=float, default=0.1, help="density window start")
    p.add_argument("--b", type=float, default=3.0, help="density window end")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.subcommand == "report":
        try:
            path = emit_report(args.scenario)
        except InputError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        report = json.loads(path.read_text())
        print((path.parent / "report.txt").read_text(), end="")
        return 0 if report["all_pass"] else 1
    t0 = time.perf_counter()
    try:
        if args.samples < 1 or args.horizon < 0:
            raise InputError("--samples must be >= 1 and --horizon >= 0")
        ctx = Context(args)
        if args.subcommand == "skeleton" and not 0 <= args.site < ctx.scenario.d:
            raise InputError(f"--site must be in [0, {ctx.scenario.d})")
        COMMANDS[args.subcommand](ctx)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AssumptionError, SpectralError, cu.ConvergenceError, sk.PopulationCapError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    params = {"samples": args.samples, "horizon": args.horizon, **ctx.params}
    record = {"scenario": ctx.name, "scenario_hash": scenario_hash(ctx.scenario),
              "subcommand": args.subcommand, "params": params, "seed": args.seed,
              "outputs": ctx.outputs, "wall_time": round(time.perf_counter() - t0, 3),
              "checks": ctx.checks}
    with open(ctx.out / MANIFEST, "a") as fh:
        fh.write(json.dumps(_jsonable(record), sort_keys=True) + "\n")
    for k, ok in ctx.checks.items():
        print(f"[{'PASS' if ok else 'FAIL'}] {ctx.name} {args.subcommand}.{k}")
    return 0 if all(ctx.checks.values()) else 1


def main():
    sys.exit(run())
