"""Command-line front end: ``nozzleflow run|check|rates``.

Exit status: 0 when every declared check passes, 1 when a check fails,
2 when a solver raised, 3 for invalid configuration or malformed files.
Set ``NOZZLEFLOW_WORKERS`` to run independent solves of a study in
parallel; results do not depend on the worker count.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    FloorWarning,
    bernoulli_and_pressure,
    far_field_rate,
    flux_deviation,
    low_mach_study,
    mms_study,
    truncation_study,
    uniqueness_probe,
)
from .config import ScenarioConfig, load_config
from .dumps import canonical_hash, read_field, write_field, write_manifest, write_rates_csv, write_study_csv
from .errors import ConfigError, FormatError, InsufficientDataError, NozzleFlowError
from .force_field import ForceField
from .solvers import FlowState, solve_cylinder_reference, uniform_cylinder_state

__all__ = ["main", "run", "EXIT_OK", "EXIT_CHECK_FAILED", "EXIT_SOLVER_ERROR", "EXIT_INVALID"]

EXIT_OK, EXIT_CHECK_FAILED, EXIT_SOLVER_ERROR, EXIT_INVALID = 0, 1, 2, 3

log = logging.getLogger("nozzleflow")


class _Run:
    def __init__(self):
        self.checks = []
        self.runs = []
        self.errors = []
        self.warnings = []
        self.study_rows = []
        self.results = {}

    def check(self, name, passed, value=None, threshold=None):
        self.checks.append({"name": name, "passed": bool(passed), "value": value, "threshold": threshold})
        log.info("%s %s (value=%s, threshold=%s)", "PASS" if passed else "FAIL", name, value, threshold)

    def record(self, label, state: FlowState):
        d = state.diagnostics
        self.runs.append({
            "label": label,
            "epsilon": 0.0 if state.gas is None else state.gas.epsilon,
            "L": state.mesh.L,
            "iterations": int(d.get("iterations", 0)),
            "m0": state.m0,
            "achieved_flux": state.achieved_flux,
            "flux_deviation": flux_deviation(state),
            "max_mach": float(np.max(state.mach)),
            "truncation_active": bool(np.any(state.truncated)),
            "floor": state.floor,
            "eig_min": d.get("eig_min"),
            "eig_max": d.get("eig_max"),
        })


def _unit_section(symmetry):
    return np.pi if symmetry == "axisymmetric" else 1.0


def _radial(force):
    return force.radial_part() if force.kind != "tabulated" else ForceField()


def _far_reference(cfg: ScenarioConfig, state: FlowState):
    sc = cfg.scenario
    kind = cfg.study["rate_reference"]
    if kind == "cylinder":
        return solve_cylinder_reference(sc.gas, sc.force, sc.m0, sc.L, sc.config, sc.n_s, sc.h_z, sc.symmetry)
    if state.compressible:
        return uniform_cylinder_state(sc.gas, _radial(sc.force), state.achieved_flux, sc.symmetry).qbar
    return state.achieved_flux / _unit_section(sc.symmetry)


def _guard(rec: _Run, label, fn):
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", FloorWarning)
            out = fn()
        rec.warnings.extend(f"{label}: {w.message}" for w in caught if issubclass(w.category, FloorWarning))
        return out
    except NozzleFlowError as exc:
        rec.errors.append({"analysis": label, "type": type(exc).__name__, "message": str(exc)})
        log.debug("%s failed: %s: %s", label, type(exc).__name__, exc)
        return None


def _analysis_uniform(cfg, rec, state, out):
    sc = cfg.scenario
    if state.compressible:
        q = uniform_cylinder_state(sc.gas, _radial(sc.force), state.achieved_flux, sc.symmetry).qbar
    else:
        q = state.achieved_flux / _unit_section(sc.symmetry)
    err = float(np.abs(state.velocity - np.array([0.0, q])).max())
    rec.results["uniform"] = {"qbar": q, "max_error": err}
    rec.check("uniform state recovered", err < cfg.study["uniform_tolerance"], err, cfg.study["uniform_tolerance"])


def _analysis_far_field(cfg, rec, state, out):
    st = cfg.study
    ref = _far_reference(cfg, state)
    if isinstance(ref, FlowState):
        rec.record("cylinder_reference", ref)
    fit = far_field_rate(state, ref, st["T_list"], st["rate_model"], origin=st["rate_origin"])
    write_rates_csv(out / "rates.csv", fit.windows, fit.D_l2, fit.D_inf)
    rec.results["far_field"] = {
        "model": fit.model, "rate": fit.rate, "prefactor": fit.prefactor, "r_squared": fit.r_squared,
        "rate_l2": fit.rate_l2, "r_squared_l2": fit.r_squared_l2, "used": fit.used, "floor": fit.floor,
        "origin": fit.origin,
    }
    for T, a, b in zip(fit.windows, fit.D_inf, fit.D_l2):
        rec.study_rows += [("far_field", "T", T, "D_Linf", a), ("far_field", "T", T, "D_L2", b)]
    if fit.model == "exponential":
        rec.check("exponential far-field rate positive", fit.rate > 0.0, fit.rate, 0.0)
    else:
        floor = st["predicted_rate"] - st["rate_tolerance"]
        rec.check("algebraic far-field exponent above predicted floor", fit.rate >= floor, fit.rate, floor)
    rec.check("far-field fit r_squared", fit.r_squared > st["min_r_squared"], fit.r_squared, st["min_r_squared"])


def _analysis_low_mach(cfg, rec, state, out):
    st = cfg.study
    rep = low_mach_study(cfg.scenario, cfg.eps_list, st["window"], predicted=2.0, tolerance=st["low_mach_tolerance"])
    for r in rep.records:
        if "error" not in r:
            rec.check(f"subsonic and truncation inactive at epsilon={r['epsilon']}",
                      r["max_mach"] < 1.0 and r["truncation_inactive"], r["max_mach"], 1.0)
            rec.check(f"conservation at epsilon={r['epsilon']}", r["flux_deviation"] < st["conservation_tolerance"],
                      r["flux_deviation"], st["conservation_tolerance"])
    rec.study_rows += [("low_mach",) + row for row in _rows(rep)]
    rec.results["low_mach"] = {k: {"slope": v.slope, "halfwidth": v.halfwidth, "r_squared": v.r_squared}
                               for k, v in rep.fits.items()}
    rec.warnings.extend(rep.flags)
    for name, ok in rep.checks.items():
        metric = name.split()[0]
        rec.check(f"low-Mach {name}", ok, rep.fits[metric].slope, [2.0 - rep.tolerance, 2.0 + rep.tolerance])


def _rows(rep):
    return [(rep.parameter, p, m, v) for p, m, v in rep.rows() if not isinstance(v, str)]


def _analysis_truncation(cfg, rec, state, out):
    st = cfg.study
    rep = truncation_study(cfg.scenario, st["L_list"], st["window"])
    rec.study_rows += [("truncation",) + row for row in _rows(rep)]
    rec.results["truncation"] = {"records": rep.records, "floor": rep.floor}
    for name, ok in rep.checks.items():
        rec.check(f"truncation {name}", ok, [r["delta"] for r in rep.records], rep.floor)


def _analysis_uniqueness(cfg, rec, state, out):
    inits = cfg.study["uniqueness_inits"]
    tol = cfg.study["uniqueness_tolerance"]
    for other in inits[1:]:
        d = uniqueness_probe(cfg.scenario, inits[0], other)
        rec.study_rows.append(("uniqueness", "init", 0.0, f"{inits[0]}_vs_{other}", d))
        rec.check(f"uniqueness {inits[0]} vs {other}", d < tol, d, tol)


def _analysis_mms(cfg, rec, state, out):
    levels = [int(n) for n in cfg.study["mms_levels"]]
    res = mms_study(levels, cfg.scenario.symmetry)
    rec.results["mms"] = res
    for h, e in zip(res["h"], res["errors"]):
        rec.study_rows.append(("mms", "h", h, "velocity_error_L2", e))
    order = min(res["orders"])
    rec.check("MMS velocity order", order >= cfg.study["mms_min_order"], order, cfg.study["mms_min_order"])


_ANALYSES = {
    "uniform": _analysis_uniform,
    "far_field": _analysis_far_field,
    "low_mach": _analysis_low_mach,
    "truncation": _analysis_truncation,
    "uniqueness": _analysis_uniqueness,
    "mms": _analysis_mms,
}


def run(cfg: ScenarioConfig, out_dir=None, config_path="") -> tuple[int, dict]:
    """Run every analysis declared by ``cfg`` and write the artifact set.

    Returns ``(exit_status, manifest)``.  Artifacts already written are
    kept when a later step fails.
    """
    started = time.time()
    out = Path(out_dir if out_dir is not None else cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    rec = _Run()
    sc = cfg.scenario

    def primary():
        state = sc.solve()
        rec.record("primary", state)
        return state

    state = _guard(rec, "solve", primary)
    if state is not None:
        if cfg.output["field_dump"]:
            (out / "fields").mkdir(exist_ok=True)
            write_field(state, out / "fields" / "primary.field")
        if state.compressible:
            rec.check("subsonic and truncation inactive", float(state.mach.max()) < 1.0 and not np.any(state.truncated),
                      float(state.mach.max()), 1.0)
        if "conservation" in cfg.analyses:
            dev = flux_deviation(state)
            rec.check("section flux conserved", dev < cfg.study["conservation_tolerance"], dev,
                      cfg.study["conservation_tolerance"])
        if "bernoulli" in cfg.analyses:
            _, res = bernoulli_and_pressure(state)
            rec.check("Bernoulli residual", res < 1e-10, res, 1e-10)
        for name in cfg.analyses:
            if name in _ANALYSES:
                _guard(rec, name, lambda fn=_ANALYSES[name]: fn(cfg, rec, state, out))
    elif "mms" in cfg.analyses:
        _guard(rec, "mms", lambda: _analysis_mms(cfg, rec, None, out))

    write_study_csv(out / "study.csv", rec.study_rows)
    if rec.errors:
        status = EXIT_SOLVER_ERROR
    elif not rec.checks or not all(c["passed"] for c in rec.checks):
        status = EXIT_CHECK_FAILED
    else:
        status = EXIT_OK
    manifest = {
        "tool": "nozzleflow",
        "version": __version__,
        "config_file": str(config_path),
        "config": cfg.values,
        "config_text": cfg.source,
        "scenario_hash": canonical_hash(cfg.values),
        "runs": rec.runs,
        "results": rec.results,
        "checks": rec.checks,
        "errors": rec.errors,
        "warnings": rec.warnings,
        "exit_status": status,
        "timing": {
            "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
            "elapsed_seconds": round(time.time() - started, 3),
        },
    }
    write_manifest(out / "manifest.json", manifest)
    return status, manifest


# -- commands -----------------------------------------------------------------------------


def _cmd_check(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"INVALID {args.config}")
        for v in exc.violations:
            print(f"  - {v}")
        return EXIT_INVALID
    print(f"OK {args.config} ({cfg.scenario.name}; analyses: {', '.join(cfg.analyses) or 'none'})")
    return EXIT_OK


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"INVALID {args.config}")
        for v in exc.violations:
            print(f"  - {v}")
        return EXIT_INVALID
    status, manifest = run(cfg, args.out, args.config)
    for c in manifest["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']} (threshold {c['threshold']})")
    for e in manifest["errors"]:
        print(f"ERROR {e['analysis']}: {e['type']}: {e['message']}")
    print(f"exit {status}")
    return status


def _dump_state(dump) -> FlowState:
    foot = dump.footer
    return FlowState(
        mesh=dump.mesh,
        potential=dump.potential,
        velocity=dump.velocity,
        density=dump.rho,
        mach=dump.mach,
        pressure=dump.pressure,
        truncated=np.zeros(dump.mesh.n_cells, dtype=bool),
        rho_gp=np.ones((dump.mesh.n_cells, 4)),
        achieved_flux=float(foot.get("achieved_flux", "nan")),
        gas=None,
        force=ForceField(),
        m0=float(foot.get("m0", "nan")),
        diagnostics={"floor": float(foot.get("floor", "0.0"))},
    )


def _cmd_rates(args) -> int:
    try:
        a = read_field(args.field_a)
        b = read_field(args.field_b, a.mesh if args.same_grid else None)
    except FormatError as exc:
        print(f"FORMAT ERROR: {exc}", file=sys.stderr)
        return EXIT_INVALID
    sa, sb = _dump_state(a), _dump_state(b)
    mesh = a.mesh
    T = args.T if args.T else list(np.arange(np.ceil(mesh.profile.K + 2.0), mesh.L - 1.0 + 1e-9, 1.0))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FloorWarning)
            fit = far_field_rate(sa, sb, T, args.model, origin=args.origin, min_T=args.min_T)
    except (InsufficientDataError, NozzleFlowError) as exc:
        print(f"ERROR: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    if args.out:
        write_rates_csv(args.out, fit.windows, fit.D_l2, fit.D_inf)
    else:
        print("T,D_L2,D_Linf")
        for row in zip(fit.windows, fit.D_l2, fit.D_inf):
            print(",".join(repr(float(x)) for x in row))
    print(f"# model={fit.model} rate={fit.rate!r} prefactor={fit.prefactor!r} r_squared={fit.r_squared!r} "
          f"windows_used={sum(fit.used)}/{len(fit.used)}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nozzleflow", description="Subsonic potential flow in nozzles.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and write artifacts")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    r.set_defaults(func=_cmd_run)
    c = sub.add_parser("check", help="validate a scenario file")
    c.add_argument("config")
    c.set_defaults(func=_cmd_check)
    q = sub.add_parser("rates", help="far-field rate fit between two field dumps (b is the reference)")
    q.add_argument("field_a")
    q.add_argument("field_b")
    q.add_argument("--model", choices=("exponential", "algebraic"), default="exponential")
    q.add_argument("--T", type=float, nargs="+", default=None, help="window start positions")
    q.add_argument("--origin", type=float, default=0.0, help="algebraic fits use log(T - origin)")
    q.add_argument("--min-T", dest="min_T", type=float, default=None)
    q.add_argument("--same-grid", action="store_true", help="require both dumps on the same grid")
    q.add_argument("--out", default=None, help="write rates.csv here instead of stdout")
    q.set_defaults(func=_cmd_rates)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
