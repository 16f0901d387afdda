"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Scenario runs go through the same path as ``nozzleflow run`` and are cached
per session, so criteria that share a run (conservation, subsonicity flags)
read the same manifests.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import optimize

from nozzleflow.analysis import mms_study, uniqueness_probe
from nozzleflow.cli import run
from nozzleflow.config import load_config
from nozzleflow.gas_model import GasModel, density_from_bernoulli
from nozzleflow.geometry import PLANAR, build_mesh, build_profile
from nozzleflow.solvers import solve_compressible, solve_incompressible

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "nozzleflow" / "scenarios"
RUNS = ("cylinder_exact", "flat_exponential", "flat_exponential_compressible", "incompressible_a1_2",
        "compressible_a1_2", "force_decay", "low_mach", "truncation", "uniqueness")


@pytest.fixture(scope="session")
def manifests(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    out = {}
    for name in RUNS:
        t0 = time.perf_counter()
        status, manifest = run(load_config(SCENARIOS / f"{name}.ini"), root / name)
        out[name] = (status, manifest, time.perf_counter() - t0)
    return out


def test_c1_low_mach_limit(manifests, criterion):
    status, m, elapsed = manifests["low_mach"]
    fits = m["results"]["low_mach"]
    sv, sd = fits["velocity_deviation"]["slope"], fits["density_deviation"]["slope"]
    ok = status == 0 and abs(sv - 2.0) <= 0.2 and abs(sd - 2.0) <= 0.2 and elapsed <= 300.0
    criterion("C1", ok, f"low-Mach slopes velocity {sv:.4f}, density {sd:.4f} (2.0+-0.2); {elapsed:.1f}s <= 300s")


def test_c2_exact_cylinder(criterion):
    mesh = build_mesh(build_profile("cylinder"), L=10.0, n_s=8, h_z=0.25)
    inc = solve_incompressible(mesh, np.pi)
    e_inc = float(np.abs(inc.velocity - [0.0, 1.0]).max())
    gas = GasModel(epsilon=0.1)
    q = optimize.bisect(lambda s: np.pi * density_from_bernoulli(s * s, 0.0, gas).rho * s - np.pi, 0.5, 2.0,
                        xtol=1e-15)
    comp = solve_compressible(mesh, gas, None, np.pi)
    e_comp = float(np.abs(comp.velocity - [0.0, q]).max())
    e_rho = float(np.abs(comp.density - density_from_bernoulli(q * q, 0.0, gas).rho).max())
    ok = e_inc < 1e-10 and e_comp < 1e-8 and e_rho < 1e-8
    criterion("C2", ok, f"incompressible error {e_inc:.2e} (<1e-10); compressible q={q:.7f} "
                        f"velocity error {e_comp:.2e}, density error {e_rho:.2e} (<1e-8)")


def test_c3_exponential_far_field(manifests, criterion):
    parts, ok = [], True
    for name in ("flat_exponential", "flat_exponential_compressible"):
        status, m, _ = manifests[name]
        ff = m["results"]["far_field"]
        good = ff["rate"] > 0 and ff["r_squared"] > 0.99
        ok &= good
        parts.append(f"{name} rate {ff['rate']:.3f}, r2 {ff['r_squared']:.6f}, "
                     f"{sum(ff['used'])}/{len(ff['used'])} windows above floor")
    criterion("C3", ok, "; ".join(parts))


def _algebraic(manifests, name):
    status, m, _ = manifests[name]
    ff = m["results"]["far_field"]
    return ff["rate"], ff["r_squared"]


def test_c4_incompressible_algebraic_rate(manifests, criterion):
    rate, r2 = _algebraic(manifests, "incompressible_a1_2")
    criterion("C4", rate >= 1.7 and r2 > 0.95, f"exponent {rate:.4f} (>=1.7), r2 {r2:.6f} (>0.95)")


def test_c5_compressible_rate_to_cylinder_reference(manifests, criterion):
    rate, r2 = _algebraic(manifests, "compressible_a1_2")
    criterion("C5", rate >= 0.7, f"exponent {rate:.4f} (>=0.7), r2 {r2:.6f}")


def test_c6_force_decay_rate(manifests, criterion):
    rate, r2 = _algebraic(manifests, "force_decay")
    criterion("C6", rate >= 1.2, f"exponent {rate:.4f} (>=1.2), r2 {r2:.6f}")


def test_c7_conservation_on_every_run(manifests, criterion):
    values = []
    for name, (status, m, _) in manifests.items():
        if status == 2:
            continue
        values += [c["value"] for c in m["checks"] if "conserv" in c["name"] or "flux conserved" in c["name"]]
        for rec in m["results"].get("truncation", {}).get("records", []):
            values.append(rec["flux_deviation"])
    worst = max(values)
    criterion("C7", worst < 1e-6, f"worst relative section-flux deviation {worst:.2e} over {len(values)} runs (<1e-6)")


def test_c8_uniqueness_on_three_scenarios(criterion):
    parts, ok = [], True
    for name in ("uniqueness", "low_mach", "flat_exponential_compressible"):
        sc = load_config(SCENARIOS / f"{name}.ini").scenario
        for init in ("uniform", "scaled"):
            d = uniqueness_probe(sc, "incompressible", init)
            ok &= d < 1e-7
            parts.append(f"{name}/{init} {d:.1e}")
    criterion("C8", ok, "max |grad phi_a - grad phi_b|: " + ", ".join(parts) + " (<1e-7)")


def test_c9_truncation_stability(manifests, criterion):
    status, m, _ = manifests["truncation"]
    res = m["results"]["truncation"]
    deltas = [r["delta"] for r in res["records"]]
    dec = all(b < a for a, b in zip(deltas, deltas[1:]))
    ok = status == 0 and dec and deltas[-1] > res["floor"]
    criterion("C9", ok, f"delta(L) {', '.join(f'{d:.3e}' for d in deltas)} strictly decreasing; "
                        f"final above documented floor {res['floor']:.2e}")


def test_c10_discretization_health(manifests, criterion):
    planar = min(mms_study((8, 16, 32, 64), PLANAR)["orders"])
    axi = min(mms_study((16, 32, 64, 128))["orders"])
    flags = []
    for name, (status, m, _) in manifests.items():
        if status == 2:
            continue
        flags += [c["passed"] for c in m["checks"] if c["name"].startswith("subsonic and truncation inactive")]
        flags += [not r["truncation_active"] and r["max_mach"] < 1.0 for r in m["runs"] if 0.0 < r["epsilon"] <= 0.2]
    ok = planar >= 1.9 and axi >= 1.9 and all(flags) and len(flags) > 0
    criterion("C10", ok, f"MMS min order planar {planar:.4f}, axisymmetric {axi:.4f} (>=1.9); "
                         f"subsonic/truncation-inactive flags {sum(flags)}/{len(flags)} true")


def test_manifests_are_json_and_exit_codes_consistent(manifests):
    for name, (status, m, _) in manifests.items():
        assert m["exit_status"] == status
        json.dumps(m)
        assert status == 0, (name, [c for c in m["checks"] if not c["passed"]], m["errors"])
