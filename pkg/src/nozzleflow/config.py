"""Scenario configuration files (INI style).

Every key has a type and a default; unknown sections or keys are errors.
:func:`load_config` reports all problems at once through
:class:`~nozzleflow.errors.ConfigError`.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import Scenario
from .errors import ConfigError, ForceFieldError, FormatError, ProfileError
from .force_field import ForceField
from .gas_model import GasModel
from .geometry import AXISYMMETRIC, PLANAR, Bump, build_profile
from .solvers import SolverConfig

__all__ = ["ScenarioConfig", "load_config", "parse_config", "SCHEMA", "ANALYSES"]

ANALYSES = ("uniform", "conservation", "bernoulli", "far_field", "low_mach", "truncation", "uniqueness", "mms")


def _floats(text):
    return [float(x) for x in text.replace(",", " ").split()]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _words(text):
    return [w for w in text.replace(",", " ").split() if w]


# section -> key -> (parser, default)
SCHEMA = {
    "scenario": {"name": (str, "scenario")},
    "geometry": {
        "profile": (str, "cylinder"),
        "K": (float, 0.0),
        "a1": (float, None),
        "amplitude": (float, 0.0),
        "width": (float, 2.0),
        "obstacle": (str, "none"),
        "bump_height": (float, 0.3),
        "bump_L1": (float, -1.0),
        "bump_L2": (float, 1.0),
        "L": (float, 10.0),
        "n_s": (int, 8),
        "h_z": (float, 0.25),
        "symmetry": (str, AXISYMMETRIC),
    },
    "gas": {
        "gamma": (float, 1.4),
        "epsilon": (float, 0.1),
        "eps_list": (_floats, []),
        "theta": (float, 0.9),
        "epsilon0": (float, 0.5),
    },
    "force": {
        "kind": (str, "zero"),
        "amplitude": (float, 0.0),
        "b1": (float, None),
        "K": (float, 0.0),
        "radial_amplitude": (float, 0.0),
        "r_clip": (float, 1.0),
        "table": (str, ""),
    },
    "flow": {"m0": (float, float(np.pi))},
    "solver": {
        "linear_tol": (float, 1e-12),
        "picard_tol": (float, 1e-10),
        "max_picard": (int, 200),
        "damping": (float, 1.0),
        "linear_solver": (str, "cg"),
        "outlet": (str, "flux"),
    },
    "study": {
        "analyses": (_words, ["conservation", "bernoulli"]),
        "T_list": (_floats, []),
        "rate_model": (str, "exponential"),
        "rate_reference": (str, "constant"),
        "rate_origin": (float, 0.0),
        "predicted_rate": (float, 0.0),
        "rate_tolerance": (float, 0.3),
        "min_r_squared": (float, 0.95),
        "window": (_floats, [-2.0, 2.0]),
        "L_list": (_floats, []),
        "uniqueness_inits": (_words, ["incompressible", "uniform", "scaled"]),
        "low_mach_tolerance": (float, 0.2),
        "uniform_tolerance": (float, 1e-8),
        "conservation_tolerance": (float, 1e-6),
        "uniqueness_tolerance": (float, 1e-7),
        "mms_levels": (_floats, [8, 16, 32]),
        "mms_min_order": (float, 1.9),
    },
    "output": {"directory": (str, "out"), "field_dump": (_bool, True)},
}


@dataclass
class ScenarioConfig:
    """A validated scenario file."""

    scenario: Scenario
    eps_list: list
    study: dict
    output: dict
    values: dict = field(default_factory=dict)
    source: str = ""

    @property
    def analyses(self):
        return self.study["analyses"]


def _line_of(text, section, key):
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and "=" in s and s.split("=", 1)[0].strip() == key:
            return n
    return None


def parse_config(text: str, base_dir: Path | None = None, source: str = "<string>") -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.ParsingError as exc:
        lines = ", ".join(f"line {ln}" for ln, _ in exc.errors)
        raise ConfigError(f"{source}: parse error at {lines}") from exc
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        where = f" at line {lineno}" if lineno else ""
        raise ConfigError(f"{source}: parse error{where}: {exc.message if hasattr(exc, 'message') else exc}") from exc

    violations = []
    values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    for sec in parser.sections():
        if sec not in SCHEMA:
            violations.append(f"unknown section [{sec}]")
            continue
        for key, raw in parser.items(sec):
            ln = _line_of(text, sec, key)
            where = f" (line {ln})" if ln else ""
            if key not in SCHEMA[sec]:
                violations.append(f"unknown key {sec}.{key}{where}")
                continue
            conv = SCHEMA[sec][key][0]
            try:
                values[sec][key] = conv(raw.strip())
            except ValueError as exc:
                violations.append(f"{sec}.{key}{where}: cannot parse {raw!r} ({exc})")
    if violations:
        raise ConfigError(violations)

    g, gs, fs, st = values["geometry"], values["gas"], values["force"], values["study"]
    profile = gas = force = config = None

    # geometry
    if g["symmetry"] not in (AXISYMMETRIC, PLANAR):
        violations.append(f"geometry.symmetry must be {AXISYMMETRIC!r} or {PLANAR!r}")
    if g["n_s"] < 4:
        violations.append(f"MeridianMesh invariant n_s >= 4 violated (geometry.n_s={g['n_s']})")
    if not g["h_z"] > 0:
        violations.append(f"MeridianMesh invariant h_z > 0 violated (geometry.h_z={g['h_z']})")
    if g["obstacle"] not in ("none", "bump"):
        violations.append(f"geometry.obstacle must be 'none' or 'bump' (got {g['obstacle']!r})")
    try:
        obstacle = Bump(g["bump_height"], g["bump_L1"], g["bump_L2"]) if g["obstacle"] == "bump" else None
        profile = build_profile(g["profile"], K=g["K"], a1=g["a1"], amplitude=g["amplitude"], width=g["width"],
                                obstacle=obstacle)
    except (ProfileError, ValueError) as exc:
        violations.append(f"NozzleProfile: {exc}")
    if profile is not None and profile.obstacle is not None:
        need = max(abs(profile.obstacle.L1), abs(profile.obstacle.L2)) + 2.0
        if not g["L"] > need:
            violations.append(f"MeridianMesh invariant L > max(|L1|,|L2|)+2 violated (L={g['L']}, need > {need})")

    # gas
    try:
        gas = GasModel(gs["gamma"], gs["epsilon"], gs["theta"], gs["epsilon0"])
    except ValueError as exc:
        violations.append(f"GasModel: {exc}")
    for e in gs["eps_list"]:
        if not 0.0 < e <= gs["epsilon0"]:
            violations.append(f"GasModel invariant 0 < epsilon <= epsilon0 violated by gas.eps_list entry {e}")

    # force
    try:
        if fs["kind"] == "tabulated":
            if not fs["table"]:
                raise ForceFieldError("tabulated force needs force.table")
            from .dumps import read_tabulated_force

            tpath = Path(fs["table"])
            if base_dir is not None and not tpath.is_absolute():
                tpath = base_dir / tpath
            force = read_tabulated_force(tpath)
        else:
            force = ForceField(fs["kind"], amplitude=fs["amplitude"], b1=fs["b1"], K=fs["K"],
                               radial_amplitude=fs["radial_amplitude"], r_clip=fs["r_clip"])
    except (ForceFieldError, FormatError) as exc:
        violations.append(f"ForceField: {exc}")

    # flow and solver
    if not values["flow"]["m0"] > 0:
        violations.append(f"flow.m0 must be positive (got {values['flow']['m0']})")
    try:
        config = SolverConfig(**values["solver"])
    except ValueError as exc:
        violations.append(str(exc))

    # study
    for a in st["analyses"]:
        if a not in ANALYSES:
            violations.append(f"study.analyses: unknown analysis {a!r} (known: {', '.join(ANALYSES)})")
    if st["rate_model"] not in ("exponential", "algebraic"):
        violations.append(f"study.rate_model must be 'exponential' or 'algebraic' (got {st['rate_model']!r})")
    if st["rate_reference"] not in ("constant", "cylinder", "uniform"):
        violations.append("study.rate_reference must be 'constant', 'cylinder' or 'uniform'")
    if len(st["window"]) != 2 or not st["window"][0] < st["window"][1]:
        violations.append("study.window must be two increasing numbers")
    if "low_mach" in st["analyses"] and len(gs["eps_list"]) < 3:
        violations.append(
            f"low_mach study requires gas.eps_list with at least 3 entries (got {len(gs['eps_list'])})"
        )
    if "far_field" in st["analyses"] and len(st["T_list"]) < 3:
        violations.append("far_field study requires study.T_list with at least 3 windows")
    if "truncation" in st["analyses"]:
        if len(st["L_list"]) < 3:
            violations.append("truncation study requires study.L_list with at least 3 entries")
        elif len(st["window"]) == 2 and not (-st["L_list"][0] / 4 < st["window"][0] < st["window"][1] < st["L_list"][0] / 4):
            violations.append("truncation study window must lie inside a quarter of the shortest L")
    if "uniqueness" in st["analyses"] and len(st["uniqueness_inits"]) < 2:
        violations.append("uniqueness study needs at least two initializations")
    if violations:
        raise ConfigError(violations)

    scenario = Scenario(profile, L=g["L"], n_s=g["n_s"], h_z=g["h_z"], symmetry=g["symmetry"], force=force,
                        m0=values["flow"]["m0"], gas=gas, config=config, name=values["scenario"]["name"])
    return ScenarioConfig(scenario, list(gs["eps_list"]), dict(st), dict(values["output"]), values, text)


def load_config(path) -> ScenarioConfig:
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc})") from exc
    return parse_config(text, base_dir=path.parent, source=str(path))
