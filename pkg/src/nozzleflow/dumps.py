"""Plain-text grid, field and tabulated-force dumps plus CSV and manifest writers.

The byte-level layout is documented in ``docs/formats.md``.  Floats are
written with ``repr`` (shortest string that round-trips), so reading a dump
back reproduces every array bitwise.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .force_field import ForceField
from .geometry import MeridianMesh, NozzleProfile, build_mesh

__all__ = [
    "FieldDump",
    "write_grid",
    "read_grid",
    "write_field",
    "read_field",
    "write_tabulated_force",
    "read_tabulated_force",
    "write_rates_csv",
    "read_rates_csv",
    "write_study_csv",
    "write_manifest",
    "canonical_hash",
    "FIELD_BLOCKS",
]

MAGIC = {"grid": "nozzleflow-grid 1", "field": "nozzleflow-field 1", "force": "nozzleflow-force 1"}
FIELD_BLOCKS = ("potential", "u_r", "u_z", "rho", "mach", "pressure")
_FIELD_LOCATION = {"potential": "node", "u_r": "cell", "u_z": "cell", "rho": "cell", "mach": "cell", "pressure": "cell"}


def _fmt(x) -> str:
    return repr(float(x))


def _header_lines(kind, mesh):
    prof = mesh.profile.params()
    lines = [
        MAGIC[kind],
        f"symmetry {mesh.symmetry}",
        f"n_s {mesh.n_s}",
        f"n_z {mesh.n_z}",
        f"L {_fmt(mesh.L)}",
        f"h_z {_fmt(mesh.h_z)}",
    ]
    for key in sorted(prof):
        val = prof[key]
        lines.append(f"profile.{key} {_fmt(val) if isinstance(val, (int, float)) else val}")
    return lines


def _block(name, location, values):
    values = np.asarray(values, dtype=float).ravel()
    out = [f"[{name} {location} {values.size}]"]
    out.extend(_fmt(v) for v in values)
    out.append(f"[end {name}]")
    return out


def _node_block(mesh):
    out = [f"[nodes {mesh.n_nodes}]"]
    out.extend(f"{_fmt(r)} {_fmt(z)}" for r, z in mesh.nodes)
    out.append("[end nodes]")
    return out


def _write(path, lines):
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def write_grid(mesh: MeridianMesh, path) -> None:
    """Grid dump: header and node coordinates."""
    _write(path, _header_lines("grid", mesh) + _node_block(mesh))


# -- parsing ---------------------------------------------------------------------


class _Parsed:
    def __init__(self):
        self.header = {}
        self.blocks = {}
        self.locations = {}
        self.footer = {}


def _parse(path, kind):
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc})") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != MAGIC[kind]:
        raise FormatError(f"{path}: first line must be {MAGIC[kind]!r}")
    out = _Parsed()
    i = 1
    while i < len(lines) and not lines[i].startswith("["):
        parts = lines[i].split(" ", 1)
        if len(parts) != 2:
            raise FormatError(f"{path}:{i + 1}: malformed header line {lines[i]!r}")
        out.header[parts[0]] = parts[1]
        i += 1
    while i < len(lines):
        line = lines[i]
        if line == "[footer]":
            i += 1
            while i < len(lines) and lines[i] != "[end footer]":
                if "=" not in lines[i]:
                    raise FormatError(f"{path}:{i + 1}: footer lines must be key=value")
                k, v = lines[i].split("=", 1)
                out.footer[k] = v
                i += 1
            if i >= len(lines):
                raise FormatError(f"{path}: footer block not terminated")
            i += 1
            continue
        if not (line.startswith("[") and line.endswith("]")):
            raise FormatError(f"{path}:{i + 1}: expected a block header, got {line!r}")
        parts = line[1:-1].split()
        if parts[0] == "nodes" and len(parts) == 2:
            name, loc, count = "nodes", "node", parts[1]
        elif len(parts) == 3:
            name, loc, count = parts
        else:
            raise FormatError(f"{path}:{i + 1}: malformed block header {line!r}")
        n = int(count)
        body = lines[i + 1 : i + 1 + n]
        end = i + 1 + n
        if len(body) < n or end >= len(lines) or lines[end] != f"[end {name}]":
            raise FormatError(f"{path}: block {name!r} is truncated (expected {n} values and [end {name}])")
        try:
            if name == "nodes":
                vals = np.array([[float(x) for x in b.split(" ")] for b in body]).reshape(n, 2)
            else:
                vals = np.array([float(b) for b in body])
        except ValueError as exc:
            raise FormatError(f"{path}: bad number in block {name!r}: {exc}") from exc
        out.blocks[name] = vals
        out.locations[name] = loc
        i = end + 1
    return out


def _header_value(p, key, path):
    if key not in p.header:
        raise FormatError(f"{path}: header is missing {key!r}")
    return p.header[key]


def _mesh_from_header(p, path) -> MeridianMesh:
    prof = {k[len("profile."):]: v for k, v in p.header.items() if k.startswith("profile.")}
    if "kind" not in prof:
        raise FormatError(f"{path}: header is missing 'profile.kind'")
    try:
        profile = NozzleProfile.from_params(prof)
        n_s = int(_header_value(p, "n_s", path))
        n_z = int(_header_value(p, "n_z", path))
        L = float(_header_value(p, "L", path))
        symmetry = _header_value(p, "symmetry", path)
        mesh = MeridianMesh(profile, L, n_s, n_z, symmetry)
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: header does not describe a valid mesh ({exc})") from exc
    if "nodes" not in p.blocks:
        raise FormatError(f"{path}: missing block 'nodes'")
    if p.blocks["nodes"].shape != mesh.nodes.shape or not np.array_equal(p.blocks["nodes"], mesh.nodes):
        raise FormatError(f"{path}: node coordinates do not match the mesh described by the header")
    return mesh


def _check_against(mesh, other, path):
    if other is None:
        return
    if (other.n_s, other.n_z, other.symmetry) != (mesh.n_s, mesh.n_z, mesh.symmetry) or not np.array_equal(
        other.nodes, mesh.nodes
    ):
        raise FormatError(
            f"{path}: mesh mismatch: dump has n_s={mesh.n_s}, n_z={mesh.n_z} ({mesh.symmetry}); "
            f"expected n_s={other.n_s}, n_z={other.n_z} ({other.symmetry})"
        )


def read_grid(path, mesh: MeridianMesh | None = None) -> MeridianMesh:
    p = _parse(path, "grid")
    out = _mesh_from_header(p, path)
    _check_against(out, mesh, path)
    return out


# -- fields -----------------------------------------------------------------------


@dataclass
class FieldDump:
    """Arrays read back from a field dump."""

    mesh: MeridianMesh
    potential: np.ndarray
    u_r: np.ndarray
    u_z: np.ndarray
    rho: np.ndarray
    mach: np.ndarray
    pressure: np.ndarray
    footer: dict = field(default_factory=dict)

    @property
    def velocity(self) -> np.ndarray:
        return np.column_stack([self.u_r, self.u_z])


def _footer_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    return str(v).replace("\n", " ")


def state_footer(state) -> dict:
    """Scalar diagnostics of a FlowState for the dump footer."""
    d = state.diagnostics
    out = {
        "achieved_flux": state.achieved_flux,
        "m0": state.m0,
        "epsilon": 0.0 if state.gas is None else state.gas.epsilon,
        "gamma": 1.4 if state.gas is None else state.gas.gamma,
        "iterations": int(d.get("iterations", 0)),
        "floor": state.floor,
        "max_mach": float(np.max(state.mach)),
        "truncation_active": bool(np.any(state.truncated)),
    }
    for key in ("eig_min", "eig_max", "energy", "outlet_datum"):
        if key in d and np.isfinite(d[key]):
            out[key] = float(d[key])
    return out


def write_field(state, path, footer: dict | None = None) -> None:
    """Field dump of a FlowState: header, nodes, the six field blocks and a footer."""
    mesh = state.mesh
    lines = _header_lines("field", mesh) + _node_block(mesh)
    arrays = {
        "potential": state.potential,
        "u_r": state.velocity[:, 0],
        "u_z": state.velocity[:, 1],
        "rho": state.density,
        "mach": state.mach,
        "pressure": state.pressure,
    }
    for name in FIELD_BLOCKS:
        lines += _block(name, _FIELD_LOCATION[name], arrays[name])
    foot = state_footer(state)
    if footer:
        foot.update(footer)
    lines.append("[footer]")
    lines.extend(f"{k}={_footer_value(foot[k])}" for k in sorted(foot))
    lines.append("[end footer]")
    _write(path, lines)


def read_field(path, mesh: MeridianMesh | None = None) -> FieldDump:
    """Read a field dump; ``mesh`` (optional) must match the dump's grid."""
    p = _parse(path, "field")
    for name in FIELD_BLOCKS:
        if name not in p.blocks:
            raise FormatError(f"{path}: missing block {name!r}")
    dmesh = _mesh_from_header(p, path)
    _check_against(dmesh, mesh, path)
    for name in FIELD_BLOCKS:
        want = dmesh.n_nodes if _FIELD_LOCATION[name] == "node" else dmesh.n_cells
        if p.blocks[name].size != want:
            raise FormatError(f"{path}: block {name!r} has {p.blocks[name].size} values, expected {want}")
    return FieldDump(dmesh, *(p.blocks[n] for n in FIELD_BLOCKS), footer=p.footer)


# -- tabulated force ------------------------------------------------------------------


def write_tabulated_force(mesh: MeridianMesh, values, path) -> None:
    """Nodal force potential on ``mesh`` (grid header, nodes, ``phi_f`` block)."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_nodes,):
        raise FormatError(f"expected {mesh.n_nodes} nodal values, got {values.shape}")
    _write(path, _header_lines("force", mesh) + _node_block(mesh) + _block("phi_f", "node", values))


def read_tabulated_force(path, mesh: MeridianMesh | None = None) -> ForceField:
    p = _parse(path, "force")
    if "phi_f" not in p.blocks:
        raise FormatError(f"{path}: missing block 'phi_f'")
    dmesh = _mesh_from_header(p, path)
    _check_against(dmesh, mesh, path)
    if p.blocks["phi_f"].size != dmesh.n_nodes:
        raise FormatError(f"{path}: block 'phi_f' has {p.blocks['phi_f'].size} values, expected {dmesh.n_nodes}")
    return ForceField.from_mesh_values(dmesh, p.blocks["phi_f"])


# -- tables and manifest ------------------------------------------------------------------


def write_rates_csv(path, T, D_l2, D_inf) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "D_L2", "D_Linf"])
        for row in zip(T, D_l2, D_inf):
            w.writerow([_fmt(x) for x in row])


def read_rates_csv(path):
    with open(path, newline="", encoding="ascii") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["T", "D_L2", "D_Linf"]:
        raise FormatError(f"{path}: expected header T,D_L2,D_Linf")
    data = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, 3)
    return data[:, 0], data[:, 1], data[:, 2]


def write_study_csv(path, rows) -> None:
    """``rows`` are ``(study, parameter_name, parameter, metric, value)`` tuples."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["study", "parameter_name", "parameter", "metric", "value"])
        for study, pname, pval, metric, value in rows:
            w.writerow([study, pname, _fmt(pval), metric, _footer_value(value)])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    return x


def canonical_hash(obj) -> str:
    """SHA-256 of the canonical (sorted, compact) JSON encoding of ``obj``."""
    blob = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(manifest), sort_keys=True, indent=2) + "\n", encoding="utf-8")
