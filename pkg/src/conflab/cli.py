"""Command-line front end.

Exit codes: 0 success/pass, 1 verdict fail, 2 usage or configuration
error, 3 tolerance-ambiguous result. Diagnostics go to stderr; data goes
only to the files named on the command line or in the config.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import jsonschema
import numpy as np

from . import lab
from .conformal import steklov
from .eigenlin import TauAmbiguityError, eigs, negative_inertia
from .fem import assemble_forms
from .fieldexpr import ExprError
from .geometry import BoundaryDescriptor, Geometry, GeometryError, field_from_spec
from .mesh import MeshError, load_gmsh, make_ball, make_box, make_shell, write_gmsh, write_vtk
from .nodal import NodalError, decompose

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_AMBIGUOUS = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_INT = {"type": "integer"}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {
        "field": {
            "anyOf": [
                {"type": "string"},
                {"type": "number"},
                {"type": "object", "additionalProperties": False, "required": ["expr"],
                 "properties": {"expr": {"type": "string"},
                                "params": {"type": "object", "additionalProperties": _NUM}}},
                {"type": "object", "additionalProperties": False, "required": ["bump"],
                 "properties": {"bump": {
                     "type": "object", "additionalProperties": False,
                     "required": ["center", "radius"],
                     "properties": {"center": {"type": "array", "items": _NUM,
                                               "minItems": 3, "maxItems": 3},
                                    "radius": {"type": "number", "exclusiveMinimum": 0},
                                    "amplitude": _NUM}}}},
                {"type": "object", "additionalProperties": False, "required": ["sum"],
                 "properties": {"sum": {"type": "array", "minItems": 1,
                                        "items": {"$ref": "#/$defs/field"}}}},
            ]
        },
        "boundary": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {"kind": {"enum": ["ball", "box", "shell"]}, "radius": _NUM,
                           "lo": _NUM, "hi": _NUM, "inner": _NUM, "outer": _NUM},
        },
        "geometry": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n": {"const": 3},
                "base": {"anyOf": [
                    {"const": "euclidean"},
                    {"type": "object", "additionalProperties": False, "required": ["kind"],
                     "properties": {
                         "kind": {"const": "trusted"},
                         "metric": {"type": "array", "minItems": 3, "maxItems": 3,
                                    "items": {"type": "array", "minItems": 3, "maxItems": 3,
                                              "items": {"$ref": "#/$defs/field"}}},
                         "scalar_curvature": {"$ref": "#/$defs/field"},
                         "mean_curvature": {"$ref": "#/$defs/field"}}},
                ]},
                "boundary": {"$ref": "#/$defs/boundary"},
                "conformal": {"type": "array", "items": {"$ref": "#/$defs/field"}},
            },
        },
        "mesh": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {
                "kind": {"enum": ["ball", "box", "shell", "gmsh"]},
                "level": {"type": "integer", "minimum": 0},
                "divisions": {"type": "integer", "minimum": 1},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "lo": _NUM, "hi": _NUM, "inner": _NUM, "outer": _NUM,
                "path": {"type": "string"},
            },
        },
    },
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "geometry": {"$ref": "#/$defs/geometry"},
        "mesh": {"$ref": "#/$defs/mesh"},
        "problem": {
            "type": "object", "additionalProperties": False,
            "properties": {"bc": {"enum": ["dirichlet", "neumann", "robin"]},
                           "s": _NUM,
                           "n_eigs": {"type": "integer", "minimum": 1},
                           "tau": {"type": "number", "minimum": 0}},
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"json": {"type": "string"}, "csv": {"type": "string"},
                           "vtk": {"type": "string"}, "dir": {"type": "string"}},
        },
        "experiment": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "m": {"type": "integer", "minimum": 1},
                "depth": {"type": "number", "minimum": 0},
                "divisions": {"anyOf": [_INT, {"type": "array", "items": _INT, "minItems": 1}]},
                "trials": {"type": "integer", "minimum": 1},
                "t": _NUM,
                "tau": {"type": "number", "minimum": 0},
                "support": {"type": "number", "exclusiveMinimum": 0},
                "n_weights": {"type": "integer", "minimum": 1},
                "n_random": {"type": "integer", "minimum": 0},
                "n_omega": {"type": "integer", "minimum": 1},
                "C": {"type": "number", "minimum": 0},
                "s_grid": {"type": "array", "items": _NUM, "minItems": 2},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "s0": _NUM,
                "omega": {"$ref": "#/$defs/field"},
                "f": {"$ref": "#/$defs/field"},
                "cases": {"type": "array", "minItems": 1, "items": {
                    "type": "object", "additionalProperties": False,
                    "required": ["name", "mesh"],
                    "properties": {"name": {"type": "string"},
                                   "geometry": {"$ref": "#/$defs/geometry"},
                                   "mesh": {"$ref": "#/$defs/mesh"}}}},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "deterministic": {"type": "boolean"},
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(CONFIG_SCHEMA)


def validate_config(cfg) -> dict:
    errors = sorted(_VALIDATOR.iter_errors(cfg), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {e.message}")
    return cfg


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# builders


def build_mesh(block: dict, base_dir: Path | None = None):
    kind = block["kind"]
    level, d = block.get("level"), block.get("divisions")
    if kind == "ball":
        return make_ball(level, divisions=d, radius=block.get("radius", 1.0))
    if kind == "shell":
        return make_shell(level, divisions=d, inner=block.get("inner", 0.5),
                          outer=block.get("outer", 1.0))
    if kind == "box":
        if d is None:
            d = 2 ** ((2 if level is None else level) + 1)
        return make_box(d, block.get("lo", 0.0), block.get("hi", 1.0))
    if "path" not in block:
        raise ConfigError("gmsh mesh block needs a path")
    p = Path(block["path"])
    if base_dir is not None and not p.is_absolute():
        p = base_dir / p
    try:
        mesh, report = load_gmsh(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"mesh file not found: {p}") from None
    if report.flipped:
        print(f"repaired {len(report.flipped)} inverted tets", file=sys.stderr)
    return mesh


def build_geometry(block: dict | None, mesh_block: dict | None) -> Geometry:
    block = dict(block or {})
    if "boundary" not in block and mesh_block is not None:
        kind = mesh_block["kind"]
        if kind == "ball":
            block["boundary"] = BoundaryDescriptor.ball(mesh_block.get("radius", 1.0)).to_dict()
        elif kind == "box":
            block["boundary"] = BoundaryDescriptor.box(mesh_block.get("lo", 0.0),
                                                       mesh_block.get("hi", 1.0)).to_dict()
        elif kind == "shell":
            block["boundary"] = BoundaryDescriptor.shell(mesh_block.get("inner", 0.5),
                                                         mesh_block.get("outer", 1.0)).to_dict()
        else:
            raise ConfigError("a gmsh mesh needs an explicit geometry boundary descriptor")
    return Geometry.from_dict(block)


def _problem(cfg):
    p = {"bc": "robin", "s": 0.0, "n_eigs": 6, "tau": None}
    p.update(cfg.get("problem", {}))
    return p


def _resolved(cfg, **extra):
    out = dict(cfg)
    out.update(extra)
    return out


# ---------------------------------------------------------------------------
# writers


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _json_text(obj) -> str:
    return json.dumps(lab._clean(obj), sort_keys=True, indent=2) + "\n"


def spectrum_csv(values, residuals, groups=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["index", "eigenvalue", "residual"] + (["multiplicity_group"] if groups is not None else [])
    w.writerow(head)
    for i, (v, r) in enumerate(zip(values, residuals)):
        row = [i + 1, repr(float(v)), repr(float(r))]
        if groups is not None:
            row.append(int(groups[i]))
        w.writerow(row)
    return buf.getvalue()


def multiplicity_groups(values, rtol: float = 0.02) -> list:
    """Group ascending values whose consecutive gap is below ``rtol * max(1, |v|)``."""
    groups, g = [], 0
    for i, v in enumerate(values):
        if i and abs(v - values[i - 1]) > rtol * max(1.0, abs(v)):
            g += 1
        groups.append(g)
    return groups


def _paths(args, cfg):
    out = dict(cfg.get("output", {}))
    for key, attr in (("csv", "out"), ("json", "report"), ("csv", "csv"), ("vtk", "vtk"),
                      ("dir", "out_dir")):
        val = getattr(args, attr, None)
        if val:
            out[key] = val
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_mesh_make(args, cfg):
    block = {"kind": args.kind}
    for key in ("level", "divisions", "radius", "lo", "hi", "inner", "outer"):
        v = getattr(args, key)
        if v is not None:
            block[key] = v
    mesh = build_mesh(block)
    out = Path(args.out)
    text = write_vtk(mesh) if out.suffix == ".vtk" else write_gmsh(mesh)
    _write(out, text)
    print(f"mesh: {mesh.n_vertices} vertices, {mesh.n_tets} tets, h={mesh.h:.4g}", file=sys.stderr)
    return EXIT_OK


def _need(cfg, *keys):
    for k in keys:
        if k not in cfg:
            raise ConfigError(f"config needs a {k!r} block")


def cmd_spectrum(args, cfg):
    _need(cfg, "mesh")
    paths = _paths(args, cfg)
    if not paths.get("csv") and not paths.get("json"):
        raise ConfigError("no output path: use --out/--report or the output block")
    mesh = build_mesh(cfg["mesh"], args.base_dir)
    G = build_geometry(cfg.get("geometry"), cfg["mesh"])
    prob = _problem(cfg)
    pair = assemble_forms(mesh, G).operator(prob["bc"], prob["s"])
    k = min(prob["n_eigs"], pair.size)
    res = eigs(pair, k, tau=prob["tau"])
    ni = negative_inertia(pair, tau=prob["tau"])
    if paths.get("csv"):
        _write(paths["csv"], spectrum_csv(res.values, res.residuals))
    if paths.get("json"):
        _write(paths["json"], _json_text({
            "command": "spectrum", "config": _resolved(cfg, problem=prob),
            "eigenvalues": res.values, "residuals": res.residuals, "solver": res.solver,
            "tau": ni.tau, "negative_count": ni.n_neg, "kernel_dim": ni.n_zero,
            "n_vertices": mesh.n_vertices, "dofs": pair.size}))
    if paths.get("vtk"):
        data = {f"u{i + 1}": pair.lift(res.vectors[:, i]) for i in range(k)}
        _write(paths["vtk"], write_vtk(mesh, point_data=data))
    print(f"{k} eigenvalues, lambda_1 = {res.values[0]:.10g}, negative count {ni.n_neg}",
          file=sys.stderr)
    return EXIT_OK


def cmd_steklov(args, cfg):
    _need(cfg, "mesh")
    paths = _paths(args, cfg)
    if not paths.get("csv") and not paths.get("json"):
        raise ConfigError("no output path: use --out/--report or the output block")
    mesh = build_mesh(cfg["mesh"], args.base_dir)
    G = build_geometry(cfg.get("geometry"), cfg["mesh"])
    prob = _problem(cfg)
    S = steklov(mesh, G, tau=prob["tau"])
    w, Y = S.eig()
    k = min(prob["n_eigs"], len(w))
    w, Y = w[:k], Y[:, :k]
    R = S.D @ Y - (S.Mb @ Y) * w[None, :]
    res = np.linalg.norm(R, axis=0) / np.maximum(np.linalg.norm(S.D @ Y, axis=0), 1e-300)
    groups = multiplicity_groups(list(w), args.group_tol)
    if paths.get("csv"):
        _write(paths["csv"], spectrum_csv(w, res, groups))
    if paths.get("json"):
        _write(paths["json"], _json_text({
            "command": "steklov", "config": _resolved(cfg, problem=prob),
            "eigenvalues": w, "residuals": res, "multiplicity_group": groups,
            "repaired_map": S.hat, "negative_count": S.negative_count(prob["tau"]),
            "tau": S.tau_default if prob["tau"] is None else prob["tau"]}))
    print(f"{k} Steklov values, sigma_1 = {w[0]:.10g}", file=sys.stderr)
    return EXIT_OK


def cmd_nodal(args, cfg):
    _need(cfg, "mesh")
    paths = _paths(args, cfg)
    mesh = build_mesh(cfg["mesh"], args.base_dir)
    G = build_geometry(cfg.get("geometry"), cfg["mesh"])
    prob = _problem(cfg)
    pair = assemble_forms(mesh, G).operator(prob["bc"], prob["s"])
    res = eigs(pair, args.index, tau=prob["tau"])
    u = pair.lift(res.vectors[:, args.index - 1])
    u = u * np.sign(u[np.argmax(np.abs(u))])
    dec = decompose(mesh, u)
    doms = [{"label": d.label, "sign": d.sign, "n_vertices": len(d.vertices),
             "volume": d.volume, "interface_area": d.interface_area} for d in dec.domains]
    if paths.get("json"):
        _write(paths["json"], _json_text({
            "command": "nodal", "config": _resolved(cfg, problem=prob), "index": args.index,
            "eigenvalue": res.values[args.index - 1], "count": dec.count, "domains": doms}))
    if paths.get("vtk"):
        _write(paths["vtk"], write_vtk(mesh, point_data={"u": u},
                                       cell_data={"domain": dec.cell_labels()}))
    print(f"eigenfunction {args.index}: {dec.count} nodal domains", file=sys.stderr)
    return EXIT_OK


def _ex(cfg):
    return cfg.get("experiment", {})


def _divs(ex, default):
    d = ex.get("divisions", default)
    return tuple(d) if isinstance(d, list) else ((d,) if isinstance(d, int) else tuple(d))


def _one_div(ex, default):
    d = ex.get("divisions", default)
    return d[-1] if isinstance(d, list) else d


def _suite_cases(cfg, base_dir):
    ex = _ex(cfg)
    if "cases" not in ex:
        return None
    cases = []
    for c in ex["cases"]:
        mesh = build_mesh(c["mesh"], base_dir)
        cases.append((c["name"], mesh, build_geometry(c.get("geometry"), c["mesh"]), None))
    return cases


def _run_report(args, cfg, name):
    ex, seed, det = _ex(cfg), cfg.get("seed", 0), not args.timing
    if name == "covariance":
        om = field_from_spec(ex["omega"]) if "omega" in ex else None
        f = field_from_spec(ex["f"]) if "f" in ex else None
        kind = cfg.get("mesh", {}).get("kind", "ball")
        if kind not in ("ball", "box"):
            raise ConfigError("covariance runs on ball or box meshes")
        return lab.verify_covariance(om, f, _divs(ex, (4, 8, 16)), kind, seed, det)
    if name == "prescription":
        return lab.experiment_prescription(_divs(ex, (6, 12, 24)), ex.get("n_weights", 10), seed, det)
    if name == "nodal-identity":
        return lab.verify_nodal_identity(_divs(ex, (8, 12, 16, 24)), ex.get("n_random", 3), seed,
                                         deterministic=det)
    if name == "flux":
        return lab.verify_flux(_divs(ex, (8, 12, 16, 24)), ex.get("n_random", 3), seed,
                               deterministic=det)
    if name == "obstruction":
        return lab.verify_obstruction(_one_div(ex, 24), ex.get("n_omega", 5), ex.get("C", 0.1), seed,
                                      deterministic=det)
    if name == "friedlander":
        return lab.experiment_friedlander(_suite_cases(cfg, args.base_dir), _one_div(ex, 8),
                                          ex.get("s_grid"), seed, det)
    if name == "monotonicity":
        mesh = G = None
        if "mesh" in cfg:
            mesh = build_mesh(cfg["mesh"], args.base_dir)
            G = build_geometry(cfg.get("geometry"), cfg["mesh"])
        return lab.verify_monotonicity(mesh, G, ex.get("s_grid"), ex.get("delta", 1e-3),
                                       ex.get("s0", 1.0), seed, det)
    if name == "multibump":
        return lab.experiment_multibump(ex.get("m", 1), ex.get("depth"), _divs(ex, (12,)), seed, det)
    if name == "generic":
        return lab.experiment_generic_perturbation(
            ex.get("trials", 20), ex.get("t", 1e-3), _one_div(ex, 12), seed,
            ex.get("tau", 1e-7), ex.get("support", 0.45), det)
    raise ConfigError(f"unknown experiment {name!r}")  # pragma: no cover


def cmd_report(args, cfg):
    rep = _run_report(args, cfg, args.name)
    rep.config = {"resolved": rep.config, "run_config": cfg}
    paths = _paths(args, cfg)
    if paths.get("json"):
        _write(paths["json"], rep.to_json())
    if paths.get("csv"):
        _write(paths["csv"], rep.to_csv())
    print(f"{rep.name}: {rep.verdict}", file=sys.stderr)
    return {"pass": EXIT_OK, "fail": EXIT_FAIL, "ambiguous-tau": EXIT_AMBIGUOUS}[rep.verdict]


def cmd_export_matrix(args, cfg):
    import scipy.io
    _need(cfg, "mesh")
    paths = _paths(args, cfg)
    if not paths.get("dir"):
        raise ConfigError("no output directory: use --out-dir or output.dir")
    mesh = build_mesh(cfg["mesh"], args.base_dir)
    G = build_geometry(cfg.get("geometry"), cfg["mesh"])
    prob = _problem(cfg)
    pair = assemble_forms(mesh, G).operator(prob["bc"], prob["s"])
    out = Path(paths["dir"])
    out.mkdir(parents=True, exist_ok=True)
    for name, mat in (("A", pair.A), ("M", pair.M)):
        buf = io.BytesIO()
        scipy.io.mmwrite(buf, mat.tocoo(), comment=f"{name} of the {prob['bc']} pencil",
                         field="real", symmetry="general")
        (out / f"{name}.mtx").write_bytes(buf.getvalue())
    _write(out / "dofs.txt", "\n".join(str(int(i)) for i in pair.dofs) + "\n")
    print(f"exported {pair.size} x {pair.size} pencil to {out}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conflab", description="Conformal Laplacian numerical lab")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS worker threads (0 = auto; default from CSL_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="RunConfig JSON file")
        sp.add_argument("--report", help="JSON report path")
        sp.add_argument("--timing", action="store_true",
                        help="include wall-clock runtimes (reports are then not reproducible)")

    mesh = sub.add_parser("mesh", help="mesh utilities")
    msub = mesh.add_subparsers(dest="mesh_command", required=True)
    mk = msub.add_parser("make", help="generate a mesh file (.msh Gmsh 2.2 or .vtk)")
    mk.add_argument("kind", choices=["ball", "box", "shell"])
    mk.add_argument("--level", type=int)
    mk.add_argument("--divisions", type=int)
    mk.add_argument("--radius", type=float)
    mk.add_argument("--lo", type=float)
    mk.add_argument("--hi", type=float)
    mk.add_argument("--inner", type=float)
    mk.add_argument("--outer", type=float)
    mk.add_argument("--out", required=True)
    mk.set_defaults(func=cmd_mesh_make, config=None)

    sp = sub.add_parser("spectrum", help="lowest eigenpairs of a pencil")
    common(sp)
    sp.add_argument("--out", help="CSV path")
    sp.add_argument("--vtk", help="VTK path with eigenvectors")
    sp.set_defaults(func=cmd_spectrum)

    st = sub.add_parser("steklov", help="Dirichlet-to-Robin spectrum")
    common(st)
    st.add_argument("--out", help="CSV path")
    st.add_argument("--group-tol", type=float, default=0.02,
                    help="relative gap separating multiplicity groups")
    st.set_defaults(func=cmd_steklov)

    nd = sub.add_parser("nodal", help="nodal domains of an eigenfunction")
    common(nd)
    nd.add_argument("--index", type=int, default=1, help="eigenfunction index (1-based)")
    nd.add_argument("--vtk", help="VTK path (u and domain id)")
    nd.set_defaults(func=cmd_nodal)

    names = {"verify": ["covariance", "prescription", "nodal-identity", "obstruction", "flux",
                        "friedlander", "monotonicity"],
             "experiment": ["multibump", "generic", "friedlander", "prescription"]}
    for group, choices in names.items():
        g = sub.add_parser(group, help=f"run {group} harness by name")
        g.add_argument("name", choices=choices)
        common(g, config_required=False)
        g.add_argument("--csv", help="CSV summary path")
        g.set_defaults(func=cmd_report)

    ex = sub.add_parser("export", help="export assembled data")
    esub = ex.add_subparsers(dest="export_command", required=True)
    em = esub.add_parser("matrix", help="MatrixMarket files of the pencil")
    common(em)
    em.add_argument("--out-dir", help="output directory")
    em.set_defaults(func=cmd_export_matrix)
    return p


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("CSL_THREADS")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"CSL_THREADS must be an integer, got {env!r}") from None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        n = _threads(args)
        if n < 0:
            raise ConfigError("--threads must be >= 0")
        cfg = load_config(args.config)
        args.base_dir = Path(args.config).parent if args.config else None
        if n > 0:
            from threadpoolctl import threadpool_limits
            ctx = threadpool_limits(limits=n)
        else:
            ctx = nullcontext()
        with ctx:
            return args.func(args, cfg)
    except TauAmbiguityError as exc:
        print(f"tau-ambiguous: {exc}", file=sys.stderr)
        return EXIT_AMBIGUOUS
    except (ConfigError, ExprError, GeometryError, MeshError, NodalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
