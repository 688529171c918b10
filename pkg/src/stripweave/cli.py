"""Command-line pipeline: plan strips, solve embeddings, export patterns, validate scaling."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .analysis import (AnalysisError, ScalingRun, run_scaling_series, strain_prediction,
                       suggest_partition, validate_appendix)
from .bspline import BSplineManifold2D
from .elasticity import ElasticityParams
from .export import (KitLayout, StripStyle, export_kit, export_strain_csv, export_strain_heatmap,
                     export_strip_svg)
from .expr import EvaluationError, ExpressionError
from .geometry import GeometryError, StripDomain
from .solver import RefinementSchedule, SolverError, solve_embedding, state_for, strain_field
from .surface import DomainError, surface_from_config

log = logging.getLogger("stripweave")

EXIT_OK = 0
EXIT_THRESHOLD = 2
EXIT_USAGE = 64
EXIT_NOINPUT = 66
EXIT_SOFTWARE = 70

_NUM = {"type": "number"}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["surface", "strips"],
    "properties": {
        "surface": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["builtin"],
                 "properties": {"builtin": {"type": "string"},
                                "params": {"type": "object", "additionalProperties": _NUM}}},
                {"type": "object", "additionalProperties": False, "required": ["exprs", "domain"],
                 "properties": {"exprs": {"type": "array", "items": {"type": "string"},
                                          "minItems": 3, "maxItems": 3},
                                "domain": {"type": "array", "items": _PAIR, "minItems": 2, "maxItems": 2}}},
            ]
        },
        "strips": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["boundaries"],
                 "properties": {"boundaries": {"type": "array", "items": _NUM, "minItems": 2}}},
                {"type": "object", "additionalProperties": False, "required": ["uniform"],
                 "properties": {"uniform": {
                     "type": "object", "additionalProperties": False, "required": ["u2_range", "count"],
                     "properties": {"u2_range": _PAIR, "count": _POS_INT}}}},
                {"type": "object", "additionalProperties": False, "required": ["auto"],
                 "properties": {"auto": {
                     "type": "object", "additionalProperties": False,
                     "properties": {"u2_range": _PAIR}}}},
            ]
        },
        "u1_range": _PAIR,
        "young": {"type": "number", "exclusiveMinimum": 0},
        "poisson": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
        "max_strain": {"type": "number", "exclusiveMinimum": 0},
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "spans1": {"type": "integer", "minimum": 2},
                "ode_steps": {"type": "integer", "minimum": 16},
                "p_raise2": {"type": "integer", "minimum": 0},
                "h_bisections": {"type": "integer", "minimum": 0},
                "tol_rel": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": _POS_INT,
                "pin": {"enum": ["rigid3", "three_point", "none"]},
                "adaptive_rounds": {"type": "integer", "minimum": 0},
            },
        },
        "export": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "scale": {"type": "number", "exclusiveMinimum": 0},
                "page_width": {"type": "number", "exclusiveMinimum": 0},
                "page_height": {"type": "number", "exclusiveMinimum": 0},
                "margin": {"type": "number", "minimum": 0},
                "spacing": {"type": "number", "minimum": 0},
                "heatmaps": {"type": "boolean"},
                "csv": {"type": "boolean"},
                "samples": {"type": "array", "items": {"type": "integer", "minimum": 2},
                            "minItems": 2, "maxItems": 2},
            },
        },
        "validate": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "strip": _POS_INT,
                "betas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                          "minItems": 2},
                "e11_slope_min": _NUM,
                "w_slope_band": _PAIR,
                "solver": {"$ref": "#/properties/solver"},
            },
        },
        "out": {"type": "string"},
        "threads": _POS_INT,
    },
}


class ConfigError(ValueError):
    pass


class Job:
    """Validated configuration with derived objects."""

    def __init__(self, cfg: dict, out: str | None = None, threads: int | None = None):
        self.cfg = cfg
        try:
            self.surface = surface_from_config(cfg["surface"])
        except (KeyError, ValueError, ExpressionError, EvaluationError, DomainError) as exc:
            raise ConfigError(f"surface: {exc}") from exc
        self.u1_range = tuple(cfg.get("u1_range", self.surface.u1_range))
        try:
            self.params = ElasticityParams(cfg.get("young", 1.0), cfg.get("poisson", 0.25))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.max_strain = cfg.get("max_strain", 0.01)
        self.schedule = RefinementSchedule(**cfg.get("solver", {}))
        self.out = Path(out or cfg.get("out", "stripweave_out"))
        self.threads = threads or cfg.get("threads", 1)
        self.boundaries = self._boundaries(cfg["strips"])
        try:
            self.strips = [StripDomain.from_bounds(self.surface, self.u1_range, a, b, i + 1)
                           for i, (a, b) in enumerate(zip(self.boundaries[:-1], self.boundaries[1:]))]
        except (ValueError, DomainError) as exc:
            raise ConfigError(f"strips: {exc}") from exc

    def _boundaries(self, spec: dict) -> list[float]:
        if "boundaries" in spec:
            b = [float(x) for x in spec["boundaries"]]
        elif "uniform" in spec:
            lo, hi = spec["uniform"]["u2_range"]
            b = list(np.linspace(lo, hi, spec["uniform"]["count"] + 1))
        else:
            rng = spec["auto"].get("u2_range", self.surface.u2_range)
            try:
                b = list(suggest_partition(self.surface, rng, self.max_strain, self.u1_range).boundaries)
            except (AnalysisError, GeometryError) as exc:
                raise ConfigError(f"auto partition: {exc}") from exc
        if any(b2 <= b1 for b1, b2 in zip(b[:-1], b[1:])):
            raise ConfigError("strip boundaries must be strictly increasing")
        return [float(x) for x in b]

    def checkpoint(self, strip: StripDomain) -> Path:
        return self.out / f"strip_{strip.index}.json"

    def diagnostics(self, strip: StripDomain) -> Path:
        return self.out / f"strip_{strip.index}.diag.json"


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"config file {path!r} not found") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    return cfg


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def plan_rows(job: Job) -> list[dict]:
    rows = []
    for strip in job.strips:
        u1 = np.linspace(*strip.u1_range, 33)
        pred = strain_prediction(strip, u1)
        rows.append({
            "index": strip.index,
            "u2_range": [strip.u2_lo, strip.u2_hi],
            "K_min": float(pred.K.min()), "K_max": float(pred.K.max()),
            "B_min": float(pred.B.min()), "B_max": float(pred.B.max()),
            "peak_strain": float(pred.peak.max()),
        })
    return rows


def cmd_plan(job: Job) -> int:
    rows = plan_rows(job)
    print(f"{'strip':>5} {'u2 range':>23} {'K min':>10} {'K max':>10} {'B max':>10} {'peak E11':>10}")
    for r in rows:
        lo, hi = r["u2_range"]
        print(f"{r['index']:>5} [{lo:>10.5f},{hi:>10.5f}] {r['K_min']:>10.4g} {r['K_max']:>10.4g} "
              f"{r['B_max']:>10.4g} {r['peak_strain']:>10.4e}")
    job.out.mkdir(parents=True, exist_ok=True)
    over = [r["index"] for r in rows if r["peak_strain"] > job.max_strain]
    write_json(job.out / "plan.json", {"max_strain": job.max_strain, "strips": rows, "exceeded": over})
    if over:
        print(f"predicted peak strain exceeds {job.max_strain} on strips {over}", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


def _solve_one(job: Job, strip: StripDomain, resume: bool) -> dict:
    seed = None
    path = job.checkpoint(strip)
    if resume and path.exists():
        seed = BSplineManifold2D.from_json(json.loads(path.read_text()))
    try:
        manifold, tree = solve_embedding(strip, job.params, job.schedule, seed)
    except (SolverError, GeometryError, ValueError, np.linalg.LinAlgError) as exc:
        log.error("strip %d failed: %s", strip.index, exc)
        diag = {"strip": strip.index, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
        write_json(job.diagnostics(strip), diag)
        return diag
    fld = strain_field(state_for(strip, job.params, manifold))
    diag = {
        "strip": strip.index,
        "status": "ok",
        "u2_range": [strip.u2_lo, strip.u2_hi],
        "W": tree["W"],
        "iterations": tree["iterations"],
        "max_abs_E11": float(np.max(np.abs(fld.E_ortho[..., 0, 0]))),
        "stages": tree["stages"],
    }
    write_json(path, manifold.to_json())
    write_json(job.diagnostics(strip), diag)
    return diag


def cmd_solve(job: Job, resume: bool = False) -> int:
    job.out.mkdir(parents=True, exist_ok=True)
    if job.threads == 1:
        results = [_solve_one(job, s, resume) for s in job.strips]
    else:
        with ThreadPoolExecutor(max_workers=job.threads) as pool:
            results = list(pool.map(lambda s: _solve_one(job, s, resume), job.strips))
    failed = 0
    for d in results:
        if d["status"] == "ok":
            print(f"strip {d['strip']}: iterations={d['iterations']} W={d['W']:.6e} "
                  f"max|E11|={d['max_abs_E11']:.4e}")
        else:
            failed += 1
            print(f"strip {d['strip']}: FAILED {d['error']}")
    return EXIT_SOFTWARE if failed else EXIT_OK


def cmd_export(job: Job) -> int:
    manifolds = []
    for strip in job.strips:
        path = job.checkpoint(strip)
        if not path.exists():
            print(f"missing checkpoint {path}; run 'stripweave solve' first", file=sys.stderr)
            return EXIT_NOINPUT
        manifolds.append(BSplineManifold2D.from_json(json.loads(path.read_text())))
    ex = job.cfg.get("export", {})
    layout = KitLayout(scale=ex.get("scale", 100.0),
                       page_width=ex.get("page_width", 210.0), page_height=ex.get("page_height", 297.0),
                       margin=ex.get("margin", 10.0), spacing=ex.get("spacing", 5.0),
                       labels=[str(s.index) for s in job.strips])
    kit = export_kit(manifolds, layout)
    for k, page in enumerate(kit.pages):
        (job.out / f"kit_page_{k + 1}.svg").write_text(page)
    n, m = ex.get("samples", [33, 9])
    for strip, manifold in zip(job.strips, manifolds):
        stem = job.out / f"strip_{strip.index}"
        stem.with_suffix(".svg").write_text(export_strip_svg(manifold, StripStyle(scale=layout.scale)))
        if ex.get("heatmaps", True) or ex.get("csv", True):
            fld = strain_field(state_for(strip, job.params, manifold), n, m)
            if ex.get("heatmaps", True):
                Path(f"{stem}_strain.svg").write_text(export_strain_heatmap(fld, layout.scale))
            if ex.get("csv", True):
                Path(f"{stem}_strain.csv").write_text(export_strain_csv(fld))
    print(f"wrote {len(kit.pages)} kit page(s) and {len(manifolds)} strip pattern(s) to {job.out}")
    return EXIT_OK


def _json_safe(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_json_safe(v) for v in x]
    return x


def cmd_validate(job: Job) -> int:
    vc = job.cfg.get("validate", {})
    idx = vc.get("strip", 1)
    if idx > len(job.strips):
        raise ConfigError(f"validate.strip={idx} but only {len(job.strips)} strips are defined")
    settings = {**job.cfg.get("solver", {}), **vc.get("solver", {})}
    runs: list[ScalingRun] = run_scaling_series(job.strips[idx - 1], job.params,
                                                  vc.get("betas", [1.0, 0.5, 0.25]),
                                                  RefinementSchedule(**settings))
    report = validate_appendix(runs, job.params, vc.get("e11_slope_min", 2.5),
                               tuple(vc.get("w_slope_band", (4.5, 5.5))))
    job.out.mkdir(parents=True, exist_ok=True)
    write_json(job.out / "validate.json", _json_safe(report.to_json()))
    table = report.table()
    (job.out / "validate.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK if report.passed else EXIT_THRESHOLD


# ---------------------------------------------------------------------------


def _setup_logging() -> None:
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    level = levels.get(os.environ.get("STRIPWEAVE_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stripweave", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [("plan", "predict peak strain per strip"),
                            ("solve", "compute minimum-strain embeddings"),
                            ("export", "write SVG kit pages and strain artifacts"),
                            ("validate", "breadth-scaling study on one strip")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON job file")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--threads", type=int, help="parallel strips (overrides config)")
        if name == "solve":
            p.add_argument("--resume", action="store_true", help="seed from existing checkpoints")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.threads is not None and args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        job = Job(load_config(args.config), args.out, args.threads)
        if args.command == "plan":
            return cmd_plan(job)
        if args.command == "solve":
            return cmd_solve(job, args.resume)
        if args.command == "export":
            return cmd_export(job)
        return cmd_validate(job)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NOINPUT
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, GeometryError, AnalysisError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_SOFTWARE


if __name__ == "__main__":
    sys.exit(main())
