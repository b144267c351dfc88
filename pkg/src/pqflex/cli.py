"""Command-line front end: ``pqflex run`` for study grids, ``pqflex plot`` for SVG figures."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import jsonschema

from .flexmap import (
    BoundarySolveError,
    DegenerateBoundaryError,
    FlexAreaRequest,
    FlexBoundary,
    FlexMapError,
    area_reduction,
    read_boundary_json,
    trace_boundary,
    write_boundary_csv,
    write_boundary_json,
)
from .netmodel import PHASES, CaseError, bundled_case_path, load_case
from .opf import COORDINATION, COORDINATION_MODES, ProblemError, ScenarioConfig
from .oracle import sample_feasible, verify_boundary, write_report_json, write_samples_csv
from .powerflow import PowerFlowError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CASE = 3
EXIT_SOLVER = 4
EXIT_DEGENERATE = 5

_ORACLE = {
    "type": "object",
    "properties": {"n": {"type": "integer", "minimum": 1}, "seed": {"type": "integer"}},
    "required": ["n"],
    "additionalProperties": False,
}

STUDY_SCHEMA = {
    "type": "object",
    "properties": {
        "case": {"type": "string"},
        "output_dir": {"type": "string"},
        "oracle": _ORACLE,
        "description": {"type": "string"},
        "studies": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                    "case": {"type": "string"},
                    "ref_bus": {"type": ["string", "integer"]},
                    "ref_phase": {"enum": list(PHASES)},
                    "phases": {"type": "array", "items": {"enum": list(PHASES)}, "minItems": 1, "uniqueItems": True},
                    "k": {"type": "integer", "minimum": 2},
                    "epsilon_kw": {"type": "number", "exclusiveMinimum": 0},
                    "vuf_limits": {
                        "type": ["array", "null"],
                        "items": {"type": ["number", "null"], "exclusiveMinimum": 0},
                        "minItems": 1,
                    },
                    "coordination": {"enum": list(COORDINATION)},
                    "coordination_mode": {"enum": list(COORDINATION_MODES)},
                    "sweep_axis": {"enum": ["P", "Q"]},
                    "spacing": {"enum": ["adaptive", "cosine", "uniform"]},
                    "compare_to": {"type": "string"},
                    "description": {"type": "string"},
                },
                "required": ["name"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["studies"],
    "additionalProperties": False,
}

SUMMARY_COLUMNS = [
    "study",
    "phase",
    "vuf_limit",
    "coordination",
    "area_kVAr2",
    "base_P_kW",
    "base_Q_kVAr",
    "feasible_points",
    "infeasible_intervals",
    "compare_to",
    "reference_area_kVAr2",
    "area_percent",
    "reduction_percent",
    "oracle_max_outside_kVA",
    "oracle_tolerance_kVA",
    "status",
]


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Cell:
    study: str
    case_ref: str
    phase: str
    vuf: float | None
    request: FlexAreaRequest
    compare_to: str | None

    @property
    def vuf_label(self) -> str:
        return "none" if self.vuf is None else f"{self.vuf:g}"

    @property
    def key(self) -> str:
        return f"{self.study}/{self.phase}/{self.vuf_label}"


# ---------------------------------------------------------------------------
# config


def _resolve_case(ref: str, base_dir: Path) -> Path:
    p = Path(ref)
    if not p.is_absolute():
        p = base_dir / p
    if p.exists():
        return p
    try:
        return bundled_case_path(ref)
    except FileNotFoundError:
        raise CaseError(f"case {ref!r} is neither a file nor a bundled case") from None


def parse_oracle(text: str) -> dict:
    """``n=10000,seed=1`` -> ``{"n": 10000, "seed": 1}``."""
    out = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or key not in ("n", "seed"):
            raise ConfigError(f"bad --oracle item {part!r}; expected n=<int>,seed=<int>")
        try:
            out[key] = int(value)
        except ValueError:
            raise ConfigError(f"--oracle {key} must be an integer") from None
    if "n" not in out or out["n"] < 1:
        raise ConfigError("--oracle needs n=<positive int>")
    return out


def load_config(path, case_override=None, out_override=None, oracle_override=None):
    """Return ``(cells, output_dir, oracle)``; raises ConfigError / CaseError."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    try:
        jsonschema.validate(doc, STUDY_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from None
    studies = doc["studies"]
    if not studies:
        raise ConfigError("no studies defined")
    names = [s["name"] for s in studies]
    dup = sorted({n for n in names if names.count(n) > 1})
    if dup:
        raise ConfigError(f"duplicate study names: {', '.join(dup)}")
    for s in studies:
        if "compare_to" in s and s["compare_to"] not in names:
            raise ConfigError(f"study {s['name']!r}: compare_to {s['compare_to']!r} is not a study")
        if "phases" in s and "ref_phase" in s:
            raise ConfigError(f"study {s['name']!r}: give either phases or ref_phase, not both")

    base_dir = path.parent
    default_case = case_override or doc.get("case")
    cells = []
    for s in studies:
        ref = s.get("case", default_case)
        if ref is None:
            raise ConfigError(f"study {s['name']!r} has no case (set 'case' or pass --case)")
        case_path = str(_resolve_case(ref, base_dir if ref != case_override else Path.cwd()))
        phases = s.get("phases") or [s.get("ref_phase", "a")]
        vufs = s.get("vuf_limits") or [None]
        for ph in phases:
            for v in vufs:
                scenario = ScenarioConfig(
                    vuf_limit=v,
                    coordination=s.get("coordination", "full"),
                    coordination_mode=s.get("coordination_mode", "per_unit_zero"),
                )
                req = FlexAreaRequest(
                    ref_bus=None if s.get("ref_bus") is None else str(s["ref_bus"]),
                    ref_phase=ph,
                    k=s.get("k", 40),
                    epsilon=s.get("epsilon_kw"),
                    scenario=scenario,
                    sweep_axis=s.get("sweep_axis", "P"),
                    spacing=s.get("spacing", "adaptive"),
                )
                cells.append(Cell(s["name"], case_path, ph, v, req, s.get("compare_to")))
    out = Path(out_override or doc.get("output_dir") or "pqflex-out")
    if not out.is_absolute() and not out_override:
        out = base_dir / out
    oracle = oracle_override if oracle_override is not None else doc.get("oracle")
    return cells, out, oracle


# ---------------------------------------------------------------------------
# cells


def _run_cell(args):
    """Worker: returns ``(status, boundary | None, oracle report | None, message)``."""
    cell, oracle = args
    try:
        case = load_case(cell.case_ref)
    except (CaseError, OSError) as exc:
        return "case_error", None, None, str(exc)
    req = cell.request
    if req.epsilon is not None:
        # configs give epsilon in kW; the tracer works in per-unit
        req = replace(req, epsilon=req.epsilon / case.kw_per_unit)
    try:
        boundary = trace_boundary(case, req)
        status = "ok"
    except DegenerateBoundaryError as exc:
        boundary, status = exc.boundary, "degenerate"
    except (BoundarySolveError, ProblemError, PowerFlowError) as exc:
        return "solver_error", None, None, str(exc)
    report = None
    if oracle and status == "ok":
        report = sample_feasible(case, req.scenario, oracle["n"], oracle.get("seed", 0), req.ref_bus, req.ref_phase)
        verify_boundary(boundary, report)
        if not report.passed:
            status = "oracle_failed"
    msg = "" if status == "ok" else status.replace("_", " ")
    return status, boundary, report, msg


def _fmt(x, nd=2) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.{nd}f}"


def _reference_cell(cell: Cell, results: dict):
    """Cell of ``compare_to`` with the same phase and VUF limit, falling back to
    that study's only VUF setting on the phase, then to its only cell (a
    balanced reference traced on one phase)."""
    same = results.get((cell.compare_to, cell.phase, cell.vuf_label))
    if same is not None:
        return same
    others = [v for (s, ph, _), v in results.items() if s == cell.compare_to and ph == cell.phase]
    if len(others) == 1:
        return others[0]
    every = [v for (s, _, _), v in results.items() if s == cell.compare_to]
    return every[0] if len(every) == 1 else None


def _summary_rows(cells, results):
    rows = []
    for cell in cells:
        status, boundary, report, _ = results[(cell.study, cell.phase, cell.vuf_label)]
        area = boundary.area if boundary is not None else None
        ref_area = pct = red = None
        if cell.compare_to:
            ref = _reference_cell(cell, results)
            if ref is not None and ref[1] is not None and area is not None:
                ref_area = ref[1].area
                if ref_area > 0:
                    pct = 100.0 * area / ref_area
                    red = area_reduction(ref_area, area)
        base = boundary.base_point if boundary is not None else (None, None)
        rows.append(
            {
                "study": cell.study,
                "phase": cell.phase,
                "vuf_limit": cell.vuf_label,
                "coordination": cell.request.scenario.coordination,
                "area_kVAr2": _fmt(area),
                "base_P_kW": _fmt(base[0]),
                "base_Q_kVAr": _fmt(base[1]),
                "feasible_points": "" if boundary is None else str(len(boundary.polygon())),
                "infeasible_intervals": "" if boundary is None else str(len(boundary.infeasible_intervals)),
                "compare_to": cell.compare_to or "",
                "reference_area_kVAr2": _fmt(ref_area),
                "area_percent": _fmt(pct),
                "reduction_percent": _fmt(red),
                "oracle_max_outside_kVA": _fmt(report.max_outside_distance, 4) if report else "",
                "oracle_tolerance_kVA": _fmt(report.tolerance, 4) if report else "",
                "status": status,
            }
        )
    return rows


def format_table(rows) -> str:
    cols = ["study", "phase", "vuf_limit", "coordination", "area_kVAr2", "area_percent", "reduction_percent", "status"]
    heads = ["study", "phase", "VUF %", "coordination", "area kVAr2", "% of ref", "reduction %", "status"]
    table = [heads] + [[r[c] for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    lines = []
    for n, row in enumerate(table):
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


EXIT_FOR_STATUS = {
    "case_error": EXIT_CASE,
    "solver_error": EXIT_SOLVER,
    "oracle_failed": EXIT_SOLVER,
    "degenerate": EXIT_DEGENERATE,
}


def cmd_run(args) -> int:
    try:
        oracle = parse_oracle(args.oracle) if args.oracle else None
        cells, out, oracle = load_config(args.config, args.case, args.out, oracle)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CaseError as exc:
        print(f"case error: {exc}", file=sys.stderr)
        return EXIT_CASE

    tasks = [(c, oracle) for c in cells]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_run_cell, tasks))
    else:
        outcomes = [_run_cell(t) for t in tasks]

    # single writer: every file is written here, in cell order
    results = {}
    first_fail = None
    for cell, (status, boundary, report, msg) in zip(cells, outcomes):
        results[(cell.study, cell.phase, cell.vuf_label)] = (status, boundary, report, msg)
        if boundary is not None:
            d = out / cell.study / cell.phase / cell.vuf_label
            d.mkdir(parents=True, exist_ok=True)
            write_boundary_csv(boundary, d / "boundary.csv")
            write_boundary_json(boundary, d / "boundary.json")
            if report is not None:
                write_report_json(report, d / "oracle.json")
                write_samples_csv(report, d / "samples.csv")
        failed = status not in ("ok",) and not (status == "degenerate" and args.allow_degenerate)
        if failed and first_fail is None:
            first_fail = (cell, status, msg)

    rows = _summary_rows(cells, results)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    (out / "summary.csv").write_text(buf.getvalue())
    table = format_table(rows)
    (out / "summary.txt").write_text(table)
    print(table, end="")
    if first_fail is not None:
        cell, status, msg = first_fail
        print(f"failed cell {cell.key}: {msg}", file=sys.stderr)
        return EXIT_FOR_STATUS.get(status, EXIT_SOLVER)
    return EXIT_OK


# ---------------------------------------------------------------------------
# SVG


PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _nice_ticks(lo, hi, n=6):
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * span:
        ticks.append(round(t, 10))
        t += step
    return ticks


def render_svg(boundaries, labels, width=640, height=480) -> str:
    """Overlay boundary polygons with base-point crosses; gap edges dashed."""
    ml, mr, mt, mb = 70, 20, 20, 55
    pts = []
    for b in boundaries:
        pts.extend(map(tuple, b.polygon()))
        pts.append(tuple(b.base_point))
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    padx = 0.05 * (x1 - x0 or 1.0)
    pady = 0.05 * (y1 - y0 or 1.0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _nice_ticks(x0, x1):
        x = sx(t)
        out.append(f'<line x1="{x:.2f}" y1="{mt + ph}" x2="{x:.2f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<line x1="{x:.2f}" y1="{mt}" x2="{x:.2f}" y2="{mt + ph}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{x:.2f}" y="{mt + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _nice_ticks(y0, y1):
        y = sy(t)
        out.append(f'<line x1="{ml - 5}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{ml + pw}" y2="{y:.2f}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{ml + pw / 2:.2f}" y="{height - 12}" text-anchor="middle">P, kW</text>')
    out.append(
        f'<text x="16" y="{mt + ph / 2:.2f}" text-anchor="middle" transform="rotate(-90 16 {mt + ph / 2:.2f})">Q, kVAr</text>'
    )

    for i, (b, label) in enumerate(zip(boundaries, labels)):
        color = PALETTE[i % len(PALETTE)]
        poly = b.polygon()
        n = len(poly)
        gaps = {tuple(g) for g in b.gaps}
        if n >= 2:
            solid = []
            for a in range(n):
                c = (a + 1) % n
                if n == 2 and a == 1:
                    break
                seg = f"M{sx(poly[a][0]):.2f},{sy(poly[a][1]):.2f} L{sx(poly[c][0]):.2f},{sy(poly[c][1]):.2f}"
                if (a, c) in gaps:
                    out.append(f'<path d="{seg}" fill="none" stroke="{color}" stroke-width="1.5" stroke-dasharray="5,4"/>')
                else:
                    solid.append(seg)
            if solid:
                out.append(f'<path d="{" ".join(solid)}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        bx, by = sx(b.base_point[0]), sy(b.base_point[1])
        out.append(
            f'<path d="M{bx - 5:.2f},{by - 5:.2f} L{bx + 5:.2f},{by + 5:.2f} M{bx - 5:.2f},{by + 5:.2f} L{bx + 5:.2f},{by - 5:.2f}" stroke="{color}" stroke-width="2"/>'
        )
        ly = mt + 16 + 16 * i
        out.append(f'<line x1="{ml + 10}" y1="{ly - 4}" x2="{ml + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        text = label.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        out.append(f'<text x="{ml + 36}" y="{ly}">{text}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _default_label(path: Path, b: FlexBoundary) -> str:
    parts = path.resolve().parts
    if path.name == "boundary.json" and len(parts) >= 4:
        return "/".join(parts[-4:-1])
    return path.stem


def cmd_plot(args) -> int:
    boundaries, labels = [], []
    if args.labels and len(args.labels) != len(args.boundaries):
        print("config error: --label must be given once per boundary file", file=sys.stderr)
        return EXIT_CONFIG
    for i, f in enumerate(args.boundaries):
        try:
            b = read_boundary_json(f)
        except FlexMapError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        boundaries.append(b)
        labels.append(args.labels[i] if args.labels else _default_label(Path(f), b))
    Path(args.output).write_text(render_svg(boundaries, labels))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pqflex", description="P-Q flexibility areas of unbalanced LV networks")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the studies of a JSON config")
    run.add_argument("--config", required=True, help="study config (JSON)")
    run.add_argument("--case", help="case file or bundled case name; overrides the config's top-level case")
    run.add_argument("--out", help="output directory (default from config)")
    run.add_argument("--jobs", type=int, default=1, help="parallel cells")
    run.add_argument("--allow-degenerate", action="store_true", help="do not fail on degenerate boundaries")
    run.add_argument("--oracle", help="validate each cell by sampling, e.g. n=10000,seed=1")
    run.set_defaults(func=cmd_run)
    plot = sub.add_parser("plot", help="overlay boundary files in an SVG")
    plot.add_argument("boundaries", nargs="+", help="boundary.json files")
    plot.add_argument("-o", "--output", required=True, help="output SVG path")
    plot.add_argument("--label", dest="labels", action="append", help="legend entry (repeat per file)")
    plot.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("config error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
