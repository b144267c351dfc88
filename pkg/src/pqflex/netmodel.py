"""Three-phase network data model, JSON case format and per-unit conversion.

Cases on disk are written in physical units (kW, kVAr, kVA, siemens). In
memory a :class:`NetworkCase` carries a ``per_unit`` flag; every solver in
the package expects the per-unit form returned by :func:`load_case`.

Per-unit bases
--------------
``base_mva`` is the per-phase base power and ``base_kv`` the
phase-to-neutral base voltage, so that ``Z_base = base_kv**2 / base_mva``
and a per-phase power in kW maps to ``p / (1000 * base_mva)``.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import jsonschema
import numpy as np

PHASES = ("a", "b", "c")
PHASE_INDEX = {ph: i for i, ph in enumerate(PHASES)}


class CaseError(Exception):
    """Base class for case loading problems."""


class CaseFormatError(CaseError):
    """The file is not valid JSON or does not follow the case schema."""


class CaseValidationError(CaseError):
    """The case parsed but violates a structural invariant."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(self.violations[0] if self.violations else "invalid case")


@dataclass(frozen=True, eq=False)
class Bus:
    id: str
    phases: tuple[str, ...] = PHASES
    v_min: float = 0.94
    v_max: float = 1.10
    is_reference: bool = False


@dataclass(frozen=True, eq=False)
class Line:
    from_bus: str
    to_bus: str
    y_series: np.ndarray
    s_max: tuple[float, float, float] = (np.inf, np.inf, np.inf)
    id: str = ""

    def __post_init__(self):
        y = np.array(self.y_series, dtype=complex)
        if y.shape != (3, 3):
            raise ValueError(f"line {self.name}: y_series must be 3x3, got {y.shape}")
        y.setflags(write=False)
        object.__setattr__(self, "y_series", y)
        object.__setattr__(self, "s_max", tuple(float(s) for s in self.s_max))

    @property
    def name(self) -> str:
        return self.id or f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True, eq=False)
class Load:
    bus: str
    p: Mapping[str, float]
    q: Mapping[str, float]

    @property
    def phases(self) -> tuple[str, ...]:
        return tuple(ph for ph in PHASES if ph in self.p or ph in self.q)


@dataclass(frozen=True, eq=False)
class Generator:
    bus: str
    p_min: Mapping[str, float]
    p_max: Mapping[str, float]
    q_min: Mapping[str, float]
    q_max: Mapping[str, float]
    id: str = ""

    @property
    def phases(self) -> tuple[str, ...]:
        return tuple(ph for ph in PHASES if ph in self.p_max)


@dataclass(frozen=True, eq=False)
class FlexUnit:
    id: str
    bus: str
    phases: tuple[str, ...]
    p_min: Mapping[str, float]
    p_max: Mapping[str, float]
    q_min: Mapping[str, float]
    q_max: Mapping[str, float]
    balanced: bool = False


@dataclass(frozen=True, eq=False)
class NetworkCase:
    """Immutable three-phase network. Compare cases with :func:`cases_close`."""

    base_mva: float
    base_kv: float
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...] = ()
    loads: tuple[Load, ...] = ()
    generators: tuple[Generator, ...] = ()
    flex_units: tuple[FlexUnit, ...] = ()
    vu_monitored: tuple[str, ...] = ()
    per_unit: bool = False
    name: str = ""
    _bus_map: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        for attr in ("buses", "lines", "loads", "generators", "flex_units", "vu_monitored"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        object.__setattr__(self, "_bus_map", {b.id: b for b in self.buses})

    def bus(self, bus_id: str) -> Bus:
        return self._bus_map[bus_id]

    def has_bus(self, bus_id: str) -> bool:
        return bus_id in self._bus_map

    @property
    def reference_bus(self) -> Bus:
        refs = [b for b in self.buses if b.is_reference]
        if len(refs) != 1:
            raise CaseValidationError(["no reference bus" if not refs else "multiple reference buses"])
        return refs[0]

    @property
    def z_base(self) -> float:
        return self.base_kv**2 / self.base_mva

    @property
    def kw_per_unit(self) -> float:
        """kW (or kVAr, kVA) represented by 1 p.u. of per-phase power."""
        return 1000.0 * self.base_mva


# ---------------------------------------------------------------------------
# per-unit conversion


def _scale_map(m: Mapping[str, float], factor: float) -> dict[str, float]:
    return {ph: v * factor for ph, v in m.items()}


def _rescale(case: NetworkCase, power: float, admittance: float, per_unit: bool) -> NetworkCase:
    lines = tuple(
        replace(ln, y_series=ln.y_series * admittance, s_max=tuple(s * power for s in ln.s_max))
        for ln in case.lines
    )
    loads = tuple(replace(ld, p=_scale_map(ld.p, power), q=_scale_map(ld.q, power)) for ld in case.loads)
    gens = tuple(
        replace(
            g,
            p_min=_scale_map(g.p_min, power),
            p_max=_scale_map(g.p_max, power),
            q_min=_scale_map(g.q_min, power),
            q_max=_scale_map(g.q_max, power),
        )
        for g in case.generators
    )
    flex = tuple(
        replace(
            u,
            p_min=_scale_map(u.p_min, power),
            p_max=_scale_map(u.p_max, power),
            q_min=_scale_map(u.q_min, power),
            q_max=_scale_map(u.q_max, power),
        )
        for u in case.flex_units
    )
    return replace(case, lines=lines, loads=loads, generators=gens, flex_units=flex, per_unit=per_unit)


def _check_bases(case: NetworkCase) -> None:
    if not (case.base_mva > 0 and case.base_kv > 0):
        raise ValueError(f"per-unit bases must be positive (base_mva={case.base_mva}, base_kv={case.base_kv})")


def to_per_unit(case: NetworkCase) -> NetworkCase:
    """Convert a case in kW/kVAr/kVA/siemens to per-unit."""
    _check_bases(case)
    if case.per_unit:
        raise ValueError("case is already in per-unit")
    return _rescale(case, 1.0 / case.kw_per_unit, case.z_base, per_unit=True)


def from_per_unit(case: NetworkCase) -> NetworkCase:
    """Inverse of :func:`to_per_unit`."""
    _check_bases(case)
    if not case.per_unit:
        raise ValueError("case is already in physical units")
    return _rescale(case, case.kw_per_unit, 1.0 / case.z_base, per_unit=False)


def _maps_close(a, b, rtol, atol=0.0):
    if set(a) != set(b):
        return False
    return all(np.isclose(a[k], b[k], rtol=rtol, atol=atol) for k in a)


def cases_close(a: NetworkCase, b: NetworkCase, rtol: float = 1e-12) -> bool:
    """Field-by-field comparison with a relative tolerance on numeric data."""
    if (a.per_unit, a.name, a.vu_monitored) != (b.per_unit, b.name, b.vu_monitored):
        return False
    if not (np.isclose(a.base_mva, b.base_mva, rtol=rtol) and np.isclose(a.base_kv, b.base_kv, rtol=rtol)):
        return False
    sizes = [(len(getattr(a, f)), len(getattr(b, f))) for f in ("buses", "lines", "loads", "generators", "flex_units")]
    if any(x != y for x, y in sizes):
        return False
    for ba, bb in zip(a.buses, b.buses):
        if (ba.id, ba.phases, ba.v_min, ba.v_max, ba.is_reference) != (bb.id, bb.phases, bb.v_min, bb.v_max, bb.is_reference):
            return False
    for la, lb in zip(a.lines, b.lines):
        if (la.from_bus, la.to_bus, la.id) != (lb.from_bus, lb.to_bus, lb.id):
            return False
        if not np.allclose(la.y_series, lb.y_series, rtol=rtol, atol=0.0):
            return False
        if not np.allclose(la.s_max, lb.s_max, rtol=rtol, atol=0.0):
            return False
    for da, db in zip(a.loads, b.loads):
        if da.bus != db.bus or not (_maps_close(da.p, db.p, rtol) and _maps_close(da.q, db.q, rtol)):
            return False
    for ga, gb in zip(a.generators, b.generators):
        if ga.bus != gb.bus or not all(
            _maps_close(getattr(ga, f), getattr(gb, f), rtol) for f in ("p_min", "p_max", "q_min", "q_max")
        ):
            return False
    for ua, ub in zip(a.flex_units, b.flex_units):
        if (ua.id, ua.bus, ua.phases, ua.balanced) != (ub.id, ub.bus, ub.phases, ub.balanced):
            return False
        if not all(_maps_close(getattr(ua, f), getattr(ub, f), rtol) for f in ("p_min", "p_max", "q_min", "q_max")):
            return False
    return True


# ---------------------------------------------------------------------------
# validation


def _reachable(case: NetworkCase, start: str) -> set[str]:
    adj: dict[str, list[str]] = {b.id: [] for b in case.buses}
    for ln in case.lines:
        if ln.from_bus in adj and ln.to_bus in adj:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
    seen = {start}
    queue = deque([start])
    while queue:
        for nxt in adj[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def validate(case: NetworkCase) -> list[str]:
    """Return one message per violated invariant; empty when the case is valid."""
    out: list[str] = []
    bus_ids = [b.id for b in case.buses]
    known = set(bus_ids)
    refs = [b for b in case.buses if b.is_reference]
    if not refs:
        out.append("no reference bus")
    elif len(refs) > 1:
        out.append("multiple reference buses: " + ", ".join(b.id for b in refs))
    if len(known) != len(bus_ids):
        dup = sorted({i for i in bus_ids if bus_ids.count(i) > 1})
        out.append("duplicate bus id(s): " + ", ".join(dup))
    if not (case.base_mva > 0 and case.base_kv > 0):
        out.append("per-unit bases must be positive")

    for b in case.buses:
        if not b.phases or not set(b.phases) <= set(PHASES) or len(set(b.phases)) != len(b.phases):
            out.append(f"bus {b.id}: phases must be a non-empty subset of a, b, c")
        if not 0 < b.v_min < b.v_max:
            out.append(f"bus {b.id}: voltage bounds require 0 < v_min < v_max")

    for ln in case.lines:
        for end in (ln.from_bus, ln.to_bus):
            if end not in known:
                out.append(f"line {ln.name}: unknown bus {end}")
        if ln.from_bus == ln.to_bus:
            out.append(f"line {ln.name}: from_bus equals to_bus")
        if not np.allclose(ln.y_series, ln.y_series.T, rtol=1e-9, atol=1e-12 * max(1.0, np.abs(ln.y_series).max())):
            out.append(f"line {ln.name}: y_series is not symmetric")
        if any(s < 0 or np.isnan(s) for s in ln.s_max):
            out.append(f"line {ln.name}: s_max must be non-negative")
        if ln.from_bus in known and ln.to_bus in known:
            common = set(case.bus(ln.from_bus).phases) & set(case.bus(ln.to_bus).phases)
            absent = [PHASE_INDEX[ph] for ph in PHASES if ph not in common]
            if absent and np.abs(ln.y_series[absent, :]).max() + np.abs(ln.y_series[:, absent]).max() > 0:
                out.append(f"line {ln.name}: non-zero admittance on a phase absent at a terminal")

    for ld in case.loads:
        if ld.bus not in known:
            out.append(f"load at {ld.bus}: unknown bus {ld.bus}")
        elif not set(ld.phases) <= set(case.bus(ld.bus).phases):
            out.append(f"load at {ld.bus}: phase not present at bus")

    for g in case.generators:
        label = g.id or g.bus
        if g.bus not in known:
            out.append(f"generator {label}: unknown bus {g.bus}")
        elif not set(g.phases) <= set(case.bus(g.bus).phases):
            out.append(f"generator {label}: phase not present at bus")
        for ph in g.phases:
            if g.p_min.get(ph, 0.0) > g.p_max.get(ph, 0.0) or g.q_min.get(ph, 0.0) > g.q_max.get(ph, 0.0):
                out.append(f"generator {label}: lower bound above upper bound on phase {ph}")

    unit_ids = [u.id for u in case.flex_units]
    if len(set(unit_ids)) != len(unit_ids):
        out.append("duplicate flex unit id(s)")
    for u in case.flex_units:
        if u.bus not in known:
            out.append(f"flex unit {u.id}: unknown bus {u.bus}")
        elif not u.phases or not set(u.phases) <= set(case.bus(u.bus).phases):
            out.append(f"flex unit {u.id}: phases must be a non-empty subset of the bus phases")
        for ph in u.phases:
            bounds = [m.get(ph) for m in (u.p_min, u.p_max, u.q_min, u.q_max)]
            if any(v is None for v in bounds):
                out.append(f"flex unit {u.id}: missing bounds on phase {ph}")
                continue
            pmin, pmax, qmin, qmax = bounds
            if not (pmin <= 0.0 <= pmax and qmin <= 0.0 <= qmax):
                out.append(f"flex unit {u.id}: zero output infeasible on phase {ph}")
        if u.balanced and len(u.phases) > 1:
            first = u.phases[0]
            for ph in u.phases[1:]:
                if any(m.get(ph) != m.get(first) for m in (u.p_min, u.p_max, u.q_min, u.q_max)):
                    out.append(f"flex unit {u.id}: balanced unit needs identical bounds on all phases")
                    break

    for bid in case.vu_monitored:
        if bid not in known:
            out.append(f"vu_monitored: unknown bus {bid}")
        elif set(case.bus(bid).phases) != set(PHASES):
            out.append(f"vu_monitored: bus {bid} does not have all three phases")

    if len(refs) == 1 and len(known) == len(bus_ids):
        reach = _reachable(case, refs[0].id)
        for bid in bus_ids:
            if bid not in reach:
                out.append(f"bus {bid}: disconnected from the reference bus")
    return out


# ---------------------------------------------------------------------------
# JSON case format

_PHASE_MAP = {
    "type": "object",
    "properties": {ph: {"type": "number"} for ph in PHASES},
    "additionalProperties": False,
}
_PER_PHASE = {"oneOf": [{"type": "number"}, _PHASE_MAP]}
_PHASE_LIST = {"type": "array", "items": {"enum": list(PHASES)}, "uniqueItems": True}
_BUS_ID = {"type": ["string", "integer"]}

CASE_SCHEMA = {
    "type": "object",
    "required": ["base_mva", "base_kv", "buses"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "base_mva": {"type": "number"},
        "base_kv": {"type": "number"},
        "buses": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id"],
                "additionalProperties": False,
                "properties": {
                    "id": _BUS_ID,
                    "phases": _PHASE_LIST,
                    "v_min": {"type": "number"},
                    "v_max": {"type": "number"},
                    "is_reference": {"type": "boolean"},
                },
            },
        },
        "lines": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "y_series"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "from": _BUS_ID,
                    "to": _BUS_ID,
                    "units": {"enum": ["siemens", "pu"]},
                    "y_series": {
                        "type": "array",
                        "minItems": 3,
                        "maxItems": 3,
                        "items": {
                            "type": "array",
                            "minItems": 3,
                            "maxItems": 3,
                            "items": {
                                "type": "array",
                                "minItems": 2,
                                "maxItems": 2,
                                "items": {"type": "number"},
                            },
                        },
                    },
                    "s_max_kva": {
                        "type": ["array", "null"],
                        "minItems": 3,
                        "maxItems": 3,
                        "items": {"type": ["number", "null"]},
                    },
                },
            },
        },
        "loads": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["bus"],
                "additionalProperties": False,
                "properties": {"bus": _BUS_ID, "p_kw": _PHASE_MAP, "q_kvar": _PHASE_MAP},
            },
        },
        "generators": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["bus", "phases"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "bus": _BUS_ID,
                    "phases": _PHASE_LIST,
                    "p_min_kw": _PER_PHASE,
                    "p_max_kw": _PER_PHASE,
                    "q_min_kvar": _PER_PHASE,
                    "q_max_kvar": _PER_PHASE,
                },
            },
        },
        "flex_units": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "bus", "phases"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "bus": _BUS_ID,
                    "phases": _PHASE_LIST,
                    "p_min_kw": _PER_PHASE,
                    "p_max_kw": _PER_PHASE,
                    "q_min_kvar": _PER_PHASE,
                    "q_max_kvar": _PER_PHASE,
                    "balanced": {"type": "boolean"},
                },
            },
        },
        "vu_monitored": {"type": "array", "items": _BUS_ID},
    },
}


def _per_phase(value, phases) -> dict[str, float]:
    if value is None:
        return {ph: 0.0 for ph in phases}
    if isinstance(value, Mapping):
        return {ph: float(value[ph]) for ph in phases if ph in value}
    return {ph: float(value) for ph in phases}


def case_from_dict(doc: dict) -> NetworkCase:
    """Build a physical-unit case from a parsed JSON document (schema-checked)."""
    try:
        jsonschema.validate(doc, CASE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CaseFormatError(f"{where}: {exc.message}") from None

    base_mva = float(doc["base_mva"])
    base_kv = float(doc["base_kv"])
    z_base = base_kv**2 / base_mva if base_mva > 0 and base_kv > 0 else None

    buses = tuple(
        Bus(
            id=str(b["id"]),
            phases=tuple(ph for ph in PHASES if ph in b.get("phases", PHASES)),
            v_min=float(b.get("v_min", 0.94)),
            v_max=float(b.get("v_max", 1.10)),
            is_reference=bool(b.get("is_reference", False)),
        )
        for b in doc["buses"]
    )

    lines = []
    for ln in doc.get("lines", []):
        y = np.array([[complex(re, im) for re, im in row] for row in ln["y_series"]])
        if ln.get("units", "siemens") == "pu":
            if z_base is None:
                raise CaseFormatError("per-unit admittances need positive bases")
            y = y / z_base
        smax = ln.get("s_max_kva") or [None] * 3
        lines.append(
            Line(
                from_bus=str(ln["from"]),
                to_bus=str(ln["to"]),
                y_series=y,
                s_max=tuple(np.inf if s is None else float(s) for s in smax),
                id=ln.get("id", ""),
            )
        )

    loads = []
    for ld in doc.get("loads", []):
        p = {ph: float(v) for ph, v in ld.get("p_kw", {}).items()}
        q = {ph: float(v) for ph, v in ld.get("q_kvar", {}).items()}
        for ph in set(p) | set(q):
            p.setdefault(ph, 0.0)
            q.setdefault(ph, 0.0)
        loads.append(Load(bus=str(ld["bus"]), p=p, q=q))

    gens = []
    for g in doc.get("generators", []):
        phases = tuple(ph for ph in PHASES if ph in g["phases"])
        gens.append(
            Generator(
                bus=str(g["bus"]),
                id=g.get("id", ""),
                p_min=_per_phase(g.get("p_min_kw"), phases),
                p_max=_per_phase(g.get("p_max_kw"), phases),
                q_min=_per_phase(g.get("q_min_kvar"), phases),
                q_max=_per_phase(g.get("q_max_kvar"), phases),
            )
        )

    flex = []
    for u in doc.get("flex_units", []):
        phases = tuple(ph for ph in PHASES if ph in u["phases"])
        flex.append(
            FlexUnit(
                id=u["id"],
                bus=str(u["bus"]),
                phases=phases,
                p_min=_per_phase(u.get("p_min_kw"), phases),
                p_max=_per_phase(u.get("p_max_kw"), phases),
                q_min=_per_phase(u.get("q_min_kvar"), phases),
                q_max=_per_phase(u.get("q_max_kvar"), phases),
                balanced=bool(u.get("balanced", False)),
            )
        )

    return NetworkCase(
        base_mva=base_mva,
        base_kv=base_kv,
        buses=buses,
        lines=tuple(lines),
        loads=tuple(loads),
        generators=tuple(gens),
        flex_units=tuple(flex),
        vu_monitored=tuple(str(b) for b in doc.get("vu_monitored", [])),
        per_unit=False,
        name=doc.get("name", ""),
    )


def _phase_dict(m: Mapping[str, float]) -> dict[str, float]:
    return {ph: float(m[ph]) for ph in PHASES if ph in m}


def case_to_dict(case: NetworkCase) -> dict:
    """Serialise a case to the JSON document layout (always physical units)."""
    if case.per_unit:
        case = from_per_unit(case)
    doc: dict = {}
    if case.name:
        doc["name"] = case.name
    doc["base_mva"] = case.base_mva
    doc["base_kv"] = case.base_kv
    doc["buses"] = [
        {"id": b.id, "phases": list(b.phases), "v_min": b.v_min, "v_max": b.v_max, "is_reference": b.is_reference}
        for b in case.buses
    ]
    doc["lines"] = []
    for ln in case.lines:
        entry = {"from": ln.from_bus, "to": ln.to_bus}
        if ln.id:
            entry["id"] = ln.id
        entry["units"] = "siemens"
        entry["y_series"] = [[[float(v.real), float(v.imag)] for v in row] for row in ln.y_series]
        entry["s_max_kva"] = [None if np.isinf(s) else float(s) for s in ln.s_max]
        doc["lines"].append(entry)
    doc["loads"] = [{"bus": ld.bus, "p_kw": _phase_dict(ld.p), "q_kvar": _phase_dict(ld.q)} for ld in case.loads]
    doc["generators"] = [
        {
            "bus": g.bus,
            "phases": list(g.phases),
            "p_min_kw": _phase_dict(g.p_min),
            "p_max_kw": _phase_dict(g.p_max),
            "q_min_kvar": _phase_dict(g.q_min),
            "q_max_kvar": _phase_dict(g.q_max),
        }
        for g in case.generators
    ]
    doc["flex_units"] = [
        {
            "id": u.id,
            "bus": u.bus,
            "phases": list(u.phases),
            "p_min_kw": _phase_dict(u.p_min),
            "p_max_kw": _phase_dict(u.p_max),
            "q_min_kvar": _phase_dict(u.q_min),
            "q_max_kvar": _phase_dict(u.q_max),
            "balanced": u.balanced,
        }
        for u in case.flex_units
    ]
    doc["vu_monitored"] = list(case.vu_monitored)
    return doc


def load_case(path) -> NetworkCase:
    """Read, validate and per-unit normalise a JSON case file.

    Raises
    ------
    CaseFormatError
        Malformed JSON or a schema violation (including unknown keys).
    CaseValidationError
        A structural invariant does not hold; the message names the first one.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"{path}: {exc}") from None
    case = case_from_dict(doc)
    problems = validate(case)
    if problems:
        raise CaseValidationError(problems)
    return to_per_unit(case)


def save_case(case: NetworkCase, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=1) + "\n")


def bundled_case_path(name: str) -> Path:
    """Path of a fixture shipped in ``pqflex/data`` (``name`` without ``.json``)."""
    path = Path(__file__).parent / "data" / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return path


def load_bundled(name: str) -> NetworkCase:
    return load_case(bundled_case_path(name))
