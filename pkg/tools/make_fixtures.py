"""Regenerate the bundled case files in ``src/pqflex/data``.

Line impedances are built from positive- and zero-sequence data per km, the
form in which LV cable codes are usually published. The resulting 3x3 phase
matrix has equal self and mutual terms, so unbalanced currents couple the
phases through the (larger) zero-sequence impedance.

    python tools/make_fixtures.py            # writes all fixtures
    python tools/make_fixtures.py --check    # verify files are up to date
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "pqflex" / "data"

BASE_MVA = 0.1
BASE_KV = 0.4 / math.sqrt(3)
PF_5BUS = 0.91


def sequence_impedance(r1, x1, r0, x0) -> np.ndarray:
    """3x3 phase impedance (ohm/km) of a transposed line from sequence data."""
    z1, z0 = complex(r1, x1), complex(r0, x0)
    zs, zm = (z0 + 2 * z1) / 3, (z0 - z1) / 3
    return np.full((3, 3), zm) + np.eye(3) * (zs - zm)


# 120 mm2 aluminium 4-core LV cable; R0/X0 scaled from R1/X1 by Z0_RATIO
R1_CABLE, X1_CABLE = 0.253, 0.071
# 35 mm2 aluminium service/lateral cable
R1_SERVICE, X1_SERVICE = 0.868, 0.083


def cable(ratio, r1=R1_CABLE, x1=X1_CABLE) -> np.ndarray:
    return sequence_impedance(r1, x1, ratio * r1, ratio * x1)


def line_entry(frm, to, length_km, zcode, s_max_kva=None, line_id=None):
    y = np.linalg.inv(zcode * length_km)
    y = (y + y.T) / 2
    entry = {"from": frm, "to": to}
    if line_id:
        entry["id"] = line_id
    entry["units"] = "siemens"
    entry["y_series"] = [[[float(f"{v.real:.12g}"), float(f"{v.imag:.12g}")] for v in row] for row in y]
    entry["s_max_kva"] = [s_max_kva] * 3 if s_max_kva is not None else None
    return entry


def q_from_pf(p, pf):
    return p * math.tan(math.acos(pf))


# ---------------------------------------------------------------------------
# 5-bus system

FIVE_BUS_LINES = [("1", "2", 0.200), ("2", "3", 0.150), ("3", "4", 0.100), ("3", "5", 0.100)]
FIVE_BUS_VMAX = 1.10
# calibration knobs, fitted by tools/calibrate_case5.py (see its docstring)
FIVE_BUS_CALIBRATION = {"length_scale": 1.575, "z0_ratio": 5.6, "v_min": 0.92}


def five_bus(unbalanced_load: bool, single_phase_units: bool, calibration: dict | None = None) -> dict:
    cal = dict(FIVE_BUS_CALIBRATION, **(calibration or {}))
    z = cable(cal["z0_ratio"])
    buses = [
        {"id": str(i), "phases": ["a", "b", "c"], "v_min": cal["v_min"], "v_max": FIVE_BUS_VMAX, "is_reference": i == 1}
        for i in range(1, 6)
    ]
    lines = [
        line_entry(f, t, round(length * cal["length_scale"], 6), z, s_max_kva=100.0, line_id=f"L{f}{t}")
        for f, t, length in FIVE_BUS_LINES
    ]
    loads = []
    for bus in ("2", "3", "4", "5"):
        p = {"a": 7.0, "b": 4.5, "c": 3.5} if (unbalanced_load and bus == "2") else {"a": 5.0, "b": 5.0, "c": 5.0}
        loads.append(
            {
                "bus": bus,
                "p_kw": p,
                "q_kvar": {ph: round(q_from_pf(v, PF_5BUS), 6) for ph, v in p.items()},
            }
        )
    if single_phase_units:
        flex = [
            {
                "id": f"F{ph}",
                "bus": "3",
                "phases": [ph],
                "p_min_kw": -8.0,
                "p_max_kw": 8.0,
                "q_min_kvar": -8.0,
                "q_max_kvar": 8.0,
                "balanced": False,
            }
            for ph in ("a", "b", "c")
        ]
    else:
        flex = [
            {
                "id": "F1",
                "bus": "3",
                "phases": ["a", "b", "c"],
                "p_min_kw": -8.0,
                "p_max_kw": 8.0,
                "q_min_kvar": -8.0,
                "q_max_kvar": 8.0,
                "balanced": True,
            }
        ]
    net = "unbalanced" if unbalanced_load else "balanced"
    kind = "three single-phase flexible units" if single_phase_units else "one balanced three-phase flexible unit"
    return {
        "name": f"5-bus {net} network, {kind}",
        "base_mva": BASE_MVA,
        "base_kv": BASE_KV,
        "buses": buses,
        "lines": lines,
        "loads": loads,
        "generators": [],
        "flex_units": flex,
        "vu_monitored": ["1", "2", "3", "4", "5"],
    }


# ---------------------------------------------------------------------------
# 221-bus system (synthetic radial LV feeder with the published load totals)

N221 = 221
SEED_221 = 20210712
# per-phase totals, kW and kVAr
LOAD_P_221 = {"a": 37.00, "b": 24.00, "c": 21.00}
LOAD_Q_221 = {"a": 31.41, "b": 17.06, "c": 16.08}
N_CUSTOMERS_221 = 60
TARGET_VUF_221 = 0.78
N_MONITORED_221 = 7
R1_TRUNK, X1_TRUNK = 0.164, 0.069  # 185 mm2 Al
Z0_RATIO_221 = 4.0
V_LIMITS_221 = (0.94, 1.10)
# trunk length (buses) per feeder; feeder 0 carries the extra phase-a load
FEEDERS_221 = (40, 34, 22, 14)
# phase draw probabilities per feeder
PHASE_MIX_221 = ({"a": 0.62, "b": 0.2, "c": 0.18}, {"a": 0.3, "b": 0.38, "c": 0.32}, {"a": 0.34, "b": 0.3, "c": 0.36}, {"a": 0.3, "b": 0.36, "c": 0.34})
# unit id -> (feeder, phase, relative position along the trunk)
UNITS_221 = {
    "F1": (1, "b", 0.9),
    "F2": (2, "c", 0.9),
    "F3": (3, "b", 0.8),
    "F4": (1, "c", 0.5),
    "F5": (0, "a", 0.95),
    "F6": (0, "b", 0.85),
    "F7": (0, "c", 0.75),
    "F8": (0, "a", 0.65),
    "F9": (0, "b", 0.55),
    "F10": (0, "c", 0.45),
    "F11": (0, "a", 0.35),
    "F12": (2, "a", 0.6),
}


def _topology_221(rng):
    """Parent table and line kinds: trunks from bus 1, then service laterals."""
    parent, kind, length, feeder_of = {}, {}, {}, {"1": None}
    trunks = []
    nxt = 2
    for f, n in enumerate(FEEDERS_221):
        prev = "1"
        trunk = []
        for _ in range(n):
            b = str(nxt)
            nxt += 1
            parent[b], kind[b], length[b] = prev, "trunk", float(rng.uniform(0.018, 0.035))
            feeder_of[b] = f
            trunk.append(b)
            prev = b
        trunks.append(trunk)
    trunk_buses = [b for t in trunks for b in t]
    while nxt <= N221:
        b = str(nxt)
        nxt += 1
        host = trunk_buses[int(rng.integers(len(trunk_buses)))]
        parent[b], kind[b], length[b] = host, "service", float(rng.uniform(0.01, 0.03))
        feeder_of[b] = feeder_of[host]
    return parent, kind, length, feeder_of, trunks


def _build_221(length_scale: float, monitored=None) -> dict:
    rng = np.random.default_rng(SEED_221)
    parent, kind, length, feeder_of, trunks = _topology_221(rng)
    lo, hi = V_LIMITS_221
    ids = [str(i) for i in range(1, N221 + 1)]
    buses = [{"id": b, "phases": ["a", "b", "c"], "v_min": lo, "v_max": hi, "is_reference": b == "1"} for b in ids]
    z_trunk = cable(Z0_RATIO_221, R1_TRUNK, X1_TRUNK)
    z_serv = cable(Z0_RATIO_221, R1_SERVICE, X1_SERVICE)
    lines = []
    for b in ids[1:]:
        trunk = kind[b] == "trunk"
        lines.append(
            line_entry(
                parent[b],
                b,
                round(length[b] * length_scale, 6),
                z_trunk if trunk else z_serv,
                s_max_kva=120.0 if trunk else 30.0,
                line_id=f"L{b}",
            )
        )

    # single-phase customers on service buses, sizes rescaled to the phase totals
    service = [b for b in ids[1:] if kind[b] == "service"]
    service = sorted(rng.choice(service, size=N_CUSTOMERS_221, replace=False).tolist(), key=int)
    phases = [str(rng.choice(list("abc"), p=list(PHASE_MIX_221[feeder_of[b]].values()))) for b in service]
    weight = rng.uniform(0.3, 1.0, size=len(service))
    loads = []
    for ph in "abc":
        idx = [i for i, p in enumerate(phases) if p == ph]
        w = weight[idx] / weight[idx].sum()
        for i, share in zip(idx, w):
            loads.append(
                {
                    "bus": service[i],
                    "p_kw": {ph: round(LOAD_P_221[ph] * share, 6)},
                    "q_kvar": {ph: round(LOAD_Q_221[ph] * share, 6)},
                }
            )
    loads.sort(key=lambda ld: int(ld["bus"]))
    # fix rounding so the totals are exact
    for ph in "abc":
        for key, total in (("p_kw", LOAD_P_221), ("q_kvar", LOAD_Q_221)):
            rows = [ld for ld in loads if ph in ld[key]]
            rows[-1][key][ph] = round(rows[-1][key][ph] + total[ph] - sum(r[key][ph] for r in rows), 6)

    flex = []
    for uid, (f, ph, pos) in UNITS_221.items():
        trunk = trunks[f]
        flex.append(
            {
                "id": uid,
                "bus": trunk[min(len(trunk) - 1, int(pos * len(trunk)))],
                "phases": [ph],
                "p_min_kw": -5.0,
                "p_max_kw": 5.0,
                "q_min_kvar": -5.0,
                "q_max_kvar": 5.0,
                "balanced": False,
            }
        )
    return {
        "name": "221-bus radial LV network, twelve single-phase flexible units",
        "base_mva": BASE_MVA,
        "base_kv": BASE_KV,
        "buses": buses,
        "lines": lines,
        "loads": loads,
        "generators": [],
        "flex_units": flex,
        "vu_monitored": list(monitored or []),
    }


def _base_vuf_221(doc):
    from pqflex.netmodel import case_from_dict, to_per_unit
    from pqflex.powerflow import Setpoints, compile_network, solve_newton

    case = to_per_unit(case_from_dict(doc))
    state = solve_newton(case, Setpoints.zero(compile_network(case)))
    return {b["id"]: state.vuf(b["id"]) for b in doc["buses"]}


def bus221() -> dict:
    """Length scale tuned so the largest base-case VUF hits the target; the
    most unbalanced buses are monitored."""
    from scipy.optimize import brentq

    def gap(scale):
        return max(_base_vuf_221(_build_221(scale)).values()) - TARGET_VUF_221

    scale = round(brentq(gap, 0.1, 1.5, xtol=1e-6), 5)
    vufs = _base_vuf_221(_build_221(scale))
    top = sorted(vufs, key=lambda b: (-vufs[b], int(b)))[:N_MONITORED_221]
    return _build_221(scale, sorted(top, key=int))


FIXTURES = {
    "case5_balanced": lambda: five_bus(False, False),
    "case5_unbalanced": lambda: five_bus(True, False),
    "case5_balanced_1ph": lambda: five_bus(False, True),
    "case5_unbalanced_1ph": lambda: five_bus(True, True),
    "case221": bus221,
}


def render(doc: dict) -> str:
    return json.dumps(doc, indent=1) + "\n"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--check", action="store_true", help="fail if any bundled fixture differs")
    ap.add_argument("names", nargs="*", help="subset of fixtures to write")
    args = ap.parse_args(argv)
    stale = []
    for name, build in FIXTURES.items():
        if args.names and name not in args.names:
            continue
        text = render(build())
        path = DATA / f"{name}.json"
        if args.check:
            if not path.exists() or path.read_text() != text:
                stale.append(name)
        else:
            path.write_text(text)
            print(f"wrote {path}")
    if stale:
        print("stale fixtures: " + ", ".join(stale))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
