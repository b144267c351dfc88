import numpy as np
import pytest

from pqflex.netmodel import case_from_dict, load_bundled, to_per_unit

PU_Y = [[10.0, -100.0], [0.0, 0.0], [0.0, 0.0]]


def diag_y(y: complex):
    """3x3 JSON admittance with ``y`` on the diagonal only."""
    return [[[y.real, y.imag] if i == j else [0.0, 0.0] for j in range(3)] for i in range(3)]


def small_case(
    n_bus=2,
    y=10 - 100j,
    loads=(),
    flex=(),
    monitored=(),
    v_min=0.9,
    v_max=1.1,
    s_max=None,
    base_mva=1.0,
    base_kv=1.0,
):
    """Chain of ``n_bus`` buses with per-unit diagonal line admittances.

    ``loads`` holds ``(bus, {phase: (p_kw, q_kvar)})`` pairs and ``flex`` holds
    ``(id, bus, phases, half_width_kw, balanced)`` tuples.
    """
    doc = {
        "base_mva": base_mva,
        "base_kv": base_kv,
        "buses": [
            {"id": str(i), "phases": ["a", "b", "c"], "v_min": v_min, "v_max": v_max, "is_reference": i == 1}
            for i in range(1, n_bus + 1)
        ],
        "lines": [
            {"from": str(i), "to": str(i + 1), "units": "pu", "y_series": diag_y(y), "s_max_kva": s_max}
            for i in range(1, n_bus)
        ],
        "loads": [
            {"bus": str(b), "p_kw": {ph: v[0] for ph, v in d.items()}, "q_kvar": {ph: v[1] for ph, v in d.items()}}
            for b, d in loads
        ],
        "generators": [],
        "flex_units": [
            {
                "id": uid,
                "bus": str(b),
                "phases": list(phases),
                "p_min_kw": -w,
                "p_max_kw": w,
                "q_min_kvar": -w,
                "q_max_kvar": w,
                "balanced": bal,
            }
            for uid, b, phases, w, bal in flex
        ],
        "vu_monitored": [str(b) for b in monitored],
    }
    return to_per_unit(case_from_dict(doc))


@pytest.fixture(scope="session")
def case5():
    return load_bundled("case5_balanced")


@pytest.fixture(scope="session")
def case5_unb():
    return load_bundled("case5_unbalanced")


@pytest.fixture(scope="session")
def case5_1ph():
    return load_bundled("case5_unbalanced_1ph")


@pytest.fixture(scope="session")
def case221():
    return load_bundled("case221")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
