import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqflex.netmodel import (
    Bus,
    CaseFormatError,
    CaseValidationError,
    NetworkCase,
    bundled_case_path,
    case_from_dict,
    case_to_dict,
    cases_close,
    from_per_unit,
    load_bundled,
    load_case,
    to_per_unit,
    validate,
)

from .conftest import diag_y


def doc5():
    return json.loads(bundled_case_path("case5_balanced").read_text())


def test_bundled_5bus_shape(case5):
    assert len(case5.buses) == 5
    assert len(case5.loads) == 4
    assert len(case5.flex_units) == 1
    assert case5.per_unit
    assert case5.reference_bus.id == "1"


def test_bundled_221bus_shape(case221):
    assert len(case221.buses) == 221
    assert len(case221.flex_units) == 12
    assert len(case221.vu_monitored) == 7
    per_phase = {ph: sum(1 for u in case221.flex_units if u.phases == (ph,)) for ph in "abc"}
    assert per_phase == {"a": 4, "b": 4, "c": 4}


def test_221bus_load_totals():
    doc = json.loads(bundled_case_path("case221").read_text())
    for key, totals in (("p_kw", (37.0, 24.0, 21.0)), ("q_kvar", (31.41, 17.06, 16.08))):
        got = [sum(ld[key].get(ph, 0.0) for ld in doc["loads"]) for ph in "abc"]
        assert got == pytest.approx(totals, abs=1e-6)


def test_valid_fixtures_have_no_violations(case5, case5_unb, case5_1ph, case221):
    for c in (case5, case5_unb, case5_1ph, case221):
        assert validate(c) == []


def test_zero_buses_reports_no_reference():
    case = NetworkCase(base_mva=1.0, base_kv=1.0, buses=())
    assert "no reference bus" in validate(case)


def test_zero_buses_file_fails_with_no_reference(tmp_path):
    doc = {"base_mva": 1.0, "base_kv": 1.0, "buses": [], "lines": [], "loads": []}
    path = tmp_path / "empty.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(CaseValidationError, match="no reference bus"):
        load_case(path)


def test_dangling_line_names_bus():
    doc = doc5()
    doc["lines"][0]["to"] = "99"
    problems = validate(case_from_dict(doc))
    assert len([p for p in problems if "99" in p]) == 1


def test_positive_p_min_is_zero_output_infeasible():
    doc = doc5()
    doc["flex_units"][0]["p_min_kw"] = 1.0
    problems = validate(case_from_dict(doc))
    assert any("zero output infeasible" in p for p in problems)


def test_balanced_unit_needs_identical_bounds():
    doc = doc5()
    doc["flex_units"][0]["p_max_kw"] = {"a": 8.0, "b": 7.0, "c": 8.0}
    assert any("identical bounds" in p for p in validate(case_from_dict(doc)))


def test_disconnected_bus():
    doc = doc5()
    doc["lines"] = [ln for ln in doc["lines"] if ln["to"] != "5"]
    assert validate(case_from_dict(doc)) == ["bus 5: disconnected from the reference bus"]


def test_monitored_bus_needs_three_phases():
    doc = doc5()
    doc["buses"][4]["phases"] = ["a"]
    doc["lines"][-1]["y_series"] = diag_y(0j)
    doc["loads"] = [ld for ld in doc["loads"] if ld["bus"] != "5"]
    assert any("does not have all three phases" in p for p in validate(case_from_dict(doc)))


def test_unknown_key_rejected():
    doc = doc5()
    doc["buses"][0]["colour"] = "red"
    with pytest.raises(CaseFormatError, match="colour"):
        case_from_dict(doc)


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(CaseFormatError):
        load_case(path)


def test_per_unit_load_5kw_at_1mva():
    doc = doc5()
    doc["base_mva"] = 1.0
    doc["loads"] = [{"bus": "2", "p_kw": {"a": 5.0}, "q_kvar": {"a": 0.0}}]
    case = to_per_unit(case_from_dict(doc))
    assert case.loads[0].p["a"] == pytest.approx(0.005, rel=1e-15)


def test_per_unit_admittance_of_base_impedance():
    base_mva, base_kv = 0.25, 0.4
    zb = base_kv**2 / base_mva
    y = 1 / complex(zb, zb)
    doc = {
        "base_mva": base_mva,
        "base_kv": base_kv,
        "buses": [{"id": "1", "is_reference": True}, {"id": "2"}],
        "lines": [{"from": "1", "to": "2", "y_series": diag_y(y)}],
    }
    case = to_per_unit(case_from_dict(doc))
    assert case.lines[0].y_series[0, 0] == pytest.approx(0.5 - 0.5j, abs=1e-14)


@pytest.mark.parametrize("base", [(0.0, 0.4), (0.1, 0.0), (-1.0, 0.4)])
def test_non_positive_base_rejected(base):
    case = NetworkCase(base_mva=base[0], base_kv=base[1], buses=(Bus("1", is_reference=True),))
    with pytest.raises(ValueError):
        to_per_unit(case)


def test_load_is_deterministic():
    path = bundled_case_path("case5_unbalanced")
    assert cases_close(load_case(path), load_case(path), rtol=0.0)


def test_dict_round_trip(case5_unb):
    again = to_per_unit(case_from_dict(case_to_dict(case5_unb)))
    assert cases_close(again, case5_unb)


def test_load_bundled_unknown_name():
    with pytest.raises(FileNotFoundError):
        load_bundled("nope")


@settings(max_examples=40, deadline=None)
@given(
    base_mva=st.floats(1e-3, 10.0),
    base_kv=st.floats(0.1, 33.0),
    scale=st.floats(1e-3, 1e3),
)
def test_per_unit_round_trip_property(base_mva, base_kv, scale):
    doc = doc5()
    doc["base_mva"] = base_mva
    doc["base_kv"] = base_kv
    for ld in doc["loads"]:
        ld["p_kw"] = {ph: v * scale for ph, v in ld["p_kw"].items()}
    phys = case_from_dict(copy.deepcopy(doc))
    assert cases_close(from_per_unit(to_per_unit(phys)), phys, rtol=1e-12)


def test_line_requires_3x3():
    doc = doc5()
    doc["lines"][0]["y_series"] = doc["lines"][0]["y_series"][:2]
    with pytest.raises((CaseFormatError, ValueError)):
        case_from_dict(doc)


def test_case_is_immutable(case5):
    with pytest.raises(Exception):
        case5.base_mva = 2.0
    with pytest.raises(ValueError):
        case5.lines[0].y_series[0, 0] = 0.0
    assert np.isfinite(case5.lines[0].y_series).all()
