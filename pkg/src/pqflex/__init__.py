"""Aggregated P-Q flexibility areas of three-phase unbalanced LV networks."""
from .netmodel import (
    Bus,
    CaseError,
    CaseFormatError,
    CaseValidationError,
    FlexUnit,
    Generator,
    Line,
    Load,
    NetworkCase,
    bundled_case_path,
    from_per_unit,
    load_bundled,
    load_case,
    to_per_unit,
    validate,
)
from .powerflow import (
    PhasorState,
    SequenceTriple,
    Setpoints,
    branch_flow,
    residuals,
    sequence_components,
    solve_newton,
    vuf,
)

__version__ = "0.1.0"
