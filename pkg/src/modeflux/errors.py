"""Exception hierarchy with machine-readable codes.

Every error raised by the library derives from :class:`ModefluxError` and
carries a short ``code`` string that the command line front end writes to
stderr and uses to pick an exit status.
"""

from __future__ import annotations


class ModefluxError(Exception):
    """Base class for all library errors."""

    code = "error"
    #: exit status used by the CLI (1 = validation, 2 = numerical)
    exit_status = 2


class ValidationError(ModefluxError, ValueError):
    """An input violates a documented invariant."""

    code = "validation"
    exit_status = 1


class ParseError(ValidationError):
    """Configuration text could not be parsed."""

    code = "parse"

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class SourceOnTurningPoint(ValidationError):
    code = "source_on_turning_point"


class NonMonotoneProfile(ValidationError):
    code = "non_monotone_profile"


class OutOfCrossSection(ValidationError):
    code = "out_of_cross_section"


class SourceOutsideGuide(ValidationError):
    code = "source_outside_guide"


class EqualIndices(ValidationError):
    code = "equal_indices"


class LayoutMismatch(ValidationError):
    code = "layout_mismatch"


class GridMismatch(ValidationError):
    code = "grid_mismatch"


class PathCoverage(ValidationError):
    code = "path_coverage"


class NotPropagating(ModefluxError, ValueError):
    code = "not_propagating"


class NotEvanescent(ModefluxError, ValueError):
    code = "not_evanescent"


class TurningPointTooClose(ModefluxError):
    code = "turning_point_too_close"


class NonConvergedTail(ModefluxError):
    code = "non_converged_tail"


class DegenerateSpectrum(ModefluxError):
    code = "degenerate_spectrum"


class SolverToleranceExceeded(ModefluxError):
    code = "solver_tolerance_exceeded"


class NegativePowerBeyondTolerance(ModefluxError):
    code = "negative_power"


class ConservationViolated(ModefluxError):
    code = "conservation_violated"


class StepTooCoarse(ModefluxError):
    code = "step_too_coarse"


class SpectrumTruncationTooCoarse(ModefluxError):
    code = "spectrum_truncation_too_coarse"
