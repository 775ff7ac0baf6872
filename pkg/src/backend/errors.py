"""
Error types shared by the backend.

Validation-type problems derive from ValueError, numerical breakdowns from
RuntimeError; the command line maps the two families to exit codes 2 and 3.
"""
from typing import List, Optional


class GridMismatchError(ValueError):
    """Fields, regions or data living on different grids were combined"""


class RegionError(ValueError):
    """A region is empty, too thin or violates a geometric requirement"""


class CFLViolationError(ValueError):
    """Time step too large for the explicit scheme"""


class SupportViolationError(ValueError):
    """Data found outside its declared support (time window, region or box)"""


class ConfigValidationError(ValueError):
    """Experiment configuration failed validation"""

    def __init__(self, message: str, issues: Optional[List] = None):
        super().__init__(message)
        self.issues = list(issues or [])


class NumericalFailure(RuntimeError):
    """A numerical stage failed beyond its tolerated threshold"""
