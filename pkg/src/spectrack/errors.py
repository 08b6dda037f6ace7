"""Exception types shared across the package.

Everything raised on purpose derives from SpectrackError so callers can
catch library failures without swallowing genuine bugs.
"""

from __future__ import annotations


class SpectrackError(Exception):
    """Base class for all deliberate failures in this package."""


class DimensionError(SpectrackError):
    """Array shapes do not line up for the requested operation."""


class ValidationError(SpectrackError):
    """A value is outside its documented domain."""


class ConfigError(ValidationError):
    """A configuration combination is inconsistent."""


class EventParseError(ValidationError):
    """An event file row could not be parsed; message names the line."""


class ContractError(SpectrackError):
    """An API precondition was violated by the caller."""


class NumericalContractError(SpectrackError):
    """A numerical guard tripped (e.g. non-negligible imaginary residue)."""
