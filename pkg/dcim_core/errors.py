"""Exception types raised by dcim_core.

Everything derives from DcimError so callers (and the CLI) can tell
user-facing model/configuration problems apart from internal failures.
"""


class DcimError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(DcimError, ValueError):
    """A rule, policy file or run configuration is not usable."""


class ModelValidationError(ConfigurationError):
    """A model specification violates one or more invariants.

    The full ValidationReport is kept on ``report`` so callers can print
    every issue, not just the first.
    """

    def __init__(self, report):
        self.report = report
        lines = [f"  {issue.location}: {issue.message}" for issue in report.issues]
        super().__init__("model validation failed:\n" + "\n".join(lines))


class InvalidTopologyError(ConfigurationError):
    """Topology generator parameters are out of range."""


class DimensionError(DcimError, ValueError):
    """Matrix or vector sizes do not agree."""


class MissingTransitionError(DcimError, ValueError):
    """An active influence edge has no cross-transition matrix."""


class BankRangeError(DcimError, IndexError):
    """The activation count x falls outside a node's dynamic MC bank."""


class ContractViolationError(DcimError, RuntimeError):
    """An operation was called outside its precondition."""


class SearchSpaceTooLarge(DcimError, RuntimeError):
    """An enumeration would exceed its configured cap."""

    def __init__(self, message, bound=None):
        self.bound = bound
        super().__init__(message)
