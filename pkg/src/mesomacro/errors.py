"""Exception hierarchy and process exit codes.

Exit codes: 0 success, 1 input validation, 2 runtime assertion
(conservation/budget violation), 3 I/O failure.
"""

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RUNTIME = 2
EXIT_IO = 3


class MesoMacroError(Exception):
    """Base class for all simulator errors."""

    exit_code = EXIT_RUNTIME


class InputError(MesoMacroError):
    """Invalid input data or configuration (bad CSV row, unknown node, ...)."""

    exit_code = EXIT_INPUT

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class NoPathError(MesoMacroError):
    """Destination unreachable from origin under the given costs."""

    exit_code = EXIT_INPUT


class SimulationAssertionError(MesoMacroError):
    """Internal invariant violated (conservation, budget, FIFO). A bug trap."""

    exit_code = EXIT_RUNTIME


class OutputError(MesoMacroError):
    """Failure writing simulation outputs."""

    exit_code = EXIT_IO
