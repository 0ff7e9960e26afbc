"""Exception types shared across the package.

The CLI maps these onto exit codes: input/parse problems exit 2,
numerical failures (divergence, singular covariance) exit 3.
"""


class InputError(ValueError):
    """Invalid argument values: non-finite scores, empty inputs, bad ranges."""


class TableParseError(InputError):
    """A data file failed to parse. Carries the offending line when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class NumericalError(RuntimeError):
    """Numerical failure: training divergence or a non-SPD covariance."""
