"""Exception hierarchy.

Everything derived from :class:`InputError` is a problem with what the caller
supplied (bad dimensions, malformed files, out-of-range steps).  The CLI maps
those to exit code 1; anything else escaping is treated as an internal error.
"""


class DigicopyError(Exception):
    pass


class InputError(DigicopyError, ValueError):
    """Invalid input: dimensions, parameters, configuration."""


class ParseError(InputError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}: "
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)


class StepRangeError(InputError, IndexError):
    """A step index lies outside the covered horizon."""


class SequencingError(InputError):
    """Rows pushed out of step order."""


class ComparisonError(InputError):
    """Two reports cannot be compared."""


class ResourceError(InputError):
    """A requested computation exceeds the configured budget."""
