""" Errors raised by varmdp.

Every error derives from :class:`VarMdpError` and also from the closest
built-in type, so callers may catch either.
"""


class VarMdpError(Exception):
    pass


class ModelError(VarMdpError, ValueError):
    """ An MDP, kernel, posterior or ensemble violates its invariants. """
    pass


class DatasetIndexError(VarMdpError, IndexError):
    """ A batch tuple refers to a state or action outside the MDP. """

    def __init__(self, row, field, value, bound):
        self.row = row
        self.field = field
        self.value = value
        self.bound = bound

    def __str__(self):
        return (f"tuple {self.row}: {self.field}={self.value} "
                f"is outside [0, {self.bound})")


class ConfigurationError(VarMdpError, ValueError):
    """ A configuration document or option is invalid.

    Parameters
    ----------
    message: str
        What is wrong.
    line: int, optional
        1-based line of the offending key in the source document.
    source: str, optional
        Path of the source document.
    """

    def __init__(self, message, line=None, source=None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.source = source

    def __str__(self):
        location = ""
        if self.source is not None:
            location += f"{self.source}:"
        if self.line is not None:
            location += f"{self.line}:"
        return f"{location} {self.message}" if location else self.message


class NumericalError(VarMdpError, ArithmeticError):
    pass


class InfeasibleSetError(NumericalError):
    """ An ambiguity set does not intersect the probability simplex. """
    pass
