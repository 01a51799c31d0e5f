"""
Exceptions raised by the kvevict package.

Every error is a ``ValueError`` so callers that only guard against bad input
values keep working.
"""


class KvevictError(ValueError):
    """
    Base class for all kvevict errors.
    """


class ShapeError(KvevictError):
    """
    Matrix or vector dimensions do not agree.
    """


class DegenerateRowError(KvevictError):
    """
    A score row has no unmasked entry.
    """


class BudgetError(KvevictError):
    """
    A cache budget cannot be realized for the given number of tokens.
    """


class PolicyConfigError(KvevictError):
    """
    An eviction policy is missing a parameter or was given an invalid one.
    """


class SequenceError(KvevictError):
    """
    A generation step was applied out of order.
    """


class HeadEvictionError(KvevictError):
    """
    Eviction failed for one attention head.

    Parameters
    ----------
    layer : int
        Layer index of the failing head.
    head : int
        Head index of the failing head.
    cause : Exception
        The error raised by the policy.
    """

    def __init__(self, layer, head, cause):
        self.layer = layer
        self.head = head
        self.cause = cause
        super().__init__(f"Eviction failed at layer {layer}, head {head}: {cause}")


class ConfigError(KvevictError):
    """
    A run configuration could not be parsed or validated.

    Parameters
    ----------
    message : str
        Description of the problem.
    key : str, optional
        Dotted config key such as ``budget.total_frac``.
    line : int, optional
        Line number in the config file.
    """

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class TraceLookupError(KvevictError, KeyError):
    """
    An eviction trace has no record for the requested coordinate.
    """

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class TraceFormatError(KvevictError):
    """
    A trace file lacks required columns or holds a malformed row.
    """
