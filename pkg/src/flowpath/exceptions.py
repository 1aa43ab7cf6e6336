"""Exception types raised across the package.

Plain misuse of an API (bad argument values) raises the builtin
``ValueError``/``IndexError``; the classes here mark failures that callers
may want to catch selectively.
"""


class FormatError(Exception):
    """A dataset directory is missing files or a file is malformed."""


class ParseError(FormatError):
    """A dataset file contains a token that does not parse."""


class ShapeError(ValueError):
    """Array dimensions are inconsistent with the operation."""


class DegenerateWalkError(RuntimeError):
    """A walk would start at, or reach, a zero-degree node."""


class NumericsError(ArithmeticError):
    """A numeric computation produced non-finite values."""


class TooLargeError(ValueError):
    """Problem size exceeds a guard meant for dense probing."""


class EmptyInfluenceError(RuntimeError):
    """No flow was conserved at the queried node."""
