"""Exceptions shared across the package.

ValidationError covers bad inputs and configuration (CLI exit code 1);
NumericsError covers runtime numerical failures such as diverging losses
(CLI exit code 2).
"""


class ValidationError(ValueError):
    """Invalid configuration, shapes, or input data."""


class NumericsError(RuntimeError):
    """Numerical failure at runtime (NaN loss, non-finite values)."""


def shape_error(op: str, *shapes) -> ValidationError:
    """Build a ValidationError naming the offending shapes."""
    listed = ", ".join(str(tuple(s)) for s in shapes)
    return ValidationError(f"{op}: incompatible shapes {listed}")
