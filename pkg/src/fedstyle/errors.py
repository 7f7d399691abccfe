"""Exception types shared across the simulator."""

from __future__ import annotations


class FedStyleError(Exception):
    """Base class for all simulator errors."""


class ShapeError(FedStyleError, ValueError):
    pass


class InputError(FedStyleError, ValueError):
    pass


class ParseError(InputError):
    """Malformed CSV or config text. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(InputError):
    pass


class ProtocolError(FedStyleError, RuntimeError):
    pass


class NumericError(FedStyleError, ArithmeticError):
    """Non-finite value in a loss, gradient or parameter tensor."""
