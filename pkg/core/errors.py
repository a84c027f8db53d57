"""
Error types for the hyperbolic geometry workbench.

Every failure raised by a workbench operation is a WorkbenchError carrying a
machine-readable code (e.g. "INVALID_POINT", "NOT_THICK") and an optional
details dict. Configuration problems are ConfigErrors. The CLI maps both to
process exit codes.
"""

from typing import Any, Dict, Optional


class WorkbenchError(ValueError):
    """
    A numerical or structural failure inside a workbench operation.

    Attributes:
        code: Short upper-case error name
        details: Extra context (offending node, cycle, sample, ...)
    """

    exit_code = 3

    def __init__(self, code: str, message: str = "", details: Optional[Dict[str, Any]] = None):
        self.code = code
        self.message = message
        self.details = details or {}
        super().__init__(f"{code}: {message}" if message else code)

    def __reduce__(self):
        return (WorkbenchError, (self.code, self.message, self.details))

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code, "message": str(self), "details": self.details}


class ConfigError(WorkbenchError):
    """Raised when an experiment config is malformed (exit code 2)."""

    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__("CONFIG_INVALID", message, {"field": field} if field else None)
        self.field = field

    def __reduce__(self):
        return (ConfigError, (self.message, self.field))
