#!/usr/bin/env python3
"""Exception hierarchy shared by the pricing pipelines and the CLI."""

from __future__ import annotations

from typing import Any, Dict, Optional

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class SvjqError(RuntimeError):
    """Base error with a stable machine-readable code."""

    code = "svjq_error"
    exit_status = EXIT_NUMERICAL

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context = context or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.code, "message": self.message, "context": self.context}


class ParameterError(SvjqError):
    code = "invalid_parameters"
    exit_status = EXIT_CONFIG


class ConfigError(SvjqError):
    code = "invalid_config"
    exit_status = EXIT_CONFIG


class NumericalError(SvjqError):
    code = "numerical_failure"


class ConvergenceError(NumericalError):
    code = "no_convergence"
