"""
Error Handling Utilities for the Calibration Simulator
Domain exception hierarchy plus structured diagnostics for the CLI
"""

import traceback
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from config.constants import EXIT_CONFIG_ERROR, EXIT_RUNTIME_ERROR


class SimulationError(Exception):
    """Base class for every failure raised by the simulator."""

    exit_code = EXIT_RUNTIME_ERROR

    def __init__(self, message: str, invariant: Optional[str] = None):
        super().__init__(message)
        self.invariant = invariant


class ConfigurationError(SimulationError, ValueError):
    """A configuration or step-size guard was violated."""

    exit_code = EXIT_CONFIG_ERROR


class InvalidParameterError(SimulationError, ValueError):
    """An operation received a value outside its domain."""

    exit_code = EXIT_CONFIG_ERROR


class NumericalRangeError(SimulationError, ArithmeticError):
    """A computation produced a non-finite value."""


class FitFailureError(SimulationError):
    """A least-squares fit could not produce a meaningful estimate."""

    def __init__(self, message: str, invariant: Optional[str] = None,
                 diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message, invariant)
        self.diagnostics = diagnostics or {}


class UndefinedQuantityError(SimulationError, ZeroDivisionError):
    """A rate or ratio is undefined for the given arguments."""


@dataclass
class ErrorAnalysis:
    """Structured error analysis result"""
    error_type: str
    error_message: str
    exit_code: int
    explanation: str
    suggested_fix: str
    violated_invariant: Optional[str] = None
    details: List[str] = field(default_factory=list)


class SimulationErrorHandler:
    """
    Maps simulator exceptions to exit codes and readable diagnostics
    """

    def __init__(self):
        self.common_errors = {
            'ValidationError': {
                'explanation': 'The experiment configuration failed schema validation',
                'fix_template': 'Correct or remove the listed keys; unknown keys are rejected',
                'exit_code': EXIT_CONFIG_ERROR,
            },
            'ConfigurationError': {
                'explanation': 'A configuration value violates a step-size or sampling guard',
                'fix_template': 'Reduce dt or adjust the rates so that the named guard holds',
                'exit_code': EXIT_CONFIG_ERROR,
            },
            'InvalidParameterError': {
                'explanation': 'An operation received a value outside its domain',
                'fix_template': 'Check the parameter against the documented range',
                'exit_code': EXIT_CONFIG_ERROR,
            },
            'NumericalRangeError': {
                'explanation': 'The simulation produced a non-finite number',
                'fix_template': 'Lower dt or the noise amplitude and re-run',
                'exit_code': EXIT_RUNTIME_ERROR,
            },
            'FitFailureError': {
                'explanation': 'The decay fit could not extract a rate from the series',
                'fix_template': 'Extend the duration to cover at least two decay times',
                'exit_code': EXIT_RUNTIME_ERROR,
            },
            'UndefinedQuantityError': {
                'explanation': 'A rate or reduction factor is undefined for these arguments',
                'fix_template': 'Use a nonzero reference value',
                'exit_code': EXIT_RUNTIME_ERROR,
            },
            'FileNotFoundError': {
                'explanation': 'A referenced file does not exist',
                'fix_template': 'Check the --config path',
                'exit_code': EXIT_CONFIG_ERROR,
            },
        }

    def analyze_error(self, error: BaseException) -> ErrorAnalysis:
        """
        Analyze an exception and build the diagnostic record

        Args:
            error: The exception raised by a command

        Returns:
            ErrorAnalysis: Structured analysis of the error
        """
        error_type = type(error).__name__
        info = self.common_errors.get(error_type)
        if info is None:
            info = self._lookup_by_base(error)

        details: List[str] = []
        invariant = getattr(error, 'invariant', None)

        if isinstance(error, ValidationError):
            for item in error.errors():
                location = '.'.join(str(part) for part in item.get('loc', ()))
                details.append(f"{location or '<root>'}: {item.get('msg', '')}")
            if details:
                invariant = details[0]
        elif isinstance(error, FitFailureError):
            details.extend(f"{key} = {value}" for key, value in error.diagnostics.items())

        return ErrorAnalysis(
            error_type=error_type,
            error_message=str(error),
            exit_code=info['exit_code'],
            explanation=info['explanation'],
            suggested_fix=info['fix_template'],
            violated_invariant=invariant,
            details=details,
        )

    def _lookup_by_base(self, error: BaseException) -> Dict[str, Any]:
        """Fall back to the nearest known base class"""
        for base in type(error).__mro__[1:]:
            if base.__name__ in self.common_errors:
                return self.common_errors[base.__name__]
        exit_code = getattr(error, 'exit_code', EXIT_RUNTIME_ERROR)
        return {
            'explanation': 'An unexpected error occurred',
            'fix_template': 'Re-run with --log-level DEBUG and inspect the traceback',
            'exit_code': exit_code,
        }

    def format_error_report(self, analysis: ErrorAnalysis) -> str:
        """
        Format error analysis into a readable report

        Args:
            analysis: ErrorAnalysis object

        Returns:
            Formatted error report string
        """
        report = f"""
❌ {analysis.error_type}: {analysis.error_message}
   {analysis.explanation}
"""
        if analysis.violated_invariant:
            report += f"   violated: {analysis.violated_invariant}\n"
        for line in analysis.details[1:] if analysis.violated_invariant in analysis.details else analysis.details:
            report += f"   - {line}\n"
        report += f"💡 {analysis.suggested_fix}\n"
        report += f"   exit code {analysis.exit_code}\n"
        return report

    def format_traceback(self, error: BaseException) -> str:
        """Full traceback text for debug logging"""
        return ''.join(traceback.format_exception(type(error), error, error.__traceback__))
