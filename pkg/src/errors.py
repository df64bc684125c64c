#!/usr/bin/env python3
"""
Exception hierarchy for the heterogeneous-memory power profiler
"""

from typing import Optional, Tuple

from pydantic import ValidationError


class HmsPowerError(Exception):
    """Base class for every error raised by this package"""


class InputError(HmsPowerError):
    """An ingested document violates its schema or an invariant"""

    def __init__(
        self, message: str, element: Optional[str] = None, line: Optional[int] = None
    ):
        self.element = element
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if element and not message.startswith(element):
            prefix += f"{element}: "
        super().__init__(f"{prefix}{message}")


class TopologyError(InputError):
    """Invalid topology snapshot or unknown socket/node"""


class CounterFormatError(InputError):
    """Malformed recorded counter report"""


class ResultsFormatError(InputError):
    """Malformed results file"""


class ConfigError(InputError):
    """Invalid run configuration"""


class PlanError(HmsPowerError):
    """A binding plan cannot be built for the requested target"""


class AdapterUnavailableError(HmsPowerError):
    """The execution adapter cannot run on this host"""


class ExecutionError(HmsPowerError):
    """The workload could not be launched"""


class SamplerError(HmsPowerError):
    """Energy sampling failed for one cell"""


class AnalysisError(HmsPowerError):
    """An analysis operation was called outside its preconditions"""


def describe_validation_error(error: ValidationError) -> Tuple[str, str]:
    """Return (element, message) for the first problem in a pydantic ValidationError"""
    details = error.errors()
    if not details:
        return "document", str(error)
    first = details[0]
    location = ".".join(str(part) for part in first.get("loc", ()))
    message = str(first.get("msg", "invalid value"))
    if message.startswith("Value error, "):
        message = message[len("Value error, ") :]
    if location:
        return location, f"{location}: {message}"
    element = message.split(":", 1)[0] if ":" in message else "document"
    return element, message
