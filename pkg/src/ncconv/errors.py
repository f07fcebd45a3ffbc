"""Exception types shared across the package."""


class NcconvError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(NcconvError, ValueError):
    """Array shapes do not compose for the requested operation."""


class GeometryError(NcconvError, ValueError):
    """Convolution geometry is invalid (e.g. empty output grid)."""


class ConfigError(NcconvError, ValueError):
    """Bad run configuration: unknown key, wrong type, or missing input."""


class DataFormatError(NcconvError, ValueError):
    """A dataset file does not match its documented binary format."""


class CheckpointError(NcconvError, ValueError):
    """A checkpoint file is malformed or incompatible with the model."""


class StateError(NcconvError, RuntimeError):
    """Layer state misuse, e.g. backward without a matching forward."""


class DegenerateInstanceError(NcconvError, ValueError):
    """A verification instance is too degenerate to evaluate (sigma ~ 0)."""


class CheckFailureError(NcconvError, RuntimeError):
    """A numerical cross-check failed (maps to CLI exit code 1)."""


class NonFiniteLossError(NcconvError, RuntimeError):
    """Training produced a non-finite loss; carries per-parameter diagnostics."""

    def __init__(self, message: str, grad_norms: dict | None = None):
        super().__init__(message)
        self.grad_norms = grad_norms or {}

    def diagnostics(self) -> str:
        lines = [str(self)]
        for name, norm in self.grad_norms.items():
            lines.append(f"  {name}: grad norm {norm:.6g}")
        return "\n".join(lines)
