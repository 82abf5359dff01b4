"""Exception types shared across the simulator."""


class SimError(Exception):
    """Base class for all simulator errors."""


class OutOfPool(SimError):
    """Pool allocator has no room left for the requested size."""


class BadFree(SimError):
    """free targeted an address that is not a live allocation."""


class OutOfBounds(SimError):
    """Address range falls outside simulated memory."""


class DuplicateEnclave(SimError):
    """A permission view already exists for this enclave."""


class UnknownEnclave(SimError):
    """No permission view exists for this enclave."""


class RegionConflict(SimError):
    """A protected region would share a page with a region owned by someone else."""


class DuplicateName(SimError):
    """Object directory already holds a live entry under this name."""


class BadHandle(SimError):
    """Handle is unknown, closed, or owned by another driver."""


class DuplicateDriver(SimError):
    """A driver with this name is already loaded."""


class ProgramError(SimError):
    """Driver program is structurally invalid (empty, or uses an unbound variable)."""


class UnknownApi(SimError):
    """Dispatch target is not registered in the API table."""


class LateEnable(SimError):
    """Protection toggled after drivers were already loaded."""


class ParseError(SimError):
    """Scenario text is malformed; carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class UnknownScenario(SimError):
    """No built-in scenario under the requested name."""
