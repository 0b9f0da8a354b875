"""Exception hierarchy shared across the package."""


class SkyrouteError(Exception):
    """Base class for all package errors."""


class GridParseError(SkyrouteError):
    """A grid / price / VM-spec file is malformed."""

    def __init__(self, path: str, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class UnknownRegionError(SkyrouteError):
    """A region id does not exist in the graph."""


class UnknownPairError(SkyrouteError):
    """An ordered region pair has no price entry."""


class LpNumericError(SkyrouteError):
    """Simplex pivoting stalled beyond the anti-cycling budget."""


class NodeBudgetExceededError(SkyrouteError):
    """Branch-and-bound exhausted its node budget."""


class InfeasibleJobError(SkyrouteError):
    """No plan can satisfy the job's throughput floor under the service limits."""


class CeilingTooLowError(SkyrouteError):
    """Even the cheapest feasible plan exceeds the job's cost ceiling."""


class NoPathError(SkyrouteError):
    """No direct or single-relay path connects source to destination."""


class PlanSchemaError(SkyrouteError):
    """A plan file violates the plan schema."""


class SimStallError(SkyrouteError):
    """The simulator made no progress for too many consecutive ticks."""


class GatewayError(SkyrouteError):
    """A gateway failed to bind, connect or verify a transfer."""
