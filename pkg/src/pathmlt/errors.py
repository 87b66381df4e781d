"""Exception hierarchy. Every domain failure derives from ``MltError`` so the CLI
can map it to exit code 1."""


class MltError(Exception):
    """Base class for all domain errors raised by pathmlt."""


class GraphParseError(MltError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GraphError(MltError, ValueError):
    """Invalid graph construction or a graph of the wrong shape for an operation."""


class RegularityError(MltError, ValueError):
    """I - Lambda is (numerically) singular."""


class DefinitenessError(MltError, ValueError):
    """A matrix required to be positive definite is not."""


class NotSaturatedError(MltError, ValueError):
    """A bidirected component is not a clique."""


class ProfileUndefinedError(MltError, ValueError):
    def __init__(self, component, message=None):
        self.component = component
        super().__init__(message or f"profile block for component {component} is singular")


class RankError(MltError, ValueError):
    def __init__(self, node, message=None):
        self.node = node
        super().__init__(message or f"parent submatrix of node {node} is singular")


class BelowThresholdError(MltError, ValueError):
    """Sample size is below the maximum likelihood threshold."""


class NoWitnessError(MltError, ValueError):
    """Sample size is at or above the threshold, so no divergence witness exists."""


class DegenerateDataError(MltError, ValueError):
    """Data are not in general position (a probability-zero event)."""


class NonConvergenceError(MltError, RuntimeError):
    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)
