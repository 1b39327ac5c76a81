"""Exception and warning types raised across the package."""


class DPNetError(Exception):
    """Base class for all package errors."""


class IsolatedNode(DPNetError, ValueError):
    def __init__(self, node: int):
        super().__init__(f"node {node} has no neighbours; Metropolis-Hastings weights are undefined")
        self.node = node


class ParseError(DPNetError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DimensionMismatch(DPNetError, ValueError):
    pass


class UnboundedSensitivity(DPNetError, ValueError):
    pass


class OutOfSupport(DPNetError, ValueError):
    pass


class EmptyInput(DPNetError, ValueError):
    pass


class PeriodicChain(DPNetError, ValueError):
    pass


class InvalidLearningRate(DPNetError, ValueError):
    pass


class NotConverged(DPNetError, RuntimeError):
    def __init__(self, max_iters: int, allocation=None):
        super().__init__(f"solver did not converge within {max_iters} iterations")
        self.max_iters = max_iters
        self.allocation = allocation


class ConfigError(DPNetError, ValueError):
    pass


class DataError(DPNetError, ValueError):
    pass


class SelfLoop(UserWarning):
    """Self-loops were found and dropped while reading an edge list."""


class NonMixingWarning(UserWarning):
    """The mixing matrix has beta* = 1 (disconnected or periodic chain)."""


class NonMonotoneSeries(UserWarning):
    """A cumulative meter series decreased; the offending differences were dropped."""


class NotConvergedWarning(UserWarning):
    pass
