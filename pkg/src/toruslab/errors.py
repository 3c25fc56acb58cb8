"""Exception hierarchy shared by every toruslab module."""


class TorusLabError(Exception):
    """Base class for all toruslab failures."""


class ResolutionError(TorusLabError):
    pass


class MetricError(TorusLabError):
    pass


class ParameterError(TorusLabError):
    pass


class ShapeError(TorusLabError):
    pass


class SolverError(TorusLabError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CapacityError(TorusLabError):
    pass


class DegeneracyError(TorusLabError):
    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class ConsistencyError(TorusLabError):
    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect


class WindowError(TorusLabError):
    pass


class DomainError(TorusLabError):
    pass


class ExtractionError(TorusLabError):
    pass


class RecoveryError(TorusLabError):
    def __init__(self, message, det=None):
        super().__init__(message)
        self.det = det


class ConnectivityError(TorusLabError):
    pass


class CorrespondenceError(TorusLabError):
    pass


class TopologyError(TorusLabError):
    pass


class ConfigError(TorusLabError):
    pass
