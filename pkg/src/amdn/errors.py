"""Exception hierarchy. Every error carries a short ``category`` tag that the
CLI prints before the message."""


class AmdnError(Exception):
    category = "error"


class ShapeError(AmdnError, ValueError):
    category = "shape"


class DomainError(AmdnError, ValueError):
    category = "domain"


class ConvergenceError(AmdnError, RuntimeError):
    category = "convergence"


class DivergenceError(AmdnError, RuntimeError):
    category = "divergence"

    def __init__(self, message, epoch=None, trace=None):
        super().__init__(message)
        self.epoch = epoch
        self.trace = list(trace) if trace is not None else []


class LayoutError(AmdnError, OSError):
    category = "layout"


class FormatError(AmdnError, ValueError):
    category = "format"


class AlignmentError(AmdnError, ValueError):
    category = "alignment"


class ConfigError(AmdnError, ValueError):
    category = "config"
