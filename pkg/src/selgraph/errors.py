"""Exception hierarchy.

Every error raised by the pipeline derives from :class:`SelgraphError` and
carries the name of the stage that produced it, so callers such as the
simulation harness can count failures per stage.
"""


class SelgraphError(Exception):
    stage = "selgraph"


class SymmetryError(SelgraphError, ValueError):
    stage = "matcalc"


class DecompositionError(SelgraphError, ValueError):
    stage = "matcalc"


class InsufficientDataError(SelgraphError, ValueError):
    stage = "solver"


class ConvergenceError(SelgraphError, RuntimeError):
    stage = "solver"

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class PDRestorationError(SelgraphError, RuntimeError):
    stage = "solver"


class RefitError(SelgraphError, RuntimeError):
    stage = "refit"


class NumericalRankError(SelgraphError, RuntimeError):
    stage = "refit"


class KKTViolationError(SelgraphError, RuntimeError):
    stage = "selection"


class ConditioningError(SelgraphError, RuntimeError):
    stage = "selective"


class BarrierError(SelgraphError, RuntimeError):
    stage = "selective"


class NotSelectedError(SelgraphError, ValueError):
    stage = "inference"


class NoTargetError(SelgraphError, ValueError):
    stage = "inference"


class InfeasibleNullError(SelgraphError, ValueError):
    stage = "inference"


class IngestError(SelgraphError, ValueError):
    stage = "ingest"


class ConfigError(SelgraphError, ValueError):
    stage = "config"

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = list(keys)
