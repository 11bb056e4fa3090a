"""Exception types raised across the pipeline."""


class CFCWError(Exception):
    """Base class for all pipeline errors."""


class InvalidArgument(CFCWError, ValueError):
    pass


class InvalidConfiguration(CFCWError, ValueError):
    pass


class InvalidScene(CFCWError, ValueError):
    pass


class TruncatedCapture(CFCWError):
    pass


class InsufficientData(CFCWError):
    pass


class BudgetExceeded(CFCWError):
    pass


class DegenerateCloud(CFCWError):
    pass


class DisconnectedGraph(CFCWError):
    """The k-NN graph over the surface samples has more than one component."""

    def __init__(self, component_sizes, k):
        self.component_sizes = list(component_sizes)
        self.k = k
        super().__init__(
            f"k-NN graph (k={k}) is disconnected; component sizes: {self.component_sizes}"
        )


class NoWritingDetected(CFCWError):
    pass


class EmptyInk(CFCWError):
    pass


class StageError(CFCWError):
    """Wraps a failure inside :func:`cfcw.pipeline.run_pipeline` with its stage."""

    def __init__(self, stage, cause, frame=None):
        self.stage = stage
        self.cause = cause
        self.frame = frame
        where = f"[{stage}]" if frame is None else f"[{stage} @ frame {frame}]"
        super().__init__(f"{where} {type(cause).__name__}: {cause}")
