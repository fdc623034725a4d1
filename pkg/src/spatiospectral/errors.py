"""Exception hierarchy shared across the package."""


class S2Error(Exception):
    """Base class for all package errors."""


class GraphError(S2Error):
    pass


class ZeroDegreeNode(GraphError):
    pass


class NegativeWeight(GraphError):
    pass


class ThetaOutOfRange(GraphError):
    pass


class EmptyBatch(GraphError):
    pass


class FeatureDimMismatch(GraphError):
    pass


class InvalidSize(GraphError):
    pass


class NotRegular(GraphError):
    pass


class FormatError(S2Error):
    """Malformed S2GR container."""


class EigenError(S2Error):
    pass


class NotConverged(EigenError):
    def __init__(self, max_iter, worst_residual):
        super().__init__(
            f"Lanczos did not converge within {max_iter} iterations "
            f"(worst residual {worst_residual:.3e})"
        )
        self.max_iter = max_iter
        self.worst_residual = worst_residual


class KTooLarge(EigenError):
    pass


class SizeGuard(EigenError):
    pass


class OutOfDomain(S2Error):
    pass


class ShapeMismatch(S2Error):
    pass


class NotScalar(S2Error):
    pass


class OrderGuard(S2Error):
    pass


class WidthMismatch(S2Error):
    pass


class KMismatch(S2Error):
    pass


class DegenerateInterval(S2Error):
    pass


class LambdaZero(S2Error):
    pass


class GenerationFailed(S2Error):
    pass


class ConfigError(S2Error):
    pass


class NanLoss(S2Error):
    pass


class TaskMismatch(S2Error):
    pass


class UnknownRecipe(S2Error):
    pass
