"""Exception hierarchy shared by all modex modules."""


class ModexError(Exception):
    """Base class for every error raised by modex."""


class SpecError(ModexError, ValueError):
    pass


class EmptySpec(SpecError):
    pass


class NonPositiveCount(SpecError):
    pass


class DuplicateModalityName(SpecError):
    pass


class BlackBoxError(ModexError):
    pass


class EndpointUnreachable(BlackBoxError):
    pass


class MalformedResponse(BlackBoxError):
    pass


class DimensionMismatch(BlackBoxError, ValueError):
    pass


class BadParams(ModexError, ValueError):
    pass


class DegenerateTargets(ModexError, ValueError):
    """Weighted variance of the targets is zero, so WR^2 is undefined."""


class AllZeroWeights(ModexError, ValueError):
    pass


class EmptyGrid(ModexError, ValueError):
    pass


class DegenerateDesign(ModexError, ValueError):
    """Fewer than two distinct masks: nothing to regress on."""


class SingularSystem(ModexError, ArithmeticError):
    pass


class RasterShapeMismatch(ModexError, ValueError):
    pass


class DegenerateMask(ModexError, ValueError):
    """Ground-truth mask is single-class (all 0 or all 1)."""


class AllZeroHeatmap(ModexError, ValueError):
    pass


class NoPositiveUnits(ModexError, ValueError):
    pass


class ConstantVector(ModexError, ValueError):
    pass


class NotConvergedWarning(UserWarning):
    """The SGL solver hit ``max_iters`` before meeting ``tol``."""
