"""Exception types shared across the workbench."""


class SWQError(Exception):
    """Base class for all workbench errors."""


class AxiomViolation(SWQError):
    def __init__(self, axiom, defect):
        super().__init__(f"axiom '{axiom}' violated, defect {defect:.3e}")
        self.axiom = axiom
        self.defect = defect


class DimensionMismatch(SWQError):
    pass


class Unsupported(SWQError):
    pass


class BackendMismatch(SWQError):
    pass


class DegreeOutOfRange(SWQError):
    pass


class ModeMismatch(SWQError):
    pass


class NotRegular(SWQError):
    def __init__(self, site=None, margin=None):
        super().__init__(f"field not numerically regular (site {site}, margin {margin})")
        self.site = site
        self.margin = margin


class NotOnZeroSet(SWQError):
    def __init__(self, site=None, value=None):
        super().__init__(f"field not on the moment-map zero set (site {site}, |mu| {value})")
        self.site = site
        self.value = value


class NotHorizontal(SWQError):
    pass


class NotASolution(SWQError):
    pass


class NotAFueterLift(SWQError):
    pass


class NoConvergence(SWQError):
    def __init__(self, iterations, residual):
        super().__init__(f"iteration failed to converge ({iterations} steps, residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class HypothesisViolated(SWQError):
    pass


class SingularBlock(SWQError):
    def __init__(self, which, cond=None):
        super().__init__(f"block '{which}' is numerically singular (cond {cond})")
        self.which = which
        self.cond = cond


class KernelTooLarge(SWQError):
    def __init__(self, dim):
        super().__init__(f"kernel dimension {dim} exceeds the radial line")
        self.dim = dim


class OrderNotReached(SWQError):
    def __init__(self, slope, required):
        super().__init__(f"measured order {slope:.3f} below required {required:.3f}")
        self.slope = slope
        self.required = required


class FormatError(SWQError):
    def __init__(self, reason):
        super().__init__(f"snapshot format error: {reason}")
        self.reason = reason


class ConfigError(SWQError):
    pass


class TaskError(SWQError):
    pass
