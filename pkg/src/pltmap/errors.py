"""Exception hierarchy shared by every pipeline stage."""


class PLTError(Exception):
    """Base class for all pltmap errors."""


class ConfigError(PLTError, ValueError):
    pass


class SimulationDiverged(PLTError, ArithmeticError):
    def __init__(self, t_ms, message=None):
        self.t_ms = t_ms
        super().__init__(message or f"simulation diverged at t = {t_ms:.3f} ms")


class NoPropagationError(PLTError):
    pass


class CalibrationError(PLTError, ValueError):
    def __init__(self, target, bounds):
        self.target = target
        self.bounds = bounds
        lo, hi = bounds
        super().__init__(
            f"target CV {target:g} outside achievable range [{lo:.4g}, {hi:.4g}] grid-units/ms"
        )


class DimensionError(PLTError, ValueError):
    pass


class ShapeError(PLTError, ValueError):
    pass


class CaseGenerationError(PLTError):
    def __init__(self, spec, cause):
        self.spec = spec
        self.cause = cause
        super().__init__(f"case {spec} failed: {cause}")


class DatasetGenerationError(PLTError):
    def __init__(self, failures):
        self.failures = failures
        specs = ", ".join(str(f.spec) for f in failures)
        super().__init__(f"{len(failures)} case(s) failed: {specs}")


class ParseError(PLTError, ValueError):
    def __init__(self, offset, message):
        self.offset = offset
        super().__init__(f"at byte {offset}: {message}")


class IntegrityError(PLTError):
    pass


class CheckpointError(PLTError):
    pass


class TrainingDiverged(PLTError, ArithmeticError):
    def __init__(self, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
