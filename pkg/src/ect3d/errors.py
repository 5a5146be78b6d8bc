"""Exception hierarchy shared by all ect3d modules."""


class Ect3dError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(Ect3dError):
    """Invalid configuration, geometry, or operation precondition."""


class WallResolutionError(ConfigError):
    """Voxel grid too coarse to resolve the pipe wall."""


class SolverError(Ect3dError):
    """An iterative linear solve failed to reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class StabilityError(Ect3dError):
    """A time step violates an explicit stability bound (CFL, reinit)."""


class DegenerateCalibrationError(Ect3dError):
    """Calibration frames coincide on at least one electrode pair."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None):
        super().__init__(message)
        self.pair = pair


class SimulationError(Ect3dError):
    """A flow simulation step failed; carries the simulation time."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class DatasetError(Ect3dError):
    """Dataset layout, manifest, or payload integrity problem."""
