"""Exception types. The CLI maps ConfigError to exit code 2 and DivergenceError to 3."""


class ConfigError(Exception):
    """Invalid or missing scenario/config/checkpoint file."""


class DivergenceError(Exception):
    def __init__(self, message: str, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class DimensionError(ValueError):
    pass


class EmptyTrajectoryError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


class NeighbourCountError(ValueError):
    pass
