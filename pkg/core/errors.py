"""Exception hierarchy shared by every PlatoonScope module.

Per-item failures (one truck, one timestep) are collected by the
`BatchProcessor` summary instead of aborting a stage; anything that
should stop a stage is raised as `StageError` by the pipeline.
"""


class PlatoonScopeError(Exception):
    """Base class for all domain errors."""


class ConfigError(PlatoonScopeError):
    """Invalid or unknown configuration value."""


class NetworkFormatError(PlatoonScopeError):
    """Malformed road network file."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class UnknownNodeError(PlatoonScopeError, KeyError):
    """Node id not present in the road graph."""

    def __init__(self, node_id):
        self.node_id = node_id
        super().__init__(f"unknown node id {node_id!r}")

    def __str__(self):
        return self.args[0]


class TrajectoryFormatError(PlatoonScopeError):
    """Malformed trajectory input (bad columns, unsorted timestamps)."""


class TrajectoryRejected(PlatoonScopeError):
    """A trajectory could not be map matched."""

    def __init__(self, truck_id, reason):
        self.truck_id = truck_id
        self.reason = reason
        super().__init__(f"truck {truck_id}: {reason}")


class UndefinedReachabilityError(PlatoonScopeError, ValueError):
    """Angle/rate requested at a position without finite neighbours."""


class UnknownTruckError(PlatoonScopeError, KeyError):
    """Truck id not present in a snapshot index."""

    def __init__(self, truck_id):
        self.truck_id = truck_id
        super().__init__(f"unknown truck id {truck_id!r}")

    def __str__(self):
        return self.args[0]


class ProfileError(PlatoonScopeError):
    """Driving profile cannot be derived (e.g. non-monotone timestamps)."""


class OracleSizeError(PlatoonScopeError):
    """Instance too large for an exhaustive oracle."""


class StageError(PlatoonScopeError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
