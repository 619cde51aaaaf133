"""Exception taxonomy for the pads package."""


class PadsError(Exception):
    """Base class for all pads errors."""


class DanglingReferenceError(PadsError):
    """A mutation would leave a reference to a missing element; the whole
    transaction is rejected."""


class BrokenCycleError(PadsError):
    """A facet boundary does not close into a simple cycle."""


class SingularTripleError(PadsError):
    """Three facet planes are (nearly) linearly dependent and do not meet in
    a unique point.  Signals an intermediate-symmetry configuration."""


class DegeneratePolygonError(PadsError):
    """A facet's projected boundary polygon has non-positive area."""


class HeightMismatchError(PadsError):
    """Two facets that should join do not share a common plane offset within
    tolerance; the caller must adjust heights first."""


class UnsupportedEventError(PadsError):
    """A detected event of a class the engine classifies but does not
    resolve (irregular neighbor switch / irregular facet pierce /
    non-joining facet pinch).  Carries the event record."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class PolicyFailureError(PadsError):
    """A resolution policy (e.g. for saddle configurations) abstained."""


class MisdetectedJoinError(PadsError):
    """Height adjustment for a late join exceeds the plausible bound; the
    event was probably misdetected and the step should be refined."""


class EventBlockedError(PadsError):
    """An event cannot be resolved in the current configuration (e.g. a
    composite facet would degenerate during a join); the caller should
    defer or refine so the prerequisite event happens first."""


class RefinementExhaustedError(PadsError):
    """Timestep refinement hit the maximum depth without isolating events."""


class DegenerateSeedError(PadsError):
    """Initial-surface generation produced a degenerate configuration
    (coincident seeds, non-generic arrangement); retry with new jitter."""


class MeshFormatError(PadsError):
    """A mesh file is malformed or fails verification on load."""
