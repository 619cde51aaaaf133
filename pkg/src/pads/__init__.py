"""pads: piecewise-affine dynamic surfaces on a periodic domain.

A faceted surface z = h(x, y) is stored as a cellular network of facets,
edges and triple junctions.  Facet planes move under pluggable velocity
laws; all topological events (vanishing edges, facet constrictions,
vanishing facets with exhaustive hole reconnection) are detected and
performed explicitly by two timestepping drivers.
"""

from .errors import (
    BrokenCycleError,
    DanglingReferenceError,
    DegeneratePolygonError,
    DegenerateSeedError,
    HeightMismatchError,
    MeshFormatError,
    MisdetectedJoinError,
    PadsError,
    PolicyFailureError,
    RefinementExhaustedError,
    SingularTripleError,
    UnsupportedEventError,
)
from .network import AuditReport, Edge, Facet, Junction, Network
from . import dynamics, events, initial, kinematics, mesh_io, reconnect, runner, stepper

__all__ = [
    "AuditReport", "Edge", "Facet", "Junction", "Network",
    "PadsError", "BrokenCycleError", "DanglingReferenceError",
    "DegeneratePolygonError", "DegenerateSeedError", "HeightMismatchError",
    "MeshFormatError", "MisdetectedJoinError", "PolicyFailureError",
    "RefinementExhaustedError", "SingularTripleError", "UnsupportedEventError",
    "dynamics", "events", "initial", "kinematics", "mesh_io",
    "reconnect", "runner", "stepper",
]
