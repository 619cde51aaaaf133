"""PADS mesh text format v1.

Line-oriented:

    pads-mesh 1
    domain <L>
    time <t>                  (optional, checkpoints)
    facet <id> <gx> <gy> <d>
    junction <id> <x> <y> <z>
    edge <id> <origin_j> <term_j> <left_f> <right_f> <wx> <wy>
    hole <n> <f_0> ... <f_{n-1}>        (optional, standalone hole tests)
    stub <edge_id> <surviving_junction> (n lines following a hole)

All reals are printed with 17 significant digits so float64 round-trips
exactly.  Facet boundary cycles are not stored; they are reconstructed from
the edges and verified on load.  Edge tangents are likewise re-derived from
the facet pair and the (non-negative) stored displacement.
"""

from __future__ import annotations

import io

import numpy as np

from .errors import BrokenCycleError, MeshFormatError
from .network import Edge, Facet, Junction, Network, rebuild_boundary, unit_normal


def _r(x: float) -> str:
    return f"{float(x):.17g}"


def dump(net: Network, fh, time: float | None = None, holes=()) -> None:
    w = fh.write
    w("pads-mesh 1\n")
    w(f"domain {_r(net.L)}\n")
    if time is not None:
        w(f"time {_r(time)}\n")
    for f in sorted(net.facets.values(), key=lambda f: f.id):
        w(f"facet {f.id} {_r(f.g[0])} {_r(f.g[1])} {_r(f.d)}\n")
    for j in sorted(net.junctions.values(), key=lambda j: j.id):
        w(f"junction {j.id} {_r(j.p[0])} {_r(j.p[1])} {_r(j.p[2])}\n")
    for e in sorted(net.edges.values(), key=lambda e: e.id):
        w(f"edge {e.id} {e.origin} {e.terminus} {e.left} {e.right} "
          f"{e.wrap[0]} {e.wrap[1]}\n")
    for hole in holes:
        fids = " ".join(str(f) for f in hole.facet_cycle)
        w(f"hole {len(hole.facet_cycle)} {fids}\n")
        for eid, jid in hole.stubs:
            w(f"stub {eid} {jid}\n")


def dumps(net: Network, time: float | None = None, holes=()) -> str:
    buf = io.StringIO()
    dump(net, buf, time=time, holes=holes)
    return buf.getvalue()


def save(net: Network, path, time: float | None = None, holes=()) -> None:
    with open(path, "w") as fh:
        dump(net, fh, time=time, holes=holes)


def load(path_or_fh, verify: bool = True):
    """Load a mesh; returns (network, time, hole_stanzas).

    hole_stanzas is a list of (facet_cycle, stubs) tuples for standalone
    reconnection tests.
    """
    if hasattr(path_or_fh, "read"):
        lines = path_or_fh.read().splitlines()
    else:
        with open(path_or_fh) as fh:
            lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "pads-mesh 1":
        raise MeshFormatError("missing 'pads-mesh 1' header")
    net = None
    time = None
    holes = []
    pending_stubs = 0
    for ln, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "domain":
                net = Network(float(parts[1]))
            elif kind == "time":
                time = float(parts[1])
            elif kind == "facet":
                net.install(Facet(int(parts[1]),
                                  (float(parts[2]), float(parts[3])),
                                  float(parts[4])))
            elif kind == "junction":
                net.install(Junction(int(parts[1]),
                                     (float(parts[2]), float(parts[3]),
                                      float(parts[4]))))
            elif kind == "edge":
                net.install(Edge(int(parts[1]), int(parts[2]), int(parts[3]),
                                 int(parts[4]), int(parts[5]),
                                 (0.0, 0.0, 1.0),
                                 (int(parts[6]), int(parts[7]))))
            elif kind == "hole":
                n = int(parts[1])
                cyc = [int(p) for p in parts[2:2 + n]]
                holes.append((cyc, []))
                pending_stubs = n
            elif kind == "stub":
                if not pending_stubs:
                    raise MeshFormatError("stub line outside a hole stanza")
                holes[-1][1].append((int(parts[1]), int(parts[2])))
                pending_stubs -= 1
            else:
                raise MeshFormatError(f"unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            raise MeshFormatError(f"line {ln}: {raw!r}: {exc}") from exc
    if net is None:
        raise MeshFormatError("missing 'domain' record")
    _finish(net)
    if verify:
        report = net.audit()
        if not report.ok:
            raise MeshFormatError(f"loaded mesh fails audit:\n{report}")
    return net, time, holes


def _finish(net: Network) -> None:
    """Derive junction incidences, tangents and boundary cycles."""
    j_edges = {jid: [] for jid in net.junctions}
    j_facets = {jid: set() for jid in net.junctions}
    for e in net.edges.values():
        for jid in (e.origin, e.terminus):
            if jid not in j_edges:
                raise MeshFormatError(f"edge {e.id}: unknown junction {jid}")
            j_edges[jid].append(e.id)
            j_facets[jid].update((e.left, e.right))
    for jid, jn in net.junctions.items():
        jn.edges = sorted(j_edges[jid])
        jn.facets = sorted(j_facets[jid])
    for e in net.edges.values():
        fl = net.facets.get(e.left)
        fr = net.facets.get(e.right)
        if fl is None or fr is None:
            raise MeshFormatError(f"edge {e.id}: unknown facet")
        cr = np.cross(unit_normal(fl.g), unit_normal(fr.g))
        n = np.linalg.norm(cr)
        if n == 0:
            raise MeshFormatError(
                f"edge {e.id}: composite facets have equal gradients")
        t = cr / n
        disp = net.edge_disp(e)
        s = float(disp @ t)
        if s < 0:
            t = -t
        e.tangent = t
    for fid in list(net.facets):
        try:
            rebuild_boundary(net, fid)
        except BrokenCycleError as exc:
            raise MeshFormatError(str(exc)) from exc


def export_edge_segments(net: Network, path) -> None:
    """Projected edge segments as CSV (x0,y0,x1,y1) for plotting tools.

    Segments are emitted unwrapped from the origin's stored position; a
    plotting tool can clip or tile them periodically.
    """
    with open(path, "w") as fh:
        fh.write("x0,y0,x1,y1,edge\n")
        for e in sorted(net.edges.values(), key=lambda e: e.id):
            o = net.junctions[e.origin].p
            d = net.edge_disp(e)
            fh.write(f"{_r(o[0])},{_r(o[1])},{_r(o[0] + d[0])},"
                     f"{_r(o[1] + d[1])},{e.id}\n")
