"""Detection, classification, and resolution of topological events.

Three event classes: vanishing edges (neighbor switch / irregular neighbor
switch / facet join), facet constrictions (facet pierce / irregular facet
pierce / facet pinch / joining facet pinch), and vanishing facets (removed
pre-emptively below an area threshold, with the hole patched by far-field
reconnection; groups and steps get special handling).

Irregular variants require three coplanar facet normals ("intermediate
symmetry"); they are classified and reported but not resolved.

All resolutions are local: geometry is computed in a flat chart unwrapped
around the event, then committed through one journaled transaction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (EventBlockedError, HeightMismatchError,
                     MisdetectedJoinError, PolicyFailureError,
                     SingularTripleError, UnsupportedEventError)
from .geom2d import point_segment_distance, polygon_is_convex, segments_cross
from .kinematics import (TAU_INDEP, edge_is_convex, edge_signed_length,
                         facet_area, intersect_planes, junction_velocity,
                         plane_triple_matrix, reclose_junction, unit_normal)
from .network import Edge, Facet, Junction, Network
from . import reconnect as ffr

TAU_JOIN_FACTOR = 1e-7   # default join-height tolerance, relative to L
EPS_A_FACTOR = 1e-6      # removal trigger threshold, relative to L^2
EPS_B_RATIO = 10.0       # group-collection threshold = ratio * eps_A
MAX_NEAR_FIELD = 12      # defer removals that would collect more than this


@dataclass
class EventRecord:
    """A detected or resolved topological event."""

    cls: str
    participants: dict
    facets_affected: set = field(default_factory=set)
    time: float | None = None
    predicted_time: float | None = None
    deltas: tuple = (0, 0, 0)
    note: str = ""

    def trace_line(self) -> str:
        parts = ",".join(f"{k}={v}" for k, v in sorted(self.participants.items()))
        t = "?" if self.time is None else f"{self.time:.12g}"
        dv, de, df = self.deltas
        return (f"t={t} class={self.cls} participants={parts} "
                f"deltas={dv},{de},{df}")


# ------------------------------------------------------------ local charts

class LocalChart:
    """Flat unwrapped coordinates around an event neighborhood.

    Junctions are placed by walking edges from a base junction; plane
    offsets are read off charted junctions (exact up to the current plane
    residual).  Wrap vectors for rebuilt edges come from the integer shift
    between stored and chart coordinates.
    """

    def __init__(self, net: Network, base_jid: int):
        self.net = net
        self.L = net.L
        self.pos = {base_jid: net.junctions[base_jid].p.copy()}

    def add_via_edge(self, eid: int, from_jid: int) -> int:
        e = self.net.edges[eid]
        other = e.other_junction(from_jid)
        disp = self.net.edge_disp(e)
        if e.origin != from_jid:
            disp = -disp
        p = self.pos[from_jid] + disp
        if other in self.pos:
            if np.abs(self.pos[other] - p).max() > 1e-6 * self.L:
                raise EventBlockedError(
                    f"chart inconsistency at junction {other} (wrapping region)")
        else:
            self.pos[other] = p
        return other

    def walk_entries(self, entries) -> None:
        """Chart every junction along a run of boundary entries (the first
        entry's start junction must already be charted)."""
        for eid, jid in entries:
            if jid not in self.pos:
                raise EventBlockedError("chart walk lost its position")
            self.add_via_edge(eid, jid)

    def reach_facet(self, fid: int, max_nodes: int = 256) -> int:
        """BFS outward until some junction of facet fid is charted."""
        on_facet = {j for _, j in self.net.facets[fid].boundary}
        for jid in self.pos:
            if jid in on_facet:
                return jid
        q = deque(self.pos)
        seen = set(self.pos)
        while q and len(seen) < max_nodes:
            jid = q.popleft()
            for eid in self.net.junctions[jid].edges:
                other = self.add_via_edge(eid, jid)
                if other in on_facet:
                    return other
                if other not in seen:
                    seen.add(other)
                    q.append(other)
        raise EventBlockedError(f"facet {fid} not reachable in local chart")

    def offset(self, fid: int, via_jid: int) -> float:
        """Plane offset of a facet in this chart, via a charted junction on it."""
        f = self.net.facets[fid]
        p = self.pos[via_jid]
        return float(p[2] - f.g[0] * p[0] - f.g[1] * p[1])

    def gamma(self, jid: int) -> np.ndarray:
        """Integer shift (stored - chart)/L of a surviving junction."""
        st = self.net.junctions[jid].p[:2]
        k = (st - self.pos[jid][:2]) / self.L
        ki = np.rint(k).astype(np.int64)
        if np.abs(k - ki).max() > 1e-6:
            raise EventBlockedError(f"junction {jid}: non-integer chart shift")
        return ki

    def stored_of(self, chart_p: np.ndarray):
        """Wrapped stored position and integer shift for a new junction."""
        gam = -np.floor(chart_p[:2] / self.L).astype(np.int64)
        stored = chart_p.copy()
        stored[0] += self.L * gam[0]
        stored[1] += self.L * gam[1]
        return stored, gam

    @staticmethod
    def wrap_between(k_origin, k_terminus) -> np.ndarray:
        return np.asarray(k_origin - k_terminus, dtype=np.int64)


# --------------------------------------------------- vanishing-edge events

def _edge_ends(net: Network, eid: int):
    """(j_origin, j_terminus, left, right, T_origin, T_terminus) of an edge."""
    e = net.edges[eid]
    jo, jt = e.origin, e.terminus
    comp = {e.left, e.right}
    to = [f for f in net.junctions[jo].facets if f not in comp]
    tt = [f for f in net.junctions[jt].facets if f not in comp]
    if len(to) != 1 or len(tt) != 1:
        raise EventBlockedError(f"edge {eid}: endpoints are not clean triples")
    return jo, jt, e.left, e.right, to[0], tt[0]


def _grad_eq(g1, g2, scale) -> bool:
    return bool(np.abs(np.asarray(g1) - np.asarray(g2)).max() <= 1e-12 * scale)


def classify_vanishing_edge(net: Network, eid: int) -> EventRecord:
    """Sub-class of a (nearly) zero-length edge.

    Facet join when the terminal facets share a gradient; irregular
    neighbor switch when either composite normal is coplanar with the two
    terminal normals; plain neighbor switch otherwise.
    """
    jo, jt, cl, cr, to, tt = _edge_ends(net, eid)
    gto = net.facets[to].g
    gtt = net.facets[tt].g
    scale = max(1.0, float(np.abs(gto).max()), float(np.abs(gtt).max()))
    participants = {"edge": eid, "left": cl, "right": cr,
                    "t_origin": to, "t_terminus": tt}
    affected = {cl, cr, to, tt}
    if to == tt or _grad_eq(gto, gtt, scale):
        return EventRecord("FacetJoin", participants, affected)
    for comp in (cl, cr):
        A = plane_triple_matrix(gto, gtt, net.facets[comp].g)
        if abs(np.linalg.det(A)) <= TAU_INDEP:
            return EventRecord("IrregularNeighborSwitch", participants,
                               affected, note=f"coplanar with facet {comp}")
    return EventRecord("NeighborSwitch", participants, affected)


def _emanating(net: Network, eid: int):
    """The four emanating edges keyed by (junction end, composite facet)."""
    jo, jt, cl, cr, to, tt = _edge_ends(net, eid)
    out = {}
    for jid, term in ((jo, to), (jt, tt)):
        for xid in net.junctions[jid].edges:
            if xid == eid:
                continue
            x = net.edges[xid]
            sides = {x.left, x.right}
            if term not in sides:
                raise EventBlockedError(
                    f"edge {xid} at junction {jid} does not border facet {term}")
            comp = (sides - {term}).pop()
            out[(jid, comp)] = xid
    if len(out) != 4:
        raise EventBlockedError(f"edge {eid}: could not label emanating edges")
    return out


def is_saddle(net: Network, eid: int) -> bool:
    """Alternating ridge/valley pattern of the four emanating edges."""
    jo, jt, cl, cr, to, tt = _edge_ends(net, eid)
    em = _emanating(net, eid)
    cyc = [em[(jo, cl)], em[(jo, cr)], em[(jt, cr)], em[(jt, cl)]]
    c = [edge_is_convex(net, x) for x in cyc]
    return c[0] == c[2] and c[1] == c[3] and c[0] != c[1]


def _abs_height_integral(net: Network, fid: int) -> float:
    """Integral of |h| over a facet's projected polygon (the polygon is
    clipped exactly against the h = 0 line)."""
    f = net.facets[fid]
    _, xy, _ = net.chart(fid)

    def piece(poly):
        if len(poly) < 3:
            return 0.0
        x, y = poly[:, 0], poly[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cr = x * yn - xn * y
        a2 = cr.sum()
        if abs(a2) < 1e-300:
            return 0.0
        cx = ((x + xn) * cr).sum() / (3 * a2)
        cy = ((y + yn) * cr).sum() / (3 * a2)
        return abs((f.g[0] * cx + f.g[1] * cy + f.d) * a2 / 2.0)

    hv = f.g[0] * xy[:, 0] + f.g[1] * xy[:, 1] + f.d
    if (hv >= 0).all() or (hv <= 0).all():
        return piece(xy)
    pos, neg = [], []
    m = len(xy)
    for i in range(m):
        a, b = xy[i], xy[(i + 1) % m]
        ha, hb = hv[i], hv[(i + 1) % m]
        (pos if ha >= 0 else neg).append(a)
        if (ha > 0) != (hb > 0):
            t = ha / (ha - hb)
            pt = a + t * (b - a)
            pos.append(pt)
            neg.append(pt)
    return piece(np.asarray(pos)) + piece(np.asarray(neg))


def resolve_neighbor_switch(net: Network, eid: int, velocities=None,
                            saddle_policy: str = "self-reinforcement",
                            time: float | None = None) -> EventRecord:
    """Exchange composite and terminal roles across a vanished edge.

    The old edge and its two junctions are replaced by a new edge whose
    junctions each combine the two old terminal facets with one old
    composite facet.  Saddle configurations (alternating ridge/valley
    emanating edges) admit a neutral pass instead; the default policy keeps
    the self-reinforcing resolution, falling back to the larger growth rate
    of the total |h| integral when both grow.
    """
    rec = classify_vanishing_edge(net, eid)
    if rec.cls != "NeighborSwitch":
        raise UnsupportedEventError(f"edge {eid} classifies as {rec.cls}", rec)
    jo, jt, cl, cr, to, tt = _edge_ends(net, eid)
    em = _emanating(net, eid)
    a_l, a_r = em[(jo, cl)], em[(jo, cr)]
    b_l, b_r = em[(jt, cl)], em[(jt, cr)]
    if len({a_l, a_r, b_l, b_r}) != 4:
        raise EventBlockedError(f"edge {eid}: emanating edges degenerate")

    saddle = is_saddle(net, eid)
    if saddle and saddle_policy != "force-switch":
        if saddle_policy == "abstain":
            raise PolicyFailureError(f"saddle at edge {eid}: policy abstains")
        if saddle_policy != "self-reinforcement":
            raise PolicyFailureError(f"unknown saddle policy {saddle_policy!r}")
        if velocities is None:
            raise PolicyFailureError(
                f"saddle at edge {eid}: need velocities for the policy")

    chart = LocalChart(net, jo)
    chart.add_via_edge(eid, jo)
    far = {}
    for xid, frm in ((a_l, jo), (a_r, jo), (b_l, jt), (b_r, jt)):
        far[xid] = chart.add_via_edge(xid, frm)
    D = {cl: chart.offset(cl, jo), cr: chart.offset(cr, jo),
         to: chart.offset(to, jo), tt: chart.offset(tt, jt)}
    g = {f: net.facets[f].g for f in (cl, cr, to, tt)}

    p_a = intersect_planes(g[to], D[to], g[tt], D[tt], g[cl], D[cl])
    p_b = intersect_planes(g[to], D[to], g[tt], D[tt], g[cr], D[cr])

    # tangent of the new edge; sign fixed by geometry, else by the flow
    tau = np.cross(unit_normal(g[to]), unit_normal(g[tt]))
    tau /= np.linalg.norm(tau)
    vgrow = None
    if velocities is not None:
        v_a = junction_velocity([g[to], g[tt], g[cl]],
                                [velocities[to], velocities[tt], velocities[cl]])
        v_b = junction_velocity([g[to], g[tt], g[cr]],
                                [velocities[to], velocities[tt], velocities[cr]])
        vgrow = float(tau @ (v_b - v_a))
    sep = float(tau @ (p_b - p_a))
    if abs(sep) > 1e-12 * net.L:
        if sep < 0:
            tau, sep = -tau, -sep
            vgrow = None if vgrow is None else -vgrow
    elif vgrow is not None and vgrow < 0:
        tau, vgrow = -tau, -vgrow

    if saddle and saddle_policy == "self-reinforcement":
        if vgrow is not None and vgrow <= 0:
            return _neutral_pass(net, eid, rec, time)
        if vgrow is not None:
            snap = net.snapshot()
            if not _saddle_energy_prefers_switch(net, snap, eid, velocities):
                return _neutral_pass(net, eid, rec, time)

    jid_a = net.new_junction_id()
    jid_b = net.new_junction_id()
    eid_new = net.new_edge_id()

    # T_o's boundary fixes the traversal: it walks J_a -> J_b iff it leaves
    # the origin junction along the CR-side emanating edge
    bnd_to = net.facets[to].boundary
    k = [i for i, (_, j) in enumerate(bnd_to) if j == jo]
    if len(k) != 1:
        raise EventBlockedError(f"facet {to}: junction {jo} not unique")
    to_walks_ab = (bnd_to[k[0]][0] == a_r)
    if to_walks_ab:
        left_new, right_new = to, tt
    else:
        left_new, right_new = tt, to

    stored_a, k_a = chart.stored_of(p_a)
    stored_b, k_b = chart.stored_of(p_b)
    kmap = {jid_a: k_a, jid_b: k_b}
    for xid in (a_l, a_r, b_l, b_r):
        kmap[far[xid]] = chart.gamma(far[xid])

    new_j_a = Junction(jid_a, stored_a, edges=[eid_new, a_l, b_l],
                       facets=[to, tt, cl])
    new_j_b = Junction(jid_b, stored_b, edges=[eid_new, a_r, b_r],
                       facets=[to, tt, cr])
    new_e = Edge(eid_new, jid_a, jid_b, left_new, right_new, tau,
                 LocalChart.wrap_between(k_a, k_b))

    updates = []
    for xid, new_end in ((a_l, jid_a), (a_r, jid_b), (b_l, jid_a), (b_r, jid_b)):
        x = net.edges[xid]
        dead = jo if xid in (a_l, a_r) else jt
        o, t = x.origin, x.terminus
        if o == dead:
            o = new_end
        else:
            t = new_end
        updates.append(("edge", xid, {
            "origin": o, "terminus": t,
            "wrap": LocalChart.wrap_between(
                kmap[o] if o in kmap else chart.gamma(o),
                kmap[t] if t in kmap else chart.gamma(t))}))

    jpos_new = {jid_a: stored_a, jid_b: stored_b}

    def canon(fid, bnd):
        jids = [j for _, j in bnd]
        kk = jids.index(min(jids))
        bnd = bnd[kk:] + bnd[:kk]
        aj = bnd[0][1]
        p = jpos_new.get(aj)
        if p is None:
            p = net.junctions[aj].p
        f = net.facets[fid]
        return bnd, float(p[2] - f.g[0] * p[0] - f.g[1] * p[1])

    def spliced(fid, drop_eids, jmap, insert=None):
        out = []
        for e2, j2 in net.facets[fid].boundary:
            if e2 in drop_eids:
                continue
            if insert and insert[0] == j2:
                out.append(insert[1])
            out.append((e2, jmap.get(j2, j2)))
        return out

    b_cl, d_cl = canon(cl, spliced(cl, {eid}, {jo: jid_a, jt: jid_a}))
    b_cr, d_cr = canon(cr, spliced(cr, {eid}, {jo: jid_b, jt: jid_b}))
    first_to = jid_a if to_walks_ab else jid_b
    b_to, d_to = canon(to, spliced(
        to, set(), {jo: (jid_b if to_walks_ab else jid_a)},
        insert=(jo, (eid_new, first_to))))
    first_tt = jid_b if to_walks_ab else jid_a
    b_tt, d_tt = canon(tt, spliced(
        tt, set(), {jt: (jid_a if to_walks_ab else jid_b)},
        insert=(jt, (eid_new, first_tt))))

    updates += [
        ("facet", cl, {"boundary": b_cl, "d": d_cl}),
        ("facet", cr, {"boundary": b_cr, "d": d_cr}),
        ("facet", to, {"boundary": b_to, "d": d_to}),
        ("facet", tt, {"boundary": b_tt, "d": d_tt}),
    ]
    net.mutate(deletions=[("edge", eid), ("junction", jo), ("junction", jt)],
               creations=[new_j_a, new_j_b, new_e],
               updates=updates, tag=f"NS edge {eid}")
    rec.participants["new_edge"] = eid_new
    rec.facets_affected = {cl, cr, to, tt}
    rec.deltas = (0, 0, 0)
    rec.time = time
    return rec


def _neutral_pass(net: Network, eid: int, rec: EventRecord,
                  time) -> EventRecord:
    """Saddle non-resolution: relabel origin/terminus so the flipped edge
    has positive directed length again; no neighbor relations change."""
    e = net.edges[eid]
    updates = [("edge", eid, {"origin": e.terminus, "terminus": e.origin,
                              "wrap": -e.wrap})]
    for fid in (e.left, e.right):
        bnd = []
        for e2, j2 in net.facets[fid].boundary:
            if e2 == eid:
                j2 = e.terminus if j2 == e.origin else e.origin
            bnd.append((e2, j2))
        updates.append(("facet", fid, {"boundary": bnd}))
    net.mutate(updates=updates, tag=f"neutral pass edge {eid}")
    rec.note = "neutral pass"
    rec.deltas = (0, 0, 0)
    rec.time = time
    return rec


def _saddle_energy_prefers_switch(net, snap, eid, velocities) -> bool:
    """Probe both saddle resolutions on copies: which one grows the total
    |h| integral over the affected facets faster under frozen velocities."""
    from .kinematics import advance
    vmax = max(abs(v) for v in velocities.values()) or 1.0
    dt = 1e-6 * net.L / vmax

    def probe(neutral: bool) -> float:
        trial = Network.from_snapshot(snap)
        rec = classify_vanishing_edge(trial, eid)
        fids = sorted(rec.facets_affected)
        if neutral:
            _neutral_pass(trial, eid, rec, None)
        else:
            resolve_neighbor_switch(trial, eid, velocities=None,
                                    saddle_policy="force-switch")
        before = sum(_abs_height_integral(trial, f) for f in fids)
        vel = {f: velocities.get(f, 0.0) for f in trial.facets}
        advance(trial, vel, dt)
        after = sum(_abs_height_integral(trial, f) for f in fids)
        return (after - before) / dt

    return probe(False) >= probe(True)


# ------------------------------------------------------------- facet join

def _common_chart_offsets(net: Network, fid_a: int, fid_b: int):
    """Chart both facets' planes into one flat frame and return
    (chart, via_a, via_b, D_a, D_b)."""
    start = net.facets[fid_a].boundary[0][1]
    chart = LocalChart(net, start)
    via_a = chart.reach_facet(fid_a)
    via_b = chart.reach_facet(fid_b)
    return chart, via_a, via_b, chart.offset(fid_a, via_a), chart.offset(fid_b, via_b)


def adjust_heights_for_join(net: Network, fid_a: int, fid_b: int,
                            eta_max: float | None = None) -> float:
    """Move both facets onto their area-weighted mean plane before a join.

    Junction positions of both facets are re-derived afterwards.  Returns
    the discrepancy that was adjusted away; raises MisdetectedJoinError if
    it exceeds eta_max.
    """
    fa, fb = net.facets[fid_a], net.facets[fid_b]
    if not _grad_eq(fa.g, fb.g, max(1.0, float(np.abs(fa.g).max()))):
        raise HeightMismatchError(
            f"facets {fid_a}, {fid_b} have different gradients")
    chart, _, _, d_a, d_b = _common_chart_offsets(net, fid_a, fid_b)
    delta = d_b - d_a
    if eta_max is not None and abs(delta) > eta_max:
        raise MisdetectedJoinError(
            f"join offset discrepancy {abs(delta):.3e} exceeds {eta_max:.3e}")
    if delta == 0.0:
        return 0.0
    wa, wb = facet_area(net, fid_a), facet_area(net, fid_b)
    mean = (wa * d_a + wb * d_b) / (wa + wb)
    net.mutate(updates=[("facet", fid_a, {"d": fa.d + (mean - d_a)}),
                        ("facet", fid_b, {"d": fb.d + (mean - d_b)})],
               tag=f"height adjust {fid_a},{fid_b}")
    touched = {j for _, j in fa.boundary} | {j for _, j in fb.boundary}
    for jid in sorted(touched):
        reclose_junction(net, jid)
    return abs(delta)


def resolve_facet_join(net: Network, eid: int, tau_join: float | None = None,
                       time: float | None = None) -> EventRecord:
    """Fuse the two identically-oriented terminal facets of a vanished edge.

    The vanishing edge and its junctions are deleted; each parallel pair of
    emanating edges collapses to a single edge connecting the surviving far
    junctions.  Count changes: dV=-2, dE=-3, dF=-1.
    """
    rec = classify_vanishing_edge(net, eid)
    if rec.cls != "FacetJoin":
        raise UnsupportedEventError(f"edge {eid} classifies as {rec.cls}", rec)
    jo, jt, cl, cr, to, tt = _edge_ends(net, eid)
    if to == tt:
        raise UnsupportedEventError(
            f"edge {eid}: terminal facets coincide (self-join)", rec)
    if tau_join is None:
        tau_join = TAU_JOIN_FACTOR * net.L
    if len(net.facets[cl].boundary) < 5 or len(net.facets[cr].boundary) < 5:
        raise EventBlockedError(
            f"edge {eid}: a composite facet would degenerate; remove it "
            "first (step handling)")

    chart = LocalChart(net, jo)
    chart.add_via_edge(eid, jo)
    d_to = chart.offset(to, jo)
    d_tt = chart.offset(tt, jt)
    if abs(d_to - d_tt) > tau_join:
        raise HeightMismatchError(
            f"join heights differ by {abs(d_to - d_tt):.3e} > {tau_join:.3e}")
    if d_to != d_tt:
        adjust_heights_for_join(net, to, tt)
        chart = LocalChart(net, jo)
        chart.add_via_edge(eid, jo)

    em = _emanating(net, eid)
    a_l, a_r = em[(jo, cl)], em[(jo, cr)]
    b_l, b_r = em[(jt, cl)], em[(jt, cr)]
    far = {xid: chart.add_via_edge(xid, frm)
           for xid, frm in ((a_l, jo), (a_r, jo), (b_l, jt), (b_r, jt))}
    if far[a_l] == far[b_l] or far[a_r] == far[b_r]:
        raise EventBlockedError(f"edge {eid}: emanating pair shares a far "
                                "junction; composite degenerates")

    fid_star = net.new_facet_id()
    el_id = net.new_edge_id()
    er_id = net.new_edge_id()

    def merged_edge(new_id, comp, xa, xb):
        """Replace the collinear pair (xa at j_o, xb at j_t) bordering comp
        by one edge between their far junctions, keeping xa's direction."""
        ea = net.edges[xa]
        fa_j, fb_j = far[xa], far[xb]
        t = ea.tangent.copy()
        pa, pb = chart.pos[fa_j], chart.pos[fb_j]
        if float(t @ (pb - pa)) >= 0:
            o, tm = fa_j, fb_j
        else:
            o, tm = fb_j, fa_j
        left = comp if ea.left == comp else fid_star
        right = fid_star if left == comp else comp
        # keep comp on the same side as it was for xa
        if ea.left == comp:
            left, right = comp, fid_star
        else:
            left, right = fid_star, comp
        w = LocalChart.wrap_between(chart.gamma(o), chart.gamma(tm))
        return Edge(new_id, o, tm, left, right, t, w)

    e_l = merged_edge(el_id, cl, a_l, b_l)
    e_r = merged_edge(er_id, cr, a_r, b_r)

    # new facet boundary: T_o's cycle minus its emanating pair, spliced to
    # T_t's via the merged edges
    def remainder(fid, drop, start_after):
        bnd = net.facets[fid].boundary
        k = [i for i, (e2, _) in enumerate(bnd) if e2 == start_after]
        if len(k) != 1:
            raise EventBlockedError(f"facet {fid}: cannot splice")
        rot = bnd[k[0]:] + bnd[:k[0]]
        return [(e2, j2) for e2, j2 in rot[1:] if e2 not in drop]

    # T_o leaves j_o along one emanating edge; order the splice from it
    rem_to = remainder(to, {a_l, a_r}, _leaving_edge(net, to, jo))
    rem_tt = remainder(tt, {b_l, b_r}, _leaving_edge(net, tt, jt))
    star = Facet(fid_star, net.facets[to].g, 0.0)

    def entry_for(e_new, f_new, expect_start):
        s = e_new.origin if e_new.left == f_new else e_new.terminus
        if s != expect_start:
            raise EventBlockedError("facet join splice mismatch")
        return (e_new.id, s)

    # rem_to runs from the far junction of T_o's leaving edge around to the
    # far junction of its arriving edge; continue through the merged edge
    # on the arriving side
    arr_to = _arriving_edge(net, to, jo)
    arr_tt = _arriving_edge(net, tt, jt)
    e_after_to = e_l if arr_to == a_l else e_r
    e_after_tt = e_l if arr_tt == b_l else e_r
    if {e_after_to.id, e_after_tt.id} != {el_id, er_id}:
        raise EventBlockedError("facet join: emanating pairing failed")
    boundary = (rem_to + [entry_for(e_after_to, fid_star, far[arr_to])]
                + rem_tt + [entry_for(e_after_tt, fid_star, far[arr_tt])])
    star.boundary = boundary
    kk = [j for _, j in boundary]
    rot = kk.index(min(kk))
    star.boundary = boundary[rot:] + boundary[:rot]
    aj = star.boundary[0][1]
    p = net.junctions[aj].p
    star.d = float(p[2] - star.g[0] * p[0] - star.g[1] * p[1])

    updates = []
    # composites lose (a, e, b) and gain the merged edge
    for comp, drop, e_new in ((cl, {a_l, eid, b_l}, e_l),
                              (cr, {a_r, eid, b_r}, e_r)):
        bnd = net.facets[comp].boundary
        idx = [i for i, (e2, _) in enumerate(bnd) if e2 in drop]
        if len(idx) != 3:
            raise EventBlockedError(f"facet {comp}: expected 3 entries to drop")
        rot2 = bnd[idx[0]:] + bnd[:idx[0]]
        rot2 = [(e2, j2) for e2, j2 in rot2 if e2 not in drop]
        s = e_new.origin if e_new.left == comp else e_new.terminus
        new_bnd = [(e_new.id, s)] + rot2
        jids = [j for _, j in new_bnd]
        r = jids.index(min(jids))
        new_bnd = new_bnd[r:] + new_bnd[:r]
        f2 = net.facets[comp]
        pa = net.junctions[new_bnd[0][1]].p
        updates.append(("facet", comp, {
            "boundary": new_bnd,
            "d": float(pa[2] - f2.g[0] * pa[0] - f2.g[1] * pa[1])}))

    # far junctions swap the dead emanating edge for the merged edge and
    # relabel the dead terminal facet
    for xid, e_new in ((a_l, e_l), (b_l, e_l), (a_r, e_r), (b_r, e_r)):
        jn = net.junctions[far[xid]]
        edges2 = sorted(x if x != xid else e_new.id for x in jn.edges)
        facets2 = sorted(f if f not in (to, tt) else fid_star
                         for f in jn.facets)
        updates.append(("junction", far[xid],
                        {"edges": edges2, "facets": facets2}))

    # everything else bordering the old terminals now borders the new facet
    seen_far = {far[x] for x in (a_l, a_r, b_l, b_r)}
    for fid_old in (to, tt):
        for e2, j2 in net.facets[fid_old].boundary:
            x = net.edges[e2]
            if e2 not in (eid, a_l, a_r, b_l, b_r):
                updates.append(("edge", e2, {
                    "left": fid_star if x.left == fid_old else x.left,
                    "right": fid_star if x.right == fid_old else x.right}))
            if j2 not in (jo, jt) and j2 not in seen_far:
                jn = net.junctions[j2]
                updates.append(("junction", j2, {
                    "facets": sorted(f if f not in (to, tt) else fid_star
                                     for f in jn.facets)}))

    net.mutate(
        deletions=[("edge", eid), ("edge", a_l), ("edge", a_r),
                   ("edge", b_l), ("edge", b_r),
                   ("junction", jo), ("junction", jt),
                   ("facet", to), ("facet", tt)],
        creations=[star, e_l, e_r],
        updates=updates, tag=f"FJ edge {eid}")
    rec.participants["new_facet"] = fid_star
    rec.facets_affected = {cl, cr, to, tt, fid_star}
    rec.deltas = (-2, -3, -1)
    rec.time = time
    return rec


def _leaving_edge(net: Network, fid: int, jid: int) -> int:
    for e2, j2 in net.facets[fid].boundary:
        if j2 == jid:
            return e2
    raise EventBlockedError(f"facet {fid}: no boundary entry starts at {jid}")


def _arriving_edge(net: Network, fid: int, jid: int) -> int:
    bnd = net.facets[fid].boundary
    for i, (e2, j2) in enumerate(bnd):
        if j2 == jid:
            return bnd[i - 1][0]
    raise EventBlockedError(f"facet {fid}: junction {jid} not on boundary")


# ------------------------------------------------------ facet constrictions

@dataclass
class ConstrictionSignature:
    """A facet that stopped being simply connected, and how."""

    kind: str                  # "junction_edge" | "edge_edge"
    facet: int
    junction: int | None = None
    edge: int | None = None    # pierced edge (junction_edge)
    edges: tuple | None = None # colliding pair (edge_edge)
    flavor: str | None = None  # symmetric | asymmetric (edge_edge)
    depth: float = 0.0


def detect_constriction(net: Network, fid: int,
                        touch_tol: float | None = None):
    """Signature of a constricted facet, or None.

    Examines the projected boundary polygon.  A junction that has crossed
    (or touches) a non-adjacent edge gives a junction-edge signature; two
    anti-parallel edges whose separating gap has closed give an edge-edge
    signature.  Junction-junction contacts are perturbed into whichever
    pairwise signature has the larger penetration depth.  Strictly convex
    polygons short-circuit to None.
    """
    f = net.facets[fid]
    jids = [j for _, j in f.boundary]
    eids = [e for e, _ in f.boundary]
    _, xy, _ = net.chart(fid)
    m = len(xy)
    if touch_tol is None:
        touch_tol = 1e-10 * net.L
    if polygon_is_convex(xy, eps=0.0):
        return None

    best = None

    def consider(sig):
        nonlocal best
        if best is None or sig.depth > best.depth:
            best = sig

    # junction-edge: vertex k against non-adjacent side (i, i+1)
    for k in range(m):
        for i in range(m):
            if i in (k, (k - 1) % m):
                continue
            a, b = xy[i], xy[(i + 1) % m]
            seg_prev = (xy[(k - 1) % m], xy[k])
            seg_next = (xy[k], xy[(k + 1) % m])
            c1 = segments_cross(*seg_prev, a, b)
            c2 = segments_cross(*seg_next, a, b)
            d = point_segment_distance(xy[k], a, b)
            if c1 and c2:
                consider(ConstrictionSignature(
                    "junction_edge", fid, junction=jids[k], edge=eids[i],
                    depth=d))
            elif d <= touch_tol and not (c1 or c2):
                consider(ConstrictionSignature(
                    "junction_edge", fid, junction=jids[k], edge=eids[i],
                    depth=touch_tol - d))

    # edge-edge: anti-parallel non-adjacent sides whose gap inverted
    for i in range(m):
        ti = net.edges[eids[i]].tangent
        di = xy[(i + 1) % m] - xy[i]
        ni = np.hypot(*di)
        if ni == 0:
            continue
        for j in range(i + 1, m):
            if j in ((i + 1) % m, (i - 1) % m):
                continue
            tj = net.edges[eids[j]].tangent
            if np.linalg.norm(np.cross(ti, tj)) > 1e-9:
                continue  # not parallel in 3D
            dj = xy[(j + 1) % m] - xy[j]
            if float(di @ dj) >= 0:
                continue  # boundary traversals must oppose
            u = di / ni
            nrm = np.array([-u[1], u[0]])  # interior side of edge i
            gap = float(nrm @ (xy[j] - xy[i]))
            s0, s1 = float(u @ xy[i]), float(u @ xy[(i + 1) % m])
            r0, r1 = float(u @ xy[j]), float(u @ xy[(j + 1) % m])
            lo = max(min(s0, s1), min(r0, r1))
            hi = min(max(s0, s1), max(r0, r1))
            if hi - lo <= 0:
                continue  # no span overlap
            if gap <= touch_tol:
                params = sorted(
                    [(s0, "i"), (s1, "i"), (r0, "j"), (r1, "j")])
                inner = {params[1][1], params[2][1]}
                flavor = "symmetric" if len(inner) == 1 else "asymmetric"
                consider(ConstrictionSignature(
                    "edge_edge", fid, edges=(eids[i], eids[j]),
                    flavor=flavor, depth=touch_tol - gap))
    return best


# ------------------------------------------------- hole construction/commit

def _facet_dead_run(net: Network, fid: int, dead_e, dead_j):
    """Indices of the contiguous boundary run to replace during a patch:
    entries with a dead edge or dead start junction.  Returns (rotated
    boundary, run length): the rotated list starts with the entry after the
    run, i.e. the surviving chain."""
    bnd = net.facets[fid].boundary
    m = len(bnd)
    flags = [(e in dead_e) or (j in dead_j) for e, j in bnd]
    k = sum(flags)
    if k == 0 or k == m:
        raise EventBlockedError(f"facet {fid}: no clean dead run")
    # find the start of the run (a flagged entry preceded by unflagged)
    starts = [i for i in range(m) if flags[i] and not flags[i - 1]]
    if len(starts) != 1:
        raise EventBlockedError(
            f"facet {fid}: boundary touches the hole more than once")
    s = starts[0]
    rot = bnd[(s + k) % m:] + bnd[:(s + k) % m]
    return rot[:m - k], bnd[s:(s + k)] if s + k <= m else bnd[s:] + bnd[:(s + k) % m]


def _commit_patch(net: Network, hole: ffr.Hole, cand, chart: LocalChart,
                  facet_of_pos, stub_new, chains, dead, extra_creations=(),
                  relabel=None, tag="patch"):
    """Apply a chosen reconnection to the network in one transaction.

    facet_of_pos: per hole position, either ("old", fid) or a new Facet.
    stub_new: per position, None (existing stub edge: trimmed) or a new
    Edge missing its patch endpoint.  chains: per position, the surviving
    boundary entries S_{i-1}..S_i of that facet.  dead: (junctions, edges,
    facets) id lists to delete.  relabel: {old_fid: {position: new_fid}}
    is handled through facet_of_pos; junction/edge references inside
    chains are rewritten to the position's facet automatically.
    """
    n = hole.n
    tri = cand.tri
    pts = cand.points
    jid_new = [net.new_junction_id() for _ in range(len(tri.triangles))]
    chord_eid = {}
    for p, c, ch in tri.chords:
        chord_eid[(p, c)] = net.new_edge_id()

    def fid_at(pos):
        spec = facet_of_pos[pos]
        return spec[1] if spec[0] == "old" else spec[1].id

    stored = {}
    kmap = {}
    for t in range(len(tri.triangles)):
        st, k = chart.stored_of(pts[t])
        stored[jid_new[t]] = st
        kmap[jid_new[t]] = k

    def kof(jid):
        return kmap[jid] if jid in kmap else chart.gamma(jid)

    creations = list(extra_creations)
    updates = []
    j_edges = {jid_new[t]: [] for t in range(len(tri.triangles))}

    # interior edges: orientation from the lower position's fan walk
    for p, c, (a, b) in tri.chords:
        eid2 = chord_eid[(p, c)]
        fan = tri.fans[a]
        ia = [fan.index(t) for t in (p, c)]
        first, second = (p, c) if ia[0] < ia[1] else (c, p)
        ga, gb = hole.gradients[a], hole.gradients[b]
        tau = np.cross(unit_normal(ga), unit_normal(gb))
        tau /= np.linalg.norm(tau)
        dvec = pts[second] - pts[first]
        if float(tau @ dvec) < 0:
            tau = -tau
        o, tm = jid_new[first], jid_new[second]
        creations.append(Edge(eid2, o, tm, fid_at(a), fid_at(b), tau,
                              LocalChart.wrap_between(kof(o), kof(tm))))
        j_edges[jid_new[p]].append(eid2)
        j_edges[jid_new[c]].append(eid2)

    # stubs: trim existing edges / complete new half edges
    stub_ids = []
    for i in range(n):
        t = tri.stub_assign[i]
        tj = jid_new[t]
        surv = hole.stub_survivors[i]
        if stub_new[i] is None:
            eid2 = hole.stub_edges[i]
            e2 = net.edges[eid2]
            o, tm = e2.origin, e2.terminus
            if hole.stub_survivor_is_origin[i]:
                tm = tj
            else:
                o = tj
            updates.append(("edge", eid2, {
                "origin": o, "terminus": tm,
                "wrap": LocalChart.wrap_between(kof(o), kof(tm))}))
        else:
            e2 = stub_new[i]
            eid2 = e2.id
            if hole.stub_survivor_is_origin[i]:
                e2.origin, e2.terminus = surv, tj
            else:
                e2.origin, e2.terminus = tj, surv
            e2.wrap = LocalChart.wrap_between(kof(e2.origin), kof(e2.terminus))
            creations.append(e2)
        stub_ids.append(eid2)
        j_edges[tj].append(eid2)

    for t in range(len(tri.triangles)):
        a, b, c = tri.triangles[t]
        if len(j_edges[jid_new[t]]) != 3:
            raise EventBlockedError("patch junction does not have 3 edges")
        creations.append(Junction(jid_new[t], stored[jid_new[t]],
                                  edges=j_edges[jid_new[t]],
                                  facets=[fid_at(a), fid_at(b), fid_at(c)]))

    # facet boundaries: entering stub + fan chords + exiting stub + chain
    relabel_j = {}
    for i in range(n):
        fid2 = fid_at(i)
        fan = tri.fans[i]
        run = [(stub_ids[i], hole.stub_survivors[i])]
        for kfan in range(len(fan) - 1):
            t1, t2 = fan[kfan], fan[kfan + 1]
            key = (t1, t2) if (t1, t2) in chord_eid else (t2, t1)
            run.append((chord_eid[key], jid_new[t1]))
        prev = (i - 1) % n
        run.append((stub_ids[prev], jid_new[fan[-1]]))
        bnd = run + list(chains[i])
        jids2 = [j for _, j in bnd]
        r = jids2.index(min(jids2))
        bnd = bnd[r:] + bnd[:r]
        aj = bnd[0][1]
        pos_a = stored.get(aj)
        if pos_a is None:
            pos_a = net.junctions[aj].p
        spec = facet_of_pos[i]
        if spec[0] == "old":
            f2 = net.facets[fid2]
            updates.append(("facet", fid2, {
                "boundary": bnd,
                "d": float(pos_a[2] - f2.g[0] * pos_a[0] - f2.g[1] * pos_a[1])}))
        else:
            f2 = spec[1]
            f2.boundary = bnd
            f2.d = float(pos_a[2] - f2.g[0] * pos_a[0] - f2.g[1] * pos_a[1])
            creations.append(f2)
            # chain edges and junctions now reference the replacement facet
            old_fid = spec[2]
            for e3, j3 in chains[i]:
                x = net.edges[e3]
                updates.append(("edge", e3, {
                    "left": fid2 if x.left == old_fid else x.left,
                    "right": fid2 if x.right == old_fid else x.right}))
                if j3 not in relabel_j:
                    relabel_j[j3] = list(net.junctions[j3].facets)
                relabel_j[j3] = [fid2 if f3 == old_fid else f3
                                 for f3 in relabel_j[j3]]
    # survivor junctions sit between positions i and i+1: relabel for both
    for i in range(n):
        surv = hole.stub_survivors[i]
        for pos in (i, (i + 1) % n):
            spec = facet_of_pos[pos]
            if spec[0] != "old":
                if surv not in relabel_j:
                    relabel_j[surv] = list(net.junctions[surv].facets)
                relabel_j[surv] = [spec[1].id if f3 == spec[2] else f3
                                   for f3 in relabel_j[surv]]
    for j3, fl in relabel_j.items():
        updates.append(("junction", j3, {"facets": sorted(fl)}))

    deletions = ([("junction", j) for j in dead[0]]
                 + [("edge", e) for e in dead[1]]
                 + [("facet", f) for f in dead[2]])
    net.mutate(deletions=deletions, creations=creations, updates=updates,
               tag=tag)
    return jid_new, chord_eid, stub_ids


# ------------------------------------------------------------- facet pierce

def resolve_facet_pierce(net: Network, fid: int, jid: int, eid: int,
                         velocities=None, time: float | None = None,
                         law=None) -> EventRecord:
    """Split a pierced facet in two where a neighboring wedge junction has
    met a non-adjacent boundary edge.

    The momentary order-5 junction breaks in one of three ways; the break
    whose newly created edges all grow under the instantaneous dynamics is
    kept (deterministic first-in-listing fallback on ties).  Count changes:
    dV=+2, dE=+3, dF=+1.
    """
    f = net.facets[fid]
    jn = net.junctions[jid]
    e = net.edges[eid]
    if fid not in jn.facets or fid not in (e.left, e.right):
        raise EventBlockedError("pierce participants do not border the facet")
    wedge = [x for x in jn.facets if x != fid]
    opp = e.other_facet(fid)
    A = plane_triple_matrix(net.facets[wedge[0]].g, net.facets[wedge[1]].g,
                            net.facets[opp].g)
    rec = EventRecord("FacetPierce",
                      {"facet": fid, "junction": jid, "edge": eid},
                      {fid, opp, *wedge}, time=time)
    if abs(np.linalg.det(A)) <= TAU_INDEP:
        rec.cls = "IrregularFacetPierce"
        raise UnsupportedEventError(
            f"facet {fid}: wedge and opposing normals are coplanar", rec)

    bnd = f.boundary
    m = len(bnd)
    k = next(i for i, (_, j2) in enumerate(bnd) if j2 == jid)
    q = next(i for i, (e2, _) in enumerate(bnd) if e2 == eid)
    leave_eid = bnd[k][0]
    arr_eid = bnd[(k - 1) % m][0]
    w_leave = net.edges[leave_eid].other_facet(fid)
    w_arr = net.edges[arr_eid].other_facet(fid)
    arc_a = [bnd[(k + 1 + i) % m] for i in range((q - k - 1) % m)]
    arc_b = [bnd[(q + 1 + i) % m] for i in range((k - 1 - q - 1) % m)]
    if not arc_a or not arc_b:
        raise EventBlockedError(
            f"facet {fid}: pierced edge adjacent to the wedge junction")

    e_first = net.edge_start_junction(e, fid)     # P enters e here
    e_second = e.other_junction(e_first)

    chart = LocalChart(net, jid)
    q_leave = chart.add_via_edge(leave_eid, jid)
    s_arr_chk = chart.add_via_edge(arr_eid, jid)
    s_m = None
    for x in jn.edges:
        if x not in (leave_eid, arr_eid):
            s_m = chart.add_via_edge(x, jid)
            m_eid = x
    if s_m is None:
        raise EventBlockedError("wedge middle edge missing")
    chart.walk_entries(arc_a)
    chart.add_via_edge(eid, e_first)
    chart.walk_entries(arc_b)

    # chains for the wedge facets and the opposing facet
    def chain_between(fid2, dead_start_eid, upto_eid):
        bnd2 = net.facets[fid2].boundary
        m2 = len(bnd2)
        s = next(i for i, (e2, j2) in enumerate(bnd2)
                 if e2 == dead_start_eid and j2 == jid)
        out = []
        i = (s + 1) % m2
        while bnd2[i][0] != upto_eid:
            out.append(bnd2[i])
            i = (i + 1) % m2
            if len(out) > m2:
                raise EventBlockedError("chain walk did not terminate")
        return out

    chain_warr = chain_between(w_arr, arr_eid, m_eid)
    chain_wleave = chain_between(w_leave, m_eid, leave_eid)
    bnd_o = net.facets[opp].boundary
    so = next(i for i, (e2, _) in enumerate(bnd_o) if e2 == eid)
    chain_o = [bnd_o[(so + 1 + i) % len(bnd_o)] for i in range(len(bnd_o) - 1)]

    chart.walk_entries(chain_warr)
    chart.walk_entries(chain_wleave)
    chart.walk_entries(chain_o)

    pa_id = net.new_facet_id()
    pb_id = net.new_facet_id()
    ea_id = net.new_edge_id()
    eb_id = net.new_edge_id()

    cycle = [pa_id, opp, pb_id, w_arr, w_leave]
    grads = np.array([f.g, net.facets[opp].g, f.g,
                      net.facets[w_arr].g, net.facets[w_leave].g])
    d_p = chart.offset(fid, jid)
    offs = np.array([d_p, chart.offset(opp, e_first), d_p,
                     chart.offset(w_arr, jid), chart.offset(w_leave, jid)])
    survivors = [e_first, e_second, s_arr_chk, s_m, q_leave]
    stub_eids = [ea_id, eb_id, arr_eid, m_eid, leave_eid]
    tangents = np.array([e.tangent, e.tangent,
                         net.edges[arr_eid].tangent,
                         net.edges[m_eid].tangent,
                         net.edges[leave_eid].tangent])
    is_orig = [e.origin == e_first, e.origin == e_second,
               net.edges[arr_eid].origin == s_arr_chk,
               net.edges[m_eid].origin == s_m,
               net.edges[leave_eid].origin == q_leave]
    chains = [arc_a, chain_o, arc_b, chain_warr, chain_wleave]
    chain_pts = []
    for i in range(5):
        pts = [chart.pos[j2][:2] for _, j2 in chains[i]]
        pts.append(chart.pos[survivors[i]][:2])
        chain_pts.append(np.asarray(pts))

    hole = ffr.Hole(cycle, grads, offs, stub_eids, survivors, tangents,
                    is_orig, np.array([chart.pos[s] for s in survivors]),
                    chain_pts, net.L)

    # candidates: consistent ones scored by their new edges' growth rates
    chosen = None
    chosen_growth = None
    for code in ffr.iter_tree_codes(5):
        cand = ffr.build_reconnection(hole, code)
        ok, why = ffr.is_consistent(hole, cand)
        if not ok:
            continue
        growth = _pierce_growth(net, hole, cand, fid, velocities, law,
                                chains, chart)
        if growth is None:
            if chosen is None:
                chosen, chosen_growth = cand, None
            continue
        if chosen_growth is None and chosen is not None and growth is not None:
            chosen, chosen_growth = cand, growth
            continue
        if chosen is None or (chosen_growth is not None
                              and growth > chosen_growth):
            chosen, chosen_growth = cand, growth
    if chosen is None:
        raise EventBlockedError(f"facet {fid}: no consistent pierce break")

    p_a = Facet(pa_id, f.g, d_p)
    p_b = Facet(pb_id, f.g, d_p)
    e_a = Edge(ea_id, 0, 0, 0, 0, e.tangent, (0, 0))
    e_b = Edge(eb_id, 0, 0, 0, 0, e.tangent, (0, 0))
    if e.left == fid:
        e_a.left, e_a.right = pa_id, opp
        e_b.left, e_b.right = pb_id, opp
    else:
        e_a.left, e_a.right = opp, pa_id
        e_b.left, e_b.right = opp, pb_id

    facet_of_pos = [("new", p_a, fid), ("old", opp), ("new", p_b, fid),
                    ("old", w_arr), ("old", w_leave)]
    stub_new = [e_a, e_b, None, None, None]
    _commit_patch(net, hole, chosen, chart, facet_of_pos, stub_new, chains,
                  dead=([jid], [eid], [fid]), tag=f"pierce facet {fid}")
    rec.participants.update(new_facets=(pa_id, pb_id), break_code=chosen.code)
    rec.facets_affected = {opp, w_arr, w_leave, pa_id, pb_id}
    rec.deltas = (2, 3, 1)
    return rec


def _pierce_growth(net, hole, cand, fid, velocities, law, chains, chart):
    """Minimum growth rate over the candidate's newly created edges, or
    None when no velocity information is available."""
    if velocities is None:
        return None
    vel = dict(velocities)
    v_p = vel.get(fid, 0.0)

    def value_at(pos):
        f2 = hole.facet_cycle[pos]
        if f2 in vel:
            return vel[f2]
        # a new half facet: evaluate the law on its candidate polygon
        if law is None:
            return v_p
        poly = [cand.points[t][:2] for t in cand.tri.fans[pos]]
        poly.extend(hole.chain_pts[pos])
        return law_local_velocity(law, np.asarray(poly),
                                  hole.gradients[pos], hole.offsets[pos], vel)

    def vj(tri_idx):
        a, b, c = cand.tri.triangles[tri_idx]
        return junction_velocity(
            [hole.gradients[a], hole.gradients[b], hole.gradients[c]],
            [value_at(a), value_at(b), value_at(c)])

    def v_survivor(i):
        jn = net.junctions[hole.stub_survivors[i]]
        gs, vs = [], []
        for f3 in jn.facets:
            if f3 == fid:
                # survivor borders one of the halves; its plane is the same
                gs.append(net.facets[fid].g)
                vs.append(value_at(0 if i in (0, 4) else 2))
            else:
                gs.append(net.facets[f3].g)
                vs.append(vel.get(f3, 0.0))
        return junction_velocity(gs, vs)

    rates = []
    for p, c, (a, b) in cand.tri.chords:
        d = cand.points[c] - cand.points[p]
        nd = np.linalg.norm(d)
        if nd == 0:
            return None
        rates.append(float((vj(c) - vj(p)) @ (d / nd)))
    for i in range(hole.n):
        t = cand.tri.stub_assign[i]
        d = cand.points[t] - hole.survivor_pts[i]
        tau = hole.stub_tangents[i]
        if not hole.stub_survivor_is_origin[i]:
            tau = -tau
        try:
            rate = float((vj(t) - v_survivor(i)) @ tau)
        except SingularTripleError:
            return None
        rates.append(rate)
    return min(rates)


def law_local_velocity(law, poly_xy, g, d_chart, field):
    """Evaluate a configurational law for a hypothetical facet given its
    chart polygon; used when scoring pierce break candidates."""
    kind = getattr(law, "kind", None)
    if kind == "constant":
        return float(law.params.get("c", 1.0))
    x, y = poly_xy[:, 0], poly_xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a2 = float(cr.sum())
    if a2 <= 0:
        return 0.0
    if kind == "area_power":
        s = float(np.sqrt(1 + g[0] ** 2 + g[1] ** 2))
        return float(law.params.get("c", 1.0)
                     * (0.5 * a2 * s) ** law.params.get("alpha", 1.0))
    cx = float(((x + xn) * cr).sum() / (3 * a2))
    cy = float(((y + yn) * cr).sum() / (3 * a2))
    return float(g[0] * cx + g[1] * cy + d_chart)  # mean height default


# ----------------------------------------------------- joining facet pinch

class _Rewrite:
    """Accumulates facet-reference relabels and endpoint swaps so that
    overlapping splices merge instead of clobbering each other."""

    def __init__(self, net: Network):
        self.net = net
        self.jfacets = {}
        self.jedges = {}
        self.efields = {}

    def relabel_entries(self, entries, old_to_new):
        for e3, j3 in entries:
            x = self.net.edges[e3]
            f = self.efields.setdefault(e3, {})
            left = f.get("left", x.left)
            right = f.get("right", x.right)
            f["left"] = old_to_new.get(left, left)
            f["right"] = old_to_new.get(right, right)
            self.relabel_junction(j3, old_to_new)

    def relabel_junction(self, j3, old_to_new):
        if j3 not in self.jfacets:
            self.jfacets[j3] = list(self.net.junctions[j3].facets)
        self.jfacets[j3] = [old_to_new.get(f3, f3) for f3 in self.jfacets[j3]]

    def swap_junction_edge(self, j3, lost, gained):
        if j3 not in self.jedges:
            self.jedges[j3] = list(self.net.junctions[j3].edges)
        self.jedges[j3] = [gained if x == lost else x for x in self.jedges[j3]]

    def set_edge_ends(self, eid, origin, terminus, wrap):
        f = self.efields.setdefault(eid, {})
        f.update(origin=origin, terminus=terminus,
                 wrap=np.asarray(wrap, dtype=np.int64))

    def updates(self):
        out = [("edge", e3, f) for e3, f in self.efields.items()]
        for j3, fl in self.jfacets.items():
            fields = {"facets": sorted(fl)}
            if j3 in self.jedges:
                fields["edges"] = sorted(self.jedges[j3])
            out.append(("junction", j3, fields))
        for j3, el in self.jedges.items():
            if j3 not in self.jfacets:
                out.append(("junction", j3, {"edges": sorted(el)}))
        return out


def resolve_joining_facet_pinch(net: Network, fid: int, eid1: int, eid2: int,
                                tau_join: float | None = None,
                                time: float | None = None) -> EventRecord:
    """Two parallel boundary edges of a facet meet: the facet splits in two
    while the identically-oriented impinging facets join into one.  Total
    element counts are unchanged.
    """
    f = net.facets[fid]
    e1, e2 = net.edges[eid1], net.edges[eid2]
    i1, i2 = e1.other_facet(fid), e2.other_facet(fid)
    rec = EventRecord("JoiningFacetPinch",
                      {"facet": fid, "edges": (eid1, eid2)},
                      {fid, i1, i2}, time=time)
    gi1, gi2 = net.facets[i1].g, net.facets[i2].g
    if not _grad_eq(gi1, gi2, max(1.0, float(np.abs(gi1).max()))):
        rec.cls = "FacetPinch"
        raise UnsupportedEventError(
            f"facet {fid}: impinging facets not identically oriented "
            "(non-joining pinch)", rec)
    if i1 == i2 or fid in (i1, i2):
        raise UnsupportedEventError(
            f"facet {fid}: degenerate pinch participants", rec)
    if tau_join is None:
        tau_join = TAU_JOIN_FACTOR * net.L

    _, _, _, d_a, d_b = _common_chart_offsets(net, i1, i2)
    if abs(d_a - d_b) > tau_join:
        raise HeightMismatchError(
            f"pinch heights differ by {abs(d_a - d_b):.3e}")
    if d_a != d_b:
        adjust_heights_for_join(net, i1, i2)

    bnd = f.boundary
    m = len(bnd)
    k1 = next(i for i, (e3, _) in enumerate(bnd) if e3 == eid1)
    k2 = next(i for i, (e3, _) in enumerate(bnd) if e3 == eid2)
    arc1 = [bnd[(k1 + 1 + i) % m] for i in range((k2 - k1 - 1) % m)]
    arc2 = [bnd[(k2 + 1 + i) % m] for i in range((k1 - k2 - 1) % m)]
    if len(arc1) < 2 or len(arc2) < 2:
        raise EventBlockedError(f"facet {fid}: pinch arcs too short")

    chart = LocalChart(net, bnd[k1][1])
    chart.walk_entries([bnd[(k1 + i) % m] for i in range(m)])

    # colliding endpoints along the common line: the middle two are the
    # involved junctions
    u2 = e1.tangent[:2] / np.hypot(*e1.tangent[:2])
    quad = []
    for e3 in (e1, e2):
        for j3 in (e3.origin, e3.terminus):
            quad.append((float(u2 @ chart.pos[j3][:2]), j3, e3.id))
    quad.sort()
    inner = quad[1:3]
    if inner[1][0] - inner[0][0] <= 0:
        raise EventBlockedError(f"facet {fid}: colliding edges do not overlap")
    owners = {x[2] for x in inner}
    flavor = "symmetric" if len(owners) == 1 else "asymmetric"
    rec.participants["flavor"] = flavor

    pa_id = net.new_facet_id()
    pb_id = net.new_facet_id()
    istar_id = net.new_facet_id()
    rw = _Rewrite(net)

    def pos_of(jid):
        return net.junctions[jid].p

    if flavor == "asymmetric":
        j_in1 = next(j for s, j, e3 in inner if e3 == eid1)
        j_in2 = next(j for s, j, e3 in inner if e3 == eid2)
        s1 = net.edge_start_junction(e1, fid)
        s2 = net.edge_start_junction(e2, fid)
        inner_starts = (s1 == j_in1)
        if (s2 == j_in2) != inner_starts:
            raise EventBlockedError(f"facet {fid}: inconsistent pinch geometry")

        # trim each edge to the other's inner junction
        o1, t1 = (j_in2, e1.terminus) if e1.origin == j_in1 else (e1.origin, j_in2)
        o2, t2 = (j_in1, e2.terminus) if e2.origin == j_in2 else (e2.origin, j_in1)
        rw.set_edge_ends(eid1, o1, t1,
                         LocalChart.wrap_between(chart.gamma(o1), chart.gamma(t1)))
        rw.set_edge_ends(eid2, o2, t2,
                         LocalChart.wrap_between(chart.gamma(o2), chart.gamma(t2)))
        rw.swap_junction_edge(j_in1, eid1, eid2)
        rw.swap_junction_edge(j_in2, eid2, eid1)

        if inner_starts:
            ent1, arc_for_1 = (eid1, j_in2), arc1
            ent2, arc_for_2 = (eid2, j_in1), arc2
        else:
            ent1, arc_for_1 = (eid1, s1), arc2
            ent2, arc_for_2 = (eid2, s2), arc1

        pa = Facet(pa_id, f.g, f.d)   # half keeping e1
        pb = Facet(pb_id, f.g, f.d)   # half keeping e2
        rw.relabel_entries(arc_for_1, {fid: pa_id})
        rw.relabel_entries(arc_for_2, {fid: pb_id})
        rw.relabel_junction(j_in1, {fid: pb_id, i1: istar_id, i2: istar_id})
        rw.relabel_junction(j_in2, {fid: pa_id, i1: istar_id, i2: istar_id})
        _finish_facet(net, pa, [ent1] + arc_for_1, pos_of)
        _finish_facet(net, pb, [ent2] + arc_for_2, pos_of)

        c1 = _cycle_from(net.facets[i1].boundary, eid1)
        c2 = _cycle_from(net.facets[i2].boundary, eid2)
        rw.relabel_entries(c1[1:], {i1: istar_id})
        rw.relabel_entries(c2[1:], {i2: istar_id})
        star = Facet(istar_id, net.facets[i1].g, 0.0)
        if inner_starts:
            star_entries = ([(eid1, c1[0][1])] + c2[1:]
                            + [(eid2, c2[0][1])] + c1[1:])
        else:
            star_entries = ([(eid1, j_in2)] + c1[1:]
                            + [(eid2, j_in1)] + c2[1:])
        _finish_facet(net, star, star_entries, pos_of)
        inner_js = (j_in1, j_in2)
        creations = [pa, pb, star]
        deletions = [("facet", fid), ("facet", i1), ("facet", i2)]
    else:
        nested_eid = inner[0][2]
        long_e = e2 if nested_eid == eid1 else e1
        nest_e = e1 if nested_eid == eid1 else e2
        i_long = long_e.other_facet(fid)
        i_nest = nest_e.other_facet(fid)
        u3 = long_e.tangent
        j_lo, j_hi = nest_e.origin, nest_e.terminus
        if float(u3 @ (chart.pos[j_hi] - chart.pos[j_lo])) < 0:
            j_lo, j_hi = j_hi, j_lo
        o_long, t_long = long_e.origin, long_e.terminus
        if float(u3 @ (chart.pos[t_long] - chart.pos[o_long])) < 0:
            raise EventBlockedError("long edge stored against its tangent")
        new_eid = net.new_edge_id()
        rw.set_edge_ends(long_e.id, o_long, j_lo,
                         LocalChart.wrap_between(chart.gamma(o_long),
                                                 chart.gamma(j_lo)))
        piece = Edge(new_eid, j_hi, t_long, long_e.left, long_e.right,
                     long_e.tangent,
                     LocalChart.wrap_between(chart.gamma(j_hi),
                                             chart.gamma(t_long)))
        rw.swap_junction_edge(j_lo, nest_e.id, long_e.id)
        rw.swap_junction_edge(j_hi, nest_e.id, new_eid)
        rw.swap_junction_edge(t_long, long_e.id, new_eid)

        arc_after_long = arc1 if long_e is e1 else arc2
        arc_after_nest = arc2 if long_e is e1 else arc1
        s_long_p = net.edge_start_junction(long_e, fid)
        p_walks_u = (s_long_p == o_long)
        if p_walks_u:
            ent_o, arc_o = (long_e.id, o_long), arc_after_nest
            ent_t, arc_t = (new_eid, j_hi), arc_after_long
        else:
            ent_o, arc_o = (long_e.id, j_lo), arc_after_long
            ent_t, arc_t = (new_eid, t_long), arc_after_nest

        pa = Facet(pa_id, f.g, f.d)   # origin-side half
        pb = Facet(pb_id, f.g, f.d)
        rw.relabel_entries(arc_o, {fid: pa_id})
        rw.relabel_entries(arc_t, {fid: pb_id})
        rw.relabel_junction(j_lo, {fid: pa_id, i_nest: istar_id,
                                   i_long: istar_id})
        rw.relabel_junction(j_hi, {fid: pb_id, i_nest: istar_id,
                                   i_long: istar_id})
        _finish_facet(net, pa, [ent_o] + arc_o, pos_of)
        _finish_facet(net, pb, [ent_t] + arc_t, pos_of)

        c_long = _cycle_from(net.facets[i_long].boundary, long_e.id)
        c_nest = _cycle_from(net.facets[i_nest].boundary, nest_e.id)
        rw.relabel_entries(c_long[1:], {i_long: istar_id})
        rw.relabel_entries(c_nest[1:], {i_nest: istar_id})
        star = Facet(istar_id, net.facets[i_long].g, 0.0)
        i_walks_u = (c_long[0][1] == o_long)
        if i_walks_u:
            star_entries = ([(long_e.id, o_long)] + c_nest[1:]
                            + [(new_eid, j_hi)] + c_long[1:])
        else:
            star_entries = ([(new_eid, t_long)] + c_nest[1:]
                            + [(long_e.id, j_lo)] + c_long[1:])
        _finish_facet(net, star, star_entries, pos_of)
        inner_js = (j_lo, j_hi)
        creations = [pa, pb, star, piece]
        deletions = [("facet", fid), ("facet", i1), ("facet", i2),
                     ("edge", nest_e.id)]

    net.mutate(deletions=deletions, creations=creations,
               updates=rw.updates(), tag=f"JFP facet {fid} ({flavor})")
    for jx in inner_js:
        reclose_junction(net, jx)
    rec.participants.update(new_facets=(pa_id, pb_id), joined=istar_id)
    rec.deltas = (0, 0, 0)
    rec.facets_affected = {pa_id, pb_id, istar_id}
    return rec


def _cycle_from(bnd, start_eid):
    m = len(bnd)
    s = next(i for i, (e3, _) in enumerate(bnd) if e3 == start_eid)
    return [bnd[(s + i) % m] for i in range(m)]


def _finish_facet(net, fobj, entries, pos_of):
    jids = [j for _, j in entries]
    r = jids.index(min(jids))
    fobj.boundary = entries[r:] + entries[:r]
    aj = fobj.boundary[0][1]
    p = pos_of(aj)
    fobj.d = float(p[2] - fobj.g[0] * p[0] - fobj.g[1] * p[1])


# ---------------------------------------------------------- vanishing facets

@dataclass
class NearField:
    """A connected group of small facets to delete together."""

    facets: list                    # ids, insertion order
    seed: int

    def __contains__(self, fid):
        return fid in set(self.facets)


def collect_near_field(net: Network, seed_fid: int, eps_a: float,
                       eps_b: float) -> NearField:
    """Grow the deletion group from a facet below the trigger threshold by
    recursively adding neighbors below the (larger) collection threshold."""
    if not facet_area(net, seed_fid) < eps_a:
        raise EventBlockedError(f"facet {seed_fid}: area not below trigger")
    group = [seed_fid]
    seen = {seed_fid}
    queue = deque([seed_fid])
    while queue:
        fid = queue.popleft()
        for nb in net.facet_neighbors(fid):
            if nb in seen:
                continue
            if facet_area(net, nb) < eps_b:
                seen.add(nb)
                group.append(nb)
                queue.append(nb)
    return NearField(group, seed_fid)


def _near_field_deletions(net: Network, nf_set):
    dead_j = sorted(j.id for j in net.junctions.values()
                    if set(j.facets) & nf_set)
    dead_e = set()
    stubs = set()
    for e in net.edges.values():
        if e.left in nf_set or e.right in nf_set:
            dead_e.add(e.id)
            continue
        no = e.origin in set(dead_j)
        nt = e.terminus in set(dead_j)
        if no and nt:
            return None  # engulfed far edge: defer
        if no or nt:
            stubs.add(e.id)
    return dead_j, sorted(dead_e), stubs


def bounding_cycle(net: Network, nf: NearField):
    """Far-field facet cycle and stub edges around a near field, walked so
    the hole stays on the consistent side; None when the region is not a
    clean disk (deferral)."""
    nf_set = set(nf.facets)
    dd = _near_field_deletions(net, nf_set)
    if dd is None:
        return None
    dead_j, dead_e, stubs = dd
    dj = set(dead_j)
    de = set(dead_e)
    if not stubs:
        return None

    def entering_stub(fid):
        bnd = net.facets[fid].boundary
        m2 = len(bnd)
        cands = []
        for i, (e3, j3) in enumerate(bnd):
            nxt = bnd[(i + 1) % m2]
            dead_here = (e3 in de) or (j3 in dj)
            next_dead = (nxt[0] in de) or (nxt[1] in dj)
            if e3 in stubs and j3 not in dj and next_dead:
                cands.append(e3)
        return cands

    start_stub = min(stubs)
    e0 = net.edges[start_stub]
    f0 = None
    for cand_f in (e0.left, e0.right):
        if cand_f in nf_set:
            return None
        if start_stub in entering_stub(cand_f):
            f0 = cand_f
    if f0 is None:
        return None
    cycle = []
    stub_seq = []
    fid = f0
    for _ in range(len(stubs) + 1):
        ent = entering_stub(fid)
        if len(ent) != 1:
            return None  # facet touches the hole 0 or 2+ times
        cycle.append(fid)
        stub_seq.append(ent[0])
        fid = net.edges[ent[0]].other_facet(fid)
        if fid == f0:
            break
    else:
        return None
    if len(cycle) != len(stubs):
        return None  # multiple rim cycles: not a disk
    return cycle, stub_seq, dead_j, dead_e


def detect_step(net: Network, cycle) -> int | None:
    """A near field bounded by exactly four facets, exactly one pair of
    which share a gradient, vanishes as those facets join: returns the
    parallel facet with fewer edges (to be absorbed into the near field),
    else None."""
    if len(cycle) != 4:
        return None
    pairs = []
    for a in range(4):
        for b in range(a + 1, 4):
            ga = net.facets[cycle[a]].g
            gb = net.facets[cycle[b]].g
            if _grad_eq(ga, gb, max(1.0, float(np.abs(ga).max()))):
                pairs.append((cycle[a], cycle[b]))
    if len(pairs) != 1:
        return None
    fa, fb = pairs[0]
    return fa if len(net.facets[fa].boundary) <= len(net.facets[fb].boundary) \
        else fb


def build_hole(net: Network, nf: NearField):
    """Chart the far field around a near field; None defers the removal."""
    bc = bounding_cycle(net, nf)
    if bc is None:
        return None
    cycle, stub_seq, dead_j, dead_e = bc
    n = len(cycle)
    dj, de = set(dead_j), set(dead_e)

    chains = []
    for i, fid in enumerate(cycle):
        bnd = net.facets[fid].boundary
        m2 = len(bnd)
        s = next(k for k, (e3, _) in enumerate(bnd) if e3 == stub_seq[i])
        chain = []
        k = (s + 1) % m2
        skipped = 0
        while (bnd[k][0] in de) or (bnd[k][1] in dj):
            k = (k + 1) % m2
            skipped += 1
            if skipped > m2:
                return None
        while bnd[k][0] != stub_seq[i]:
            chain.append(bnd[k])
            k = (k + 1) % m2
            if len(chain) > m2:
                return None
        if not chain:
            return None
        chains.append(chain)

    survivors = []
    for i in range(n):
        e3 = net.edges[stub_seq[i]]
        surv = e3.origin if e3.origin not in dj else e3.terminus
        if surv in dj:
            return None
        survivors.append(surv)

    base = survivors[-1]
    chart = LocalChart(net, base)
    try:
        for i in range(n):
            # chain i runs from survivor[i-1] to survivor[i]
            chart.walk_entries(chains[i])
    except EventBlockedError:
        return None

    # verify ring closure in the chart
    for i in range(n):
        if survivors[i] not in chart.pos:
            return None

    grads = np.array([net.facets[f3].g for f3 in cycle])
    offs = np.array([chart.offset(cycle[i], survivors[i]) for i in range(n)])
    tangents = np.array([net.edges[e3].tangent for e3 in stub_seq])
    is_orig = [net.edges[stub_seq[i]].origin == survivors[i]
               for i in range(n)]
    chain_pts = []
    for i in range(n):
        pts = [chart.pos[j3][:2] for _, j3 in chains[i]]
        pts.append(chart.pos[survivors[i]][:2])
        chain_pts.append(np.asarray(pts))
    try:
        hole = ffr.Hole(cycle, grads, offs, list(stub_seq), survivors,
                        tangents, is_orig,
                        np.array([chart.pos[s] for s in survivors]),
                        chain_pts, net.L)
    except ValueError:
        return None  # e.g. adjacent equal gradients after failed step pass
    return hole, chart, chains, (dead_j, dead_e, sorted(nf.facets))


def remove_and_patch(net: Network, nf: NearField,
                     policy: str = "require-unique",
                     time: float | None = None) -> EventRecord | None:
    """Delete a near field and patch the hole with the consistent far-field
    reconnection; returns None when the removal is deferred (no unique
    consistent candidate, or the region is not a clean disk yet)."""
    # step handling first: absorb one large parallel bounding facet
    for _ in range(4):
        bc = bounding_cycle(net, nf)
        if bc is None:
            return None
        extra = detect_step(net, bc[0])
        if extra is None:
            break
        if len(nf.facets) + 1 > MAX_NEAR_FIELD:
            return None
        nf = NearField(nf.facets + [extra], nf.seed)
    if len(nf.facets) > MAX_NEAR_FIELD:
        return None
    built = build_hole(net, nf)
    if built is None:
        return None
    hole, chart, chains, dead = built
    cand = ffr.reconnect(hole, policy)
    if cand is None:
        return None
    facet_of_pos = [("old", f3) for f3 in hole.facet_cycle]
    stub_new = [None] * hole.n
    _commit_patch(net, hole, cand, chart, facet_of_pos, stub_new, chains,
                  dead=dead, tag=f"remove {nf.facets}")
    n = hole.n
    nnf = len(nf.facets)
    rec = EventRecord(
        "GroupVanishing" if nnf > 1 else "VanishingFacet",
        {"near_field": tuple(sorted(nf.facets)), "code": cand.code,
         "far_field": tuple(hole.facet_cycle)},
        set(hole.facet_cycle), time=time)
    rec.deltas = (-len(dead[0]) + (n - 2), -len(dead[1]) + (n - 3), -nnf)
    return rec
