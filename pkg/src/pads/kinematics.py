"""Geometric queries and motion: plane intersections, junction velocities,
signed edge lengths, facet areas/mean heights, and the advance step.

Junction positions are never integrated; after every offset update they are
re-derived as the exact intersection of their three facet planes, so
geometric closure is structural rather than numerical.  The inverse-matrix
velocity relation dp/dt = A^-1 v (A = unit-normal rows, v = normal
velocities) is retained for event-time prediction and cross-checks.

A GeomCache flattens the network into numpy arrays so that the hot
per-step operations (offset update, batched junction solve, areas, mean
heights, signed lengths) run vectorized.  The cache is invalidated by any
structural change (network.version).
"""

from __future__ import annotations

import numpy as np

from .errors import DegeneratePolygonError, SingularTripleError
from .network import Network, facet_scale, unit_normal

TAU_INDEP = 1e-12  # singularity threshold on |det A| with unit-normal rows


# ----------------------------------------------------------- plane algebra

def plane_triple_matrix(g1, g2, g3) -> np.ndarray:
    """Rows are the three upward unit normals."""
    return np.vstack([unit_normal(g1), unit_normal(g2), unit_normal(g3)])


def triple_is_singular(g1, g2, g3, tau: float = TAU_INDEP) -> bool:
    A = plane_triple_matrix(g1, g2, g3)
    return abs(np.linalg.det(A)) <= tau


def intersect_planes(g1, d1, g2, d2, g3, d3, tau: float = TAU_INDEP) -> np.ndarray:
    """Unique point on the three planes z = g_i.(x,y) + d_i, in the chart the
    offsets are expressed in.  Raises SingularTripleError if the gradients
    are collinear (three coplanar normals: an irregular configuration)."""
    if triple_is_singular(g1, g2, g3, tau):
        raise SingularTripleError(
            f"gradients {tuple(g1)}, {tuple(g2)}, {tuple(g3)} are collinear")
    a = np.array([[g1[0] - g2[0], g1[1] - g2[1]],
                  [g1[0] - g3[0], g1[1] - g3[1]]])
    b = np.array([d2 - d1, d3 - d1])
    xy = np.linalg.solve(a, b)
    z = g1[0] * xy[0] + g1[1] * xy[1] + d1
    return np.array([xy[0], xy[1], z])


def junction_velocity(gradients, velocities, tau: float = TAU_INDEP) -> np.ndarray:
    """dp/dt = A^-1 v for a triple of facets.

    gradients: three facet gradients; velocities: the three normal
    velocities, in the same order.
    """
    A = plane_triple_matrix(*gradients)
    if abs(np.linalg.det(A)) <= tau:
        raise SingularTripleError("triple has linearly dependent normals")
    return np.linalg.solve(A, np.asarray(velocities, dtype=float))


# ------------------------------------------------- object-level queries

def local_plane_offsets(net: Network, jid: int):
    """Offsets of a junction's three facet planes in the junction's own
    chart (anchored at its stored coordinates).

    Walks each incident facet's boundary to the junction, accumulating wrap
    vectors, so the offsets are exact integer-wrap translates of the facet
    offsets.  Returns (facet_ids, gradients (3,2), offsets (3,)).
    """
    jn = net.junctions[jid]
    fids = list(jn.facets)
    G = np.empty((3, 2))
    D = np.empty(3)
    for k, fid in enumerate(fids):
        f = net.facets[fid]
        jids, _, W = net.chart(fid)
        i = jids.index(jid)
        G[k] = f.g
        D[k] = f.d + net.L * (f.g[0] * W[i, 0] + f.g[1] * W[i, 1])
    return fids, G, D


def junction_position(net: Network, f1: int, f2: int, f3: int, near,
                      offsets=None) -> np.ndarray:
    """Intersection point of three facet planes, selected near a hint.

    `near` is an (x, y) hint in some local chart; `offsets`, when given,
    are the plane offsets expressed in that same chart.  Without explicit
    offsets the facets' stored offsets are used and the solution is shifted
    by whole periods to land nearest the hint (gradient-generic facets
    pin the correct image through their offsets; the shift handles hints
    given in a wrapped frame).  The returned point is not wrapped.
    """
    fa, fb, fc = net.facets[f1], net.facets[f2], net.facets[f3]
    if offsets is None:
        offsets = (fa.d, fb.d, fc.d)
    p = intersect_planes(fa.g, offsets[0], fb.g, offsets[1], fc.g, offsets[2])
    if near is not None:
        k = np.rint((np.asarray(near, dtype=float) - p[:2]) / net.L)
        p[0] += net.L * k[0]
        p[1] += net.L * k[1]
        # z is chart-dependent only through the offsets, which are fixed here
    return p


def reclose_junction(net: Network, jid: int) -> None:
    """Recompute a junction's position exactly from its three facet planes,
    keeping the stored coordinates wrapped and propagating wrap changes to
    incident edges and anchored offsets."""
    _, G, D = local_plane_offsets(net, jid)
    p = intersect_planes(G[0], D[0], G[1], D[1], G[2], D[2])
    _store_wrapped(net, jid, p)


def _store_wrapped(net: Network, jid: int, p: np.ndarray) -> None:
    """Store a junction position computed in its local chart, wrapping the
    (x, y) part into [0, L)^2 and fixing up incident wraps/anchors."""
    L = net.L
    gam = np.floor(p[:2] / L).astype(np.int64)
    jn = net.junctions[jid]
    jn.p = np.array([p[0] - L * gam[0], p[1] - L * gam[1], p[2]])
    if gam[0] == 0 and gam[1] == 0:
        return
    for eid in jn.edges:
        e = net.edges[eid]
        if e.origin == jid:
            e.wrap = e.wrap - gam
        if e.terminus == jid:
            e.wrap = e.wrap + gam
    for fid in jn.facets:
        f = net.facets[fid]
        if f.boundary and f.boundary[0][1] == jid:
            # anchor moved by -L*gam; keep the plane fixed
            f.d = float(f.d + L * (f.g[0] * gam[0] + f.g[1] * gam[1]))
    net.version += 1


def edge_signed_length(net: Network, eid: int) -> float:
    """dot(wrap-corrected terminus - origin, tangent); negative iff flipped."""
    e = net.edges[eid]
    return float(net.edge_disp(e) @ e.tangent)


def edge_is_convex(net: Network, eid: int) -> bool:
    """Ridge (convex dihedral, surface locally the lower plane envelope) vs
    valley: sign of tangent . cross(n_left, n_right)."""
    e = net.edges[eid]
    nl = unit_normal(net.facets[e.left].g)
    nr = unit_normal(net.facets[e.right].g)
    return float(e.tangent @ np.cross(nl, nr)) > 0.0


def facet_chart_polygon(net: Network, fid: int) -> np.ndarray:
    """Projected boundary polygon of a facet in its own chart, one row per
    boundary junction."""
    _, xy, _ = net.chart(fid)
    return xy


def facet_area(net: Network, fid: int) -> float:
    """True (slanted) area: projected shoelace area times sqrt(1+|g|^2)."""
    f = net.facets[fid]
    xy = facet_chart_polygon(net, fid)
    a2 = float(np.cross(xy, np.roll(xy, -1, axis=0)).sum())
    if a2 <= 0.0:
        raise DegeneratePolygonError(
            f"facet {fid}: projected area {a2 / 2:.3e} <= 0")
    return 0.5 * a2 * f.scale


def facet_mean_height(net: Network, fid: int) -> float:
    """Mean of h over the facet: g.(projected centroid) + d (exact for an
    affine height field)."""
    f = net.facets[fid]
    xy = facet_chart_polygon(net, fid)
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a2 = float(cr.sum())
    if a2 <= 0.0:
        raise DegeneratePolygonError(
            f"facet {fid}: projected area {a2 / 2:.3e} <= 0")
    cx = float(((x + xn) * cr).sum() / (3.0 * a2))
    cy = float(((y + yn) * cr).sum() / (3.0 * a2))
    return float(f.g[0] * cx + f.g[1] * cy + f.d)


# ------------------------------------------------------------- GeomCache

class GeomCache:
    """Flat numpy view of a network for vectorized stepping and scans.

    Valid only for the network version it was built from; rebuild after any
    structural change.  Boundary cycles are stored in CSR form together with
    the integer wrap offset of every boundary junction relative to the
    facet's anchor, so chart coordinates are exact translates.
    """

    def __init__(self, net: Network):
        self.net = net
        self.version = net.version
        self.L = net.L

        self.fids = list(net.facets.keys())
        self.frow = {fid: i for i, fid in enumerate(self.fids)}
        F = len(self.fids)
        self.G = np.empty((F, 2))
        self.S = np.empty(F)
        self.D = np.empty(F)
        for i, fid in enumerate(self.fids):
            f = net.facets[fid]
            self.G[i] = f.g
            self.S[i] = facet_scale(f.g)
            self.D[i] = f.d

        self.jids = list(net.junctions.keys())
        self.jrow = {jid: i for i, jid in enumerate(self.jids)}
        V = len(self.jids)
        self.P = np.empty((V, 3))
        self.JF = np.empty((V, 3), dtype=np.int64)
        for i, jid in enumerate(self.jids):
            jn = net.junctions[jid]
            self.P[i] = jn.p
            self.JF[i] = [self.frow[fid] for fid in jn.facets]
        self.JW = np.zeros((V, 3, 2), dtype=np.int64)

        self.eids = list(net.edges.keys())
        self.erow = {eid: i for i, eid in enumerate(self.eids)}
        E = len(self.eids)
        self.EO = np.empty(E, dtype=np.int64)
        self.ET = np.empty(E, dtype=np.int64)
        self.EL = np.empty(E, dtype=np.int64)
        self.ER = np.empty(E, dtype=np.int64)
        self.EW = np.zeros((E, 3))
        self.ETAN = np.empty((E, 3))
        for i, eid in enumerate(self.eids):
            e = net.edges[eid]
            self.EO[i] = self.jrow[e.origin]
            self.ET[i] = self.jrow[e.terminus]
            self.EL[i] = self.frow[e.left]
            self.ER[i] = self.frow[e.right]
            self.EW[i, :2] = e.wrap
            self.ETAN[i] = e.tangent

        # boundary CSR with accumulated wrap offsets
        off = np.zeros(F + 1, dtype=np.int64)
        for i, fid in enumerate(self.fids):
            off[i + 1] = off[i] + len(net.facets[fid].boundary)
        self.off = off
        B = int(off[-1])
        self.bj = np.empty(B, dtype=np.int64)
        self.bW = np.zeros((B, 2), dtype=np.int64)
        self.bnext = np.empty(B, dtype=np.int64)
        for i, fid in enumerate(self.fids):
            f = net.facets[fid]
            base = off[i]
            acc = np.zeros(2, dtype=np.int64)
            m = len(f.boundary)
            for k, (eid, jid) in enumerate(f.boundary):
                vrow = self.jrow[jid]
                self.bj[base + k] = vrow
                self.bW[base + k] = acc
                self.bnext[base + k] = base + (k + 1) % m
                slot = np.nonzero(self.JF[vrow] == i)[0]
                self.JW[vrow, slot[0]] = acc
                e = net.edges[eid]
                acc = acc + (e.wrap if e.origin == jid else -e.wrap)

    # --------------------------------------------------------- primitives

    def positions(self, D: np.ndarray) -> np.ndarray:
        """Batched plane-triple solve: junction positions (local charts)
        for the given offset vector."""
        G, L = self.G, self.L
        g = G[self.JF]                       # (V,3,2)
        Dloc = D[self.JF] + L * np.einsum("vkc,vkc->vk", g, self.JW)
        a11 = g[:, 0, 0] - g[:, 1, 0]
        a12 = g[:, 0, 1] - g[:, 1, 1]
        a21 = g[:, 0, 0] - g[:, 2, 0]
        a22 = g[:, 0, 1] - g[:, 2, 1]
        b1 = Dloc[:, 1] - Dloc[:, 0]
        b2 = Dloc[:, 2] - Dloc[:, 0]
        det = a11 * a22 - a12 * a21
        if np.any(np.abs(det) < 1e-300):
            bad = int(np.argmin(np.abs(det)))
            raise SingularTripleError(
                f"junction {self.jids[bad]}: plane triple became singular")
        x = (b1 * a22 - b2 * a12) / det
        y = (a11 * b2 - a21 * b1) / det
        z = g[:, 0, 0] * x + g[:, 0, 1] * y + Dloc[:, 0]
        return np.column_stack([x, y, z])

    def signed_lengths(self, P: np.ndarray) -> np.ndarray:
        disp = P[self.ET] - P[self.EO] + self.L * self.EW
        return np.einsum("ec,ec->e", disp, self.ETAN)

    def chart_xy(self, P: np.ndarray) -> np.ndarray:
        """Chart coordinates of every boundary slot (CSR order)."""
        return P[self.bj, :2] + self.L * self.bW

    def _shoelace(self, P: np.ndarray):
        X = self.chart_xy(P)
        Xn = X[self.bnext]
        cr = X[:, 0] * Xn[:, 1] - X[:, 1] * Xn[:, 0]
        segs = self.off[:-1]
        a2 = np.add.reduceat(cr, segs) if len(cr) else np.zeros(0)
        return X, Xn, cr, a2

    def areas2(self, P: np.ndarray) -> np.ndarray:
        """Twice the projected polygon area per facet (signed)."""
        return self._shoelace(P)[3]

    def areas(self, P: np.ndarray) -> np.ndarray:
        return 0.5 * self.areas2(P) * self.S

    def mean_heights(self, P: np.ndarray, D: np.ndarray) -> np.ndarray:
        X, Xn, cr, a2 = self._shoelace(P)
        segs = self.off[:-1]
        cx = np.add.reduceat((X[:, 0] + Xn[:, 0]) * cr, segs) / (3.0 * a2)
        cy = np.add.reduceat((X[:, 1] + Xn[:, 1]) * cr, segs) / (3.0 * a2)
        return self.G[:, 0] * cx + self.G[:, 1] * cy + D

    # ------------------------------------------------------------ commit

    def velocity_array(self, velocities) -> np.ndarray:
        """Align a {facet_id: V} mapping with the cache's facet rows."""
        V = np.empty(len(self.fids))
        for i, fid in enumerate(self.fids):
            V[i] = velocities[fid]
        if not np.all(np.isfinite(V)):
            raise ValueError("velocity field contains non-finite entries")
        return V

    def commit(self, D: np.ndarray, P: np.ndarray) -> None:
        """Write offsets and positions back to the network, wrapping stored
        coordinates and propagating wrap changes to incident edges and to
        offsets anchored at re-wrapped junctions."""
        net, L = self.net, self.L
        gam = np.floor(P[:, :2] / L).astype(np.int64)
        Pw = P.copy()
        Pw[:, 0] -= L * gam[:, 0]
        Pw[:, 1] -= L * gam[:, 1]
        for i, fid in enumerate(self.fids):
            net.facets[fid].d = float(D[i])
        for i, jid in enumerate(self.jids):
            net.junctions[jid].p = Pw[i].copy()
        if np.any(gam):
            for i, eid in enumerate(self.eids):
                go = gam[self.EO[i]]
                gt = gam[self.ET[i]]
                if go[0] or go[1] or gt[0] or gt[1]:
                    e = net.edges[eid]
                    e.wrap = e.wrap + gt - go
            for i, fid in enumerate(self.fids):
                arow = self.bj[self.off[i]]
                ga = gam[arow]
                if ga[0] or ga[1]:
                    f = net.facets[fid]
                    f.d = float(f.d + L * (f.g[0] * ga[0] + f.g[1] * ga[1]))
            net.version += 1
            self.version = net.version  # wraps changed; caller must rebuild
            self._stale = True
        self.P = Pw
        self.D = D.copy()

    @property
    def stale(self) -> bool:
        return getattr(self, "_stale", False) or self.version != self.net.version


def get_cache(net: Network, cache: GeomCache | None = None) -> GeomCache:
    if cache is not None and not cache.stale and cache.net is net:
        return cache
    return GeomCache(net)


# ------------------------------------------------------------- advance

def advance(net: Network, velocities, dt: float,
            cache: GeomCache | None = None) -> GeomCache:
    """Move the surface by dt under frozen facet velocities.

    Offsets update by V_i * sqrt(1+|g_i|^2) * dt (a normal displacement
    V_i*dt lifts the plane by that amount vertically); every junction is
    then recomputed exactly from its plane triple.  No topology changes.
    Returns the cache used (rebuilt if it was stale).
    """
    cache = get_cache(net, cache)
    V = cache.velocity_array(velocities)
    D = cache.D + V * cache.S * dt
    P = cache.positions(D)
    cache.commit(D, P)
    return cache
