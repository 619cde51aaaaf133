"""Doubly-linked cellular network of facets, edges and triple junctions.

The surface z = h(x, y) lives on a doubly periodic square domain of side L.
Each facet is a planar polygon h = g·(x, y) + d with a gradient g that is
fixed for its lifetime and an offset d that evolves.  Edges are directed
straight segments where exactly two facets meet; junctions are triple points
positioned by the intersection of their three facet planes.

Periodicity bookkeeping:

* junction (x, y) coordinates are always stored wrapped into [0, L)^2;
* each edge carries an integer wrap vector w in {-1, 0, 1}^2 such that the
  terminus effectively sits at its stored position + L*w relative to the
  origin;
* a facet's offset d is anchored at the first junction of its boundary
  cycle: d = z_anchor - g·(x, y)_anchor with the anchor's *stored*
  coordinates.  Walking the cycle and accumulating wrap vectors unwraps the
  remaining boundary junctions into the facet's chart.

All structural changes go through :meth:`Network.mutate`, which journals
before-images so transactions can be undone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BrokenCycleError, DanglingReferenceError

TAU_PLANE_FACTOR = 1e-9  # plane-residual tolerance, relative to L


def facet_scale(g) -> float:
    """sqrt(1 + |g|^2): converts normal displacement to offset increment."""
    return float(np.sqrt(1.0 + g[0] * g[0] + g[1] * g[1]))


def unit_normal(g) -> np.ndarray:
    """Upward unit normal (-g, 1)/sqrt(1+|g|^2) of a facet plane."""
    n = np.array([-g[0], -g[1], 1.0])
    return n / np.linalg.norm(n)


class Facet:
    __slots__ = ("id", "g", "d", "boundary")

    def __init__(self, fid: int, g, d: float, boundary=None):
        self.id = fid
        self.g = np.asarray(g, dtype=float).copy()
        self.d = float(d)
        # boundary[i] = (edge_id, junction_id): walking CCW around the facet,
        # step i leaves junction_id along edge_id.
        self.boundary = list(boundary) if boundary is not None else []

    @property
    def scale(self) -> float:
        return facet_scale(self.g)

    @property
    def normal(self) -> np.ndarray:
        return unit_normal(self.g)

    def clone(self) -> "Facet":
        return Facet(self.id, self.g, self.d, list(self.boundary))

    def __repr__(self):
        return f"Facet({self.id}, g={tuple(self.g)}, d={self.d}, m={len(self.boundary)})"


class Edge:
    __slots__ = ("id", "origin", "terminus", "left", "right", "tangent", "wrap")

    def __init__(self, eid: int, origin: int, terminus: int, left: int,
                 right: int, tangent, wrap=(0, 0)):
        self.id = eid
        self.origin = origin
        self.terminus = terminus
        self.left = left
        self.right = right
        self.tangent = np.asarray(tangent, dtype=float).copy()
        self.wrap = np.asarray(wrap, dtype=np.int64).copy()

    def other_junction(self, jid: int) -> int:
        return self.terminus if jid == self.origin else self.origin

    def other_facet(self, fid: int) -> int:
        return self.right if fid == self.left else self.left

    def clone(self) -> "Edge":
        return Edge(self.id, self.origin, self.terminus, self.left,
                    self.right, self.tangent, self.wrap)

    def __repr__(self):
        return (f"Edge({self.id}, {self.origin}->{self.terminus}, "
                f"L={self.left}, R={self.right}, w={tuple(self.wrap)})")


class Junction:
    __slots__ = ("id", "p", "edges", "facets")

    def __init__(self, jid: int, p, edges=(), facets=()):
        self.id = jid
        self.p = np.asarray(p, dtype=float).copy()
        self.edges = sorted(edges)
        self.facets = sorted(facets)

    def clone(self) -> "Junction":
        return Junction(self.id, self.p, self.edges, self.facets)

    def __repr__(self):
        return f"Junction({self.id}, p={tuple(self.p)})"


@dataclass
class AuditReport:
    """Result of a structural audit.  Report-only: nothing is raised."""

    violations: list = field(default_factory=list)
    n_junctions: int = 0
    n_edges: int = 0
    n_facets: int = 0
    max_plane_residual: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        head = (f"audit: V={self.n_junctions} E={self.n_edges} F={self.n_facets} "
                f"max_residual={self.max_plane_residual:.3e}")
        if self.ok:
            return head + " OK"
        body = "\n".join("  - " + v for v in self.violations[:50])
        more = "" if len(self.violations) <= 50 else f"\n  ... {len(self.violations) - 50} more"
        return f"{head}\n{len(self.violations)} violation(s):\n{body}{more}"


@dataclass
class JournalEntry:
    """Before-images of one committed transaction."""

    created: list = field(default_factory=list)     # (kind, id)
    deleted: list = field(default_factory=list)     # element clones
    before: list = field(default_factory=list)      # element clones (updated)
    tag: str = ""


_KINDS = ("facet", "edge", "junction")


class Network:
    """Cellular network on the doubly periodic domain [0, L)^2."""

    def __init__(self, L: float):
        if L <= 0:
            raise ValueError("domain side length must be positive")
        self.L = float(L)
        self.facets: dict[int, Facet] = {}
        self.edges: dict[int, Edge] = {}
        self.junctions: dict[int, Junction] = {}
        self._next_id = {"facet": 0, "edge": 0, "junction": 0}
        self.journal: list[JournalEntry] = []
        self.version = 0  # bumped on every structural change

    # ---------------------------------------------------------------- ids

    def new_facet_id(self) -> int:
        i = self._next_id["facet"]
        self._next_id["facet"] += 1
        return i

    def new_edge_id(self) -> int:
        i = self._next_id["edge"]
        self._next_id["edge"] += 1
        return i

    def new_junction_id(self) -> int:
        i = self._next_id["junction"]
        self._next_id["junction"] += 1
        return i

    def _store_of(self, kind: str) -> dict:
        return {"facet": self.facets, "edge": self.edges,
                "junction": self.junctions}[kind]

    # ------------------------------------------------- raw install (builders)

    def install(self, element) -> None:
        """Insert an element without journaling (network construction only).

        Ids are registered so later allocations never collide.
        """
        if isinstance(element, Facet):
            kind = "facet"
        elif isinstance(element, Edge):
            kind = "edge"
        elif isinstance(element, Junction):
            kind = "junction"
        else:
            raise TypeError(f"not a network element: {element!r}")
        store = self._store_of(kind)
        if element.id in store:
            raise ValueError(f"{kind} id {element.id} already present")
        store[element.id] = element
        self._next_id[kind] = max(self._next_id[kind], element.id + 1)
        self.version += 1

    # ------------------------------------------------------------ topology

    def edge_start_junction(self, edge: Edge, fid: int) -> int:
        """Junction where `fid`'s CCW traversal enters `edge`.

        The facet is on the left of the tangent iff it is edge.left, in which
        case the CCW walk goes origin -> terminus.
        """
        return edge.origin if edge.left == fid else edge.terminus

    def edge_disp(self, edge: Edge) -> np.ndarray:
        """Wrap-corrected displacement origin -> terminus (3-vector)."""
        o = self.junctions[edge.origin].p
        t = self.junctions[edge.terminus].p
        d = t - o
        d[0] += self.L * edge.wrap[0]
        d[1] += self.L * edge.wrap[1]
        return d

    def facet_neighbors(self, fid: int) -> list:
        """Edge-adjacent facets of `fid`, in boundary order (deduplicated)."""
        f = self.facets[fid]
        out, seen = [], set()
        for eid, _ in f.boundary:
            nb = self.edges[eid].other_facet(fid)
            if nb not in seen:
                seen.add(nb)
                out.append(nb)
        return out

    def boundary_cycle(self, fid: int):
        """Validated boundary cycle of a facet: list of (edge_id, junction_id).

        Verifies that consecutive edges share the junction between them and
        that the traversal direction is consistent with each edge's
        left/right labels.  Raises BrokenCycleError otherwise.
        """
        f = self.facets[fid]
        cyc = f.boundary
        m = len(cyc)
        if m < 3:
            raise BrokenCycleError(f"facet {fid}: boundary has {m} entries")
        for i, (eid, jid) in enumerate(cyc):
            e = self.edges.get(eid)
            if e is None:
                raise BrokenCycleError(f"facet {fid}: missing edge {eid}")
            if fid not in (e.left, e.right):
                raise BrokenCycleError(
                    f"facet {fid}: edge {eid} does not border it")
            if self.edge_start_junction(e, fid) != jid:
                raise BrokenCycleError(
                    f"facet {fid}: edge {eid} traversal does not start at {jid}")
            nxt = cyc[(i + 1) % m][1]
            if e.other_junction(jid) != nxt:
                raise BrokenCycleError(
                    f"facet {fid}: edge {eid} does not reach junction {nxt}")
        return list(cyc)

    def chart(self, fid: int):
        """Unwrapped boundary coordinates of a facet.

        Returns (junction_ids, xy, W) where xy[i] are the chart coordinates
        of boundary junction i (anchor = first entry at its stored
        coordinates) and W[i] is the integer wrap offset accumulated from the
        anchor, so xy = stored + L*W exactly.
        """
        f = self.facets[fid]
        cyc = f.boundary
        m = len(cyc)
        jids = [jid for _, jid in cyc]
        W = np.zeros((m, 2), dtype=np.int64)
        acc = np.zeros(2, dtype=np.int64)
        for i in range(m - 1):
            eid, jid = cyc[i]
            e = self.edges[eid]
            if e.origin == jid:
                acc = acc + e.wrap
            else:
                acc = acc - e.wrap
            W[i + 1] = acc
        xy = np.empty((m, 2))
        for i, jid in enumerate(jids):
            p = self.junctions[jid].p
            xy[i, 0] = p[0] + self.L * W[i, 0]
            xy[i, 1] = p[1] + self.L * W[i, 1]
        return jids, xy, W

    def rebase_offset(self, fid: int) -> None:
        """Re-derive d from the current anchor junction (exact plane point)."""
        f = self.facets[fid]
        jid = f.boundary[0][1]
        p = self.junctions[jid].p
        f.d = float(p[2] - f.g[0] * p[0] - f.g[1] * p[1])

    def canonicalize_anchor(self, fid: int) -> None:
        """Rotate the boundary so the lowest junction id is first; re-anchor d."""
        f = self.facets[fid]
        jids = [jid for _, jid in f.boundary]
        k = jids.index(min(jids))
        if k:
            f.boundary = f.boundary[k:] + f.boundary[:k]
        self.rebase_offset(fid)

    # ------------------------------------------------------------- mutate

    def mutate(self, deletions=(), creations=(), updates=(), tag="") -> JournalEntry:
        """Apply a transaction atomically and journal it.

        deletions: iterable of (kind, id)
        creations: iterable of new element objects (fresh ids)
        updates:   iterable of (kind, id, {field: value})

        After application every reference held by a surviving touched element
        must resolve; otherwise the transaction is rolled back and
        DanglingReferenceError raised.
        """
        entry = JournalEntry(tag=tag)
        try:
            for kind, xid in deletions:
                store = self._store_of(kind)
                if xid not in store:
                    raise DanglingReferenceError(f"delete: no {kind} {xid}")
                entry.deleted.append(store[xid].clone())
                del store[xid]
            for el in creations:
                self.install(el)
                kind = ("facet" if isinstance(el, Facet)
                        else "edge" if isinstance(el, Edge) else "junction")
                entry.created.append((kind, el.id))
            for kind, xid, fields in updates:
                store = self._store_of(kind)
                if xid not in store:
                    raise DanglingReferenceError(f"update: no {kind} {xid}")
                el = store[xid]
                entry.before.append(el.clone())
                for name, value in fields.items():
                    if name in ("g", "tangent", "p"):
                        value = np.asarray(value, dtype=float).copy()
                    elif name == "wrap":
                        value = np.asarray(value, dtype=np.int64).copy()
                    setattr(el, name, value)
            self._check_references(entry)
        except Exception:
            self._rollback(entry)
            raise
        self.journal.append(entry)
        self.version += 1
        return entry

    def _touched_ids(self, entry: JournalEntry):
        ids = set(entry.created)
        for el in entry.before:
            kind = ("facet" if isinstance(el, Facet)
                    else "edge" if isinstance(el, Edge) else "junction")
            ids.add((kind, el.id))
        return ids

    def _check_references(self, entry: JournalEntry) -> None:
        for kind, xid in self._touched_ids(entry):
            store = self._store_of(kind)
            el = store.get(xid)
            if el is None:
                continue  # created then deleted within the transaction
            if kind == "facet":
                for eid, jid in el.boundary:
                    if eid not in self.edges:
                        raise DanglingReferenceError(
                            f"facet {xid} references missing edge {eid}")
                    if jid not in self.junctions:
                        raise DanglingReferenceError(
                            f"facet {xid} references missing junction {jid}")
            elif kind == "edge":
                for jid in (el.origin, el.terminus):
                    if jid not in self.junctions:
                        raise DanglingReferenceError(
                            f"edge {xid} references missing junction {jid}")
                for fid in (el.left, el.right):
                    if fid not in self.facets:
                        raise DanglingReferenceError(
                            f"edge {xid} references missing facet {fid}")
            else:
                for eid in el.edges:
                    if eid not in self.edges:
                        raise DanglingReferenceError(
                            f"junction {xid} references missing edge {eid}")
                for fid in el.facets:
                    if fid not in self.facets:
                        raise DanglingReferenceError(
                            f"junction {xid} references missing facet {fid}")
        # deleted elements must not be referenced by any surviving element
        dead = {( "facet" if isinstance(el, Facet) else
                  "edge" if isinstance(el, Edge) else "junction", el.id)
                for el in entry.deleted}
        dead -= {(k, i) for (k, i) in entry.created}
        if not dead:
            return
        dead_f = {i for k, i in dead if k == "facet"}
        dead_e = {i for k, i in dead if k == "edge"}
        dead_j = {i for k, i in dead if k == "junction"}
        for f in self.facets.values():
            for eid, jid in f.boundary:
                if eid in dead_e or jid in dead_j:
                    raise DanglingReferenceError(
                        f"facet {f.id} still references deleted element")
        for e in self.edges.values():
            if e.origin in dead_j or e.terminus in dead_j \
                    or e.left in dead_f or e.right in dead_f:
                raise DanglingReferenceError(
                    f"edge {e.id} still references deleted element")
        for j in self.junctions.values():
            if dead_e.intersection(j.edges) or dead_f.intersection(j.facets):
                raise DanglingReferenceError(
                    f"junction {j.id} still references deleted element")

    def _rollback(self, entry: JournalEntry) -> None:
        for kind, xid in reversed(entry.created):
            store = self._store_of(kind)
            store.pop(xid, None)
        for el in reversed(entry.before):
            kind = ("facet" if isinstance(el, Facet)
                    else "edge" if isinstance(el, Edge) else "junction")
            self._store_of(kind)[el.id] = el
        for el in reversed(entry.deleted):
            kind = ("facet" if isinstance(el, Facet)
                    else "edge" if isinstance(el, Edge) else "junction")
            self._store_of(kind)[el.id] = el
        self.version += 1

    def undo(self, n: int = 1) -> None:
        """Undo the last n journaled transactions."""
        for _ in range(n):
            if not self.journal:
                raise IndexError("journal is empty")
            self._rollback(self.journal.pop())

    # ----------------------------------------------------------- snapshot

    def snapshot(self) -> dict:
        """Full structural + geometric state, restorable bitwise."""
        return {
            "L": self.L,
            "next_id": dict(self._next_id),
            "facets": [(f.id, f.g.copy(), f.d, list(f.boundary))
                       for f in self.facets.values()],
            "edges": [(e.id, e.origin, e.terminus, e.left, e.right,
                       e.tangent.copy(), e.wrap.copy())
                      for e in self.edges.values()],
            "junctions": [(j.id, j.p.copy(), list(j.edges), list(j.facets))
                          for j in self.junctions.values()],
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "Network":
        net = cls(snap["L"])
        net.restore_snapshot(snap)
        return net

    def restore_snapshot(self, snap: dict) -> None:
        """Reset this network in place to a snapshot (journal cleared)."""
        self.L = snap["L"]
        self.facets = {}
        self.edges = {}
        self.junctions = {}
        for fid, g, d, boundary in snap["facets"]:
            self.facets[fid] = Facet(fid, g, d, boundary)
        for eid, o, t, l, r, tan, w in snap["edges"]:
            self.edges[eid] = Edge(eid, o, t, l, r, tan, w)
        for jid, p, es, fs in snap["junctions"]:
            self.junctions[jid] = Junction(jid, p, es, fs)
        self._next_id = dict(snap["next_id"])
        self.journal = []
        self.version += 1

    # -------------------------------------------------------------- audit

    def audit(self, tau_plane: float | None = None) -> AuditReport:
        """Structural audit: junction order, pointer symmetry, boundary
        closure, torus Euler relation, degree relations, plane residuals.
        Report-only."""
        rep = AuditReport()
        rep.n_junctions = len(self.junctions)
        rep.n_edges = len(self.edges)
        rep.n_facets = len(self.facets)
        bad = rep.violations.append
        L = self.L
        if tau_plane is None:
            tau_plane = TAU_PLANE_FACTOR * L

        V, E, F = rep.n_junctions, rep.n_edges, rep.n_facets
        if V - E + F != 0:
            bad(f"Euler: V-E+F = {V - E + F} != 0")
        if 2 * E != 3 * V:
            bad(f"degree: 2E={2 * E} != 3V={3 * V}")
        if 2 * F != V:
            bad(f"degree: F={F} != V/2={V / 2}")

        for j in self.junctions.values():
            if len(j.edges) != 3 or len(set(j.edges)) != 3:
                bad(f"junction {j.id}: order != 3 (edges {j.edges})")
            if len(j.facets) != 3 or len(set(j.facets)) != 3:
                bad(f"junction {j.id}: facets not 3 distinct ({j.facets})")
            if not (0.0 <= j.p[0] < L and 0.0 <= j.p[1] < L):
                bad(f"junction {j.id}: (x,y) not wrapped into [0,L)^2")
            for eid in j.edges:
                e = self.edges.get(eid)
                if e is None:
                    bad(f"junction {j.id}: missing edge {eid}")
                elif j.id not in (e.origin, e.terminus):
                    bad(f"junction {j.id}: edge {eid} does not end here")
            for fid in j.facets:
                f = self.facets.get(fid)
                if f is None:
                    bad(f"junction {j.id}: missing facet {fid}")
                elif j.id not in [jid for _, jid in f.boundary]:
                    bad(f"junction {j.id}: not on boundary of facet {fid}")

        for e in self.edges.values():
            if e.left == e.right:
                bad(f"edge {e.id}: left == right == {e.left}")
            if e.origin == e.terminus:
                bad(f"edge {e.id}: origin == terminus == {e.origin}")
            if not (abs(e.wrap[0]) <= 1 and abs(e.wrap[1]) <= 1):
                bad(f"edge {e.id}: wrap {tuple(e.wrap)} out of range")
            fl, fr = self.facets.get(e.left), self.facets.get(e.right)
            if fl is None or fr is None:
                bad(f"edge {e.id}: missing facet")
                continue
            for jid in (e.origin, e.terminus):
                jn = self.junctions.get(jid)
                if jn is None:
                    bad(f"edge {e.id}: missing junction {jid}")
                elif e.id not in jn.edges:
                    bad(f"edge {e.id}: junction {jid} does not list it")
            for f in (fl, fr):
                if e.id not in [eid for eid, _ in f.boundary]:
                    bad(f"edge {e.id}: facet {f.id} does not list it")
            # tangent parallel to the composite-normal cross product
            cr = np.cross(unit_normal(fl.g), unit_normal(fr.g))
            ncr = np.linalg.norm(cr)
            if ncr > 0:
                dev = np.linalg.norm(np.cross(e.tangent, cr / ncr))
                if dev > 1e-9:
                    bad(f"edge {e.id}: tangent deviates from facet-pair"
                        f" direction by {dev:.2e}")
            nt = np.linalg.norm(e.tangent)
            if abs(nt - 1.0) > 1e-9:
                bad(f"edge {e.id}: tangent not unit (|t|={nt})")

        for f in self.facets.values():
            m = len(f.boundary)
            if m < 3:
                bad(f"facet {f.id}: boundary has {m} < 3 entries")
                continue
            try:
                self.boundary_cycle(f.id)
            except BrokenCycleError as exc:
                bad(str(exc))
                continue
            jids = [jid for _, jid in f.boundary]
            eids = [eid for eid, _ in f.boundary]
            if len(set(jids)) != m:
                bad(f"facet {f.id}: boundary junctions repeat")
            if len(set(eids)) != m:
                bad(f"facet {f.id}: boundary edges repeat")
            _, xy, W = self.chart(f.id)
            # closure of the wrap walk
            eid, jid = f.boundary[-1]
            e = self.edges[eid]
            acc = W[-1] + (e.wrap if e.origin == jid else -e.wrap)
            if acc[0] != 0 or acc[1] != 0:
                bad(f"facet {f.id}: boundary wrap sum {tuple(acc)} != 0")
            area2 = float(np.cross(xy, np.roll(xy, -1, axis=0)).sum())
            if area2 <= 0:
                bad(f"facet {f.id}: projected boundary not CCW "
                    f"(2*area={area2:.3e})")
            # plane residual over the facet's own chart
            for i, jid in enumerate(jids):
                z = self.junctions[jid].p[2]
                r = abs(f.g[0] * xy[i, 0] + f.g[1] * xy[i, 1] + f.d - z)
                if r > rep.max_plane_residual:
                    rep.max_plane_residual = r
                if r > tau_plane:
                    bad(f"facet {f.id}: junction {jid} off plane by {r:.3e}")

        return rep


def rebuild_boundary(net: Network, fid: int) -> None:
    """Reconstruct a facet's boundary cycle from its incident edges.

    Used by the mesh loader and by builders.  The cycle is walked through
    junction incidences, oriented by the edges' left/right labels, rotated to
    the canonical anchor (lowest junction id), and verified to close.
    The offset d is left untouched.
    """
    incident = [e for e in net.edges.values() if fid in (e.left, e.right)]
    if len(incident) < 3:
        raise BrokenCycleError(f"facet {fid}: only {len(incident)} incident edges")
    by_start = {}
    for e in incident:
        s = net.edge_start_junction(e, fid)
        if s in by_start:
            raise BrokenCycleError(
                f"facet {fid}: two boundary edges start at junction {s}")
        by_start[s] = e
    e0 = min(incident, key=lambda e: e.id)
    start = net.edge_start_junction(e0, fid)
    cyc = []
    jid = start
    for _ in range(len(incident)):
        e = by_start.get(jid)
        if e is None:
            raise BrokenCycleError(f"facet {fid}: no boundary edge out of {jid}")
        cyc.append((e.id, jid))
        jid = e.other_junction(jid)
    if jid != start:
        raise BrokenCycleError(f"facet {fid}: boundary does not close")
    if len(cyc) != len(incident):
        raise BrokenCycleError(f"facet {fid}: boundary misses incident edges")
    f = net.facets[fid]
    f.boundary = cyc
    jids = [j for _, j in cyc]
    k = jids.index(min(jids))
    if k:
        f.boundary = f.boundary[k:] + f.boundary[:k]
