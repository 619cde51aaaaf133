"""Far-field reconnection: patching the hole left by deleted facets.

An O(n) hole is bounded by a cyclic sequence of n far-field facets with one
surviving "stub" edge between each adjacent pair.  Every possible patch
(n-2 new junctions, n-3 new interior edges) corresponds to a binary tree,
equivalently a triangulation of the facet cycle in which each triangle is a
facet triple placed at its plane intersection.  Candidates are enumerated
as words over {B, L}, built geometrically, and tested for consistency; the
chosen patch must leave every facet simply connected with no projected edge
crossings.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularTripleError
from .geom2d import polygon_area2, polygon_is_simple, segments_cross
from .kinematics import intersect_planes, unit_normal

MAX_QUIET_HOLE = 16  # larger holes log a warning: C_{n-2} grows fast


def catalan(m: int) -> int:
    """(2m)! / (m! (m+1)!), exact."""
    if m < 0:
        raise ValueError("catalan is defined for m >= 0")
    return math.factorial(2 * m) // (math.factorial(m) * math.factorial(m + 1))


def iter_tree_codes(n: int):
    """All abbreviated tree codes for an O(n) hole, greedy B-before-L order.

    A word has n-3 of each letter; an 'L' may be appended only while
    leaves < n-3 and leaves <= branches, a 'B' only while branches < n-3.
    """
    if n < 3:
        raise ValueError("holes have n >= 3 facets")
    mx = n - 3

    def rec(leaves, branches, word):
        if branches < mx:
            yield from rec(leaves, branches + 1, word + "B")
        if leaves < mx and leaves <= branches:
            yield from rec(leaves + 1, branches, word + "L")
        if leaves == mx and branches == mx:
            yield word

    return rec(0, 0, "")


def list_tree_codes(n: int) -> list:
    return list(iter_tree_codes(n))


# --------------------------------------------------------------- decoding

@dataclass
class Triangulation:
    """Combinatorial patch decoded from a tree code.

    Vertex indices are positions in the hole's facet cycle.  triangles[t]
    is the (u, m, w) facet-position triple of junction t; stub_assign[i] is
    the junction trimming stub i; chords are interior edges (parent, child,
    (a, b)); fans[i] lists junction indices around vertex i from the side-i
    triangle to the side-(i-1) triangle (the order they are walked along
    facet i's updated boundary).
    """

    n: int
    code: str
    triangles: list = field(default_factory=list)
    stub_assign: list = field(default_factory=list)
    chords: list = field(default_factory=list)
    fans: list = field(default_factory=list)


def decode_code(code: str, n: int, root: int = 0) -> Triangulation:
    """Decode an abbreviated code into the triangulation it names.

    The implicit full word is 'L' + 'B' + code + 'LL': the leading L is the
    root stub, the rest is the preorder walk of the interior tree (B =
    branch node, L = completed leaf), leaves consumed counter-clockwise
    around the hole starting after the root slot.
    """
    tri = Triangulation(n=n, code=code)
    word = "B" + code + "LL"
    pos = 0
    tris = []
    stub_assign = [None] * n
    chords = []

    def parse(u):
        nonlocal pos
        c = word[pos]
        pos += 1
        if c == "L":
            return u + 1, None
        m, child1 = parse(u)
        w, child2 = parse(m)
        idx = len(tris)
        tris.append((u, m, w))
        if child1 is None:
            stub_assign[u % n] = idx
        else:
            chords.append((idx, child1, (u, m)))
        if child2 is None:
            stub_assign[m % n] = idx
        else:
            chords.append((idx, child2, (m, w)))
        return w, idx

    end, root_idx = parse(root + 1)
    if pos != len(word) or end != root + n:
        raise ValueError(f"invalid tree code {code!r} for n={n}")
    stub_assign[root % n] = root_idx

    # fans: walk each vertex's triangle path between its two boundary sides
    chord_tris = {}
    for t, (u, m, w) in enumerate(tris):
        for a, b in ((u, m), (m, w), (u, w)):
            chord_tris.setdefault((a, b), []).append(t)
    uidx = {(root + k) % n: root + k for k in range(1, n + 1)}

    def side_chord(i):
        a, b = uidx[i % n], uidx[(i + 1) % n]
        return (min(a, b), max(a, b))

    fans = []
    for i in range(n):
        v = uidx[i]
        start = side_chord(i)
        stop = side_chord(i - 1)
        t = chord_tris[start][0]
        fan = [t]
        prev = start
        while True:
            u, m, w = tris[t]
            mine = [(min(v, o), max(v, o)) for o in (u, m, w) if o != v]
            nxt = mine[0] if mine[1] == prev else mine[1]
            if nxt == stop:
                break
            pair = chord_tris[nxt]
            t = pair[0] if pair[1] == t else pair[1]
            fan.append(t)
            prev = nxt
        fans.append(fan)

    tri.triangles = [(u % n, m % n, w % n) for u, m, w in tris]
    tri.stub_assign = stub_assign
    tri.chords = [(p, c, (a % n, b % n)) for p, c, (a, b) in chords]
    tri.fans = fans
    return tri


# ------------------------------------------------------------------ holes

@dataclass
class Hole:
    """An O(n) hole in a single flat chart around the deleted region.

    stub i is the surviving edge between cycle facets i and i+1; chains[i]
    holds facet i's surviving boundary entries from stub i-1's survivor
    around to stub i's survivor, with chain_pts the matching chart
    coordinates (used for crossing and simplicity tests).
    """

    facet_cycle: list
    gradients: np.ndarray          # (n, 2)
    offsets: np.ndarray            # (n,) plane offsets in the hole chart
    stub_edges: list               # edge ids
    stub_survivors: list           # junction ids
    stub_tangents: np.ndarray      # (n, 3)
    stub_survivor_is_origin: list
    survivor_pts: np.ndarray       # (n, 3) chart positions of the survivors
    chain_pts: list                # per facet: (k_i, 2) chart xy, S_{i-1}..S_i
    L: float

    def __post_init__(self):
        n = len(self.facet_cycle)
        if n < 3:
            raise ValueError("holes have n >= 3 facets")
        for i in range(n):
            j = (i + 1) % n
            if self.facet_cycle[i] == self.facet_cycle[j]:
                raise ValueError("adjacent hole facets must be distinct")
            if np.allclose(self.gradients[i], self.gradients[j]):
                raise ValueError(
                    "adjacent hole facets share a gradient; step handling "
                    "was skipped")
        if n > MAX_QUIET_HOLE:
            warnings.warn(f"O({n}) hole: enumerating {catalan(n - 2)} "
                          "candidates", stacklevel=2)

    @property
    def n(self) -> int:
        return len(self.facet_cycle)


@dataclass
class ReconnectionCandidate:
    """One virtual reconnection: geometry plus a consistency verdict."""

    code: str
    tri: Triangulation
    points: np.ndarray | None = None   # (n-2, 3) junction chart positions
    consistent: bool = True
    violation: str | None = None


def build_reconnection(hole: Hole, code: str) -> ReconnectionCandidate:
    """Place the candidate's junctions at their facet-triple intersections.

    A singular triple marks the candidate inconsistent rather than raising:
    it is simply not a viable reconnection.
    """
    tri = decode_code(code, hole.n, root=0)
    cand = ReconnectionCandidate(code=code, tri=tri)
    pts = np.empty((len(tri.triangles), 3))
    for t, (a, b, c) in enumerate(tri.triangles):
        try:
            pts[t] = intersect_planes(
                hole.gradients[a], hole.offsets[a],
                hole.gradients[b], hole.offsets[b],
                hole.gradients[c], hole.offsets[c])
        except SingularTripleError:
            cand.consistent = False
            cand.violation = f"singular facet triple at positions {(a, b, c)}"
            return cand
    cand.points = pts
    return cand


def _patch_segments(hole: Hole, cand: ReconnectionCandidate):
    """Projected patch segments: interior edges then trimmed stubs."""
    segs = []
    for p, c, _ in cand.tri.chords:
        segs.append((cand.points[p][:2], cand.points[c][:2], f"chord {p}-{c}"))
    for i in range(hole.n):
        t = cand.tri.stub_assign[i]
        segs.append((hole.survivor_pts[i][:2], cand.points[t][:2],
                     f"stub {i}"))
    return segs


def is_consistent(hole: Hole, cand: ReconnectionCandidate):
    """Geometric consistency: nonsingular triples, positively oriented
    trimmed stubs, no projected crossings among patch segments or against
    the surviving rim, and every facet's updated cycle simple and CCW.

    Returns (ok, first_violation).
    """
    if not cand.consistent:
        return False, cand.violation
    eps = 1e-10 * hole.L
    pts = cand.points

    for i in range(hole.n):
        t = cand.tri.stub_assign[i]
        d = pts[t] - hole.survivor_pts[i]
        if not hole.stub_survivor_is_origin[i]:
            d = -d
        ln = float(d @ hole.stub_tangents[i])
        if ln <= eps:
            return False, f"stub {i} flipped or degenerate (len {ln:.3e})"
    for p, c, _ in cand.tri.chords:
        if np.hypot(*(pts[p][:2] - pts[c][:2])) <= eps:
            return False, f"interior edge {p}-{c} degenerate"

    segs = _patch_segments(hole, cand)
    for a in range(len(segs)):
        for b in range(a + 1, len(segs)):
            if segments_cross(segs[a][0], segs[a][1],
                              segs[b][0], segs[b][1], eps):
                return False, f"{segs[a][2]} crosses {segs[b][2]}"
    rim = []
    for ch in hole.chain_pts:
        for k in range(len(ch) - 1):
            rim.append((ch[k], ch[k + 1]))
    for p1, q1, name in segs:
        for p2, q2 in rim:
            if segments_cross(p1, q1, p2, q2, eps):
                return False, f"{name} crosses the surviving rim"

    for i in range(hole.n):
        fan = cand.tri.fans[i]
        poly = [pts[t][:2] for t in fan]
        poly.extend(hole.chain_pts[i])  # S_{i-1} .. S_i inclusive
        poly = np.asarray(poly)
        if len(poly) < 3:
            continue
        if polygon_area2(poly) <= 0:
            return False, f"facet at position {i}: updated cycle not CCW"
        if not polygon_is_simple(poly, eps):
            return False, f"facet at position {i}: updated cycle not simple"
    return True, None


def reconnect(hole: Hole, policy: str = "require-unique"):
    """Search the candidate list for a consistent reconnection.

    policy 'first-found': return the first consistent candidate in listing
    order.  policy 'require-unique' (default): enumerate all candidates and
    return the consistent one only if it is unique.  Returns None when the
    removal must be deferred (no candidate, or an ambiguous pair under
    require-unique).
    """
    if policy not in ("require-unique", "first-found"):
        raise ValueError(f"unknown reconnection policy {policy!r}")
    found = None
    for code in iter_tree_codes(hole.n):
        cand = build_reconnection(hole, code)
        ok, why = is_consistent(hole, cand)
        cand.consistent, cand.violation = ok, why
        if not ok:
            continue
        if policy == "first-found":
            return cand
        if found is not None:
            return None  # multiple valid reconnections: defer
        found = cand
    return found
