"""Initial-surface generation.

A surface is specified as min over "pyramids" of max over planes
(z = g.(x,y) + q): each pyramid is an upward-opening piecewise-planar well
and the surface is their lower envelope on a periodic rectangle.  For the
small plane families used here the exact cellular structure is extracted by
brute force: every plane triple in a 3x3 periodic window is solved and
verified against the envelope, junction/edge candidates are deduplicated by
integer periodic keys, and the assembled network must pass the full audit.

Large surfaces are produced by replicating a verified single-seed tile
n_x * n_y times across the domain and jittering the replica plane offsets,
then re-deriving every junction from its plane triple.  Replication keeps
the combinatorics exact at any size; the jitter makes event times generic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BrokenCycleError, DegenerateSeedError
from .kinematics import GeomCache, intersect_planes, unit_normal
from .network import Edge, Facet, Junction, Network, rebuild_boundary

PHI_OFFSET = 0.2317  # fixed gradient-fan rotation; keeps edges off the axes
APEX_SPLIT = 0.02    # deterministic per-plane asymmetry, rel. to s*min(l)

SYMMETRY_FOLDS = {"threefold": 3, "fourfold": 4, "sixfold": 6}


def gradient_set(symmetry: str, s: float, phi: float = PHI_OFFSET) -> np.ndarray:
    """The K symmetric facet gradients s*(cos(2pi k/K + phi), sin(...))."""
    K = SYMMETRY_FOLDS[symmetry]
    ang = 2.0 * np.pi * np.arange(K) / K + phi
    return s * np.column_stack([np.cos(ang), np.sin(ang)])


# ------------------------------------------------------------------ tiles

@dataclass
class TileStructure:
    """Exact combinatorics of one periodic tile.

    Edge endpoint shifts gamma and facet-copy shifts sigma are integer tile
    offsets relative to the edge's home tile; replication turns them into
    replica indices and wrap carries.
    """

    lx: float
    ly: float
    jpos: np.ndarray          # (T, 3) canonical junction positions
    jfacets: list             # per junction: 3 tuples (base_idx, (sx, sy))
    edges: list               # (j1, g1, j2, g2, left, right, tangent)
    gradients: np.ndarray     # (NB, 2) base facet gradients


class _Envelope:
    """min over pyramid copies of max over planes, on the 3x3 window."""

    def __init__(self, pyramids, lx, ly, window=1):
        G, Q, owner, base = [], [], [], []
        shifts = [(sx, sy) for sy in range(-window, window + 1)
                  for sx in range(-window, window + 1)]
        self.copy_shift = []
        pc = 0
        for sx, sy in shifts:
            for pi, planes in enumerate(pyramids):
                for ki, (g, q) in enumerate(planes):
                    G.append(g)
                    Q.append(q - g[0] * sx * lx - g[1] * sy * ly)
                    owner.append(pc)
                    base.append((pi, ki))
                    self.copy_shift.append((sx, sy))
                pc += 1
        self.G = np.asarray(G, dtype=float)
        self.Q = np.asarray(Q, dtype=float)
        self.owner = np.asarray(owner, dtype=np.int64)
        self.base = base
        self.n_pc = pc
        starts = np.flatnonzero(np.r_[1, np.diff(self.owner)])
        self.pc_starts = starts

    def values(self, X: np.ndarray):
        """Per-plane values, per-pyramid-copy maxima and the envelope."""
        vals = X @ self.G.T + self.Q          # (n, M)
        pyr = np.maximum.reduceat(vals, self.pc_starts, axis=1)
        env = pyr.min(axis=1)
        return vals, pyr, env

    def active_mask(self, X, atol):
        """Planes that are on the surface at each point of X."""
        vals, pyr, env = self.values(X)
        on_pyr = (pyr[:, self.owner] - vals) <= atol
        pyr_on_env = (pyr - env[:, None]) <= atol
        return on_pyr & pyr_on_env[:, self.owner], env


def _extract_tile(pyramids, lx: float, ly: float, hscale: float,
                  window: int = 1) -> TileStructure:
    """Brute-force exact extraction of the tile's cellular structure."""
    env = _Envelope(pyramids, lx, ly, window)
    M = len(env.Q)
    atol = 1e-9 * hscale
    margin = 1e-6 * hscale

    # --- junction candidates: all plane triples with independent gradients
    idx = np.arange(M)
    ii, jj, kk = np.meshgrid(idx, idx, idx, indexing="ij")
    mask = (ii < jj) & (jj < kk)
    ti, tj, tk = ii[mask], jj[mask], kk[mask]
    g1, g2, g3 = env.G[ti], env.G[tj], env.G[tk]
    q1, q2, q3 = env.Q[ti], env.Q[tj], env.Q[tk]
    a11 = g1[:, 0] - g2[:, 0]
    a12 = g1[:, 1] - g2[:, 1]
    a21 = g1[:, 0] - g3[:, 0]
    a22 = g1[:, 1] - g3[:, 1]
    det = a11 * a22 - a12 * a21
    ok = np.abs(det) > 1e-12 * hscale * hscale / max(lx, ly) ** 2 + 1e-300
    ti, tj, tk, det = ti[ok], tj[ok], tk[ok], det[ok]
    b1 = q2[ok] - q1[ok]
    b2 = q3[ok] - q1[ok]
    x = (b1 * (a22[ok]) - b2 * (a12[ok])) / det
    y = ((a11[ok]) * b2 - (a21[ok]) * b1) / det
    z = env.G[ti, 0] * x + env.G[ti, 1] * y + env.Q[ti]
    X = np.column_stack([x, y])

    # keep only candidates inside the window (others cannot matter)
    inside = (np.abs(x - lx / 2) <= (window + 0.5) * lx) & \
             (np.abs(y - ly / 2) <= (window + 0.5) * ly)
    ti, tj, tk, X, z = ti[inside], tj[inside], tk[inside], X[inside], z[inside]

    active, envz = env.active_mask(X, atol)
    n_active = active.sum(axis=1)
    triple_active = active[np.arange(len(ti)), ti] & \
        active[np.arange(len(tj)), tj] & active[np.arange(len(tk)), tk]
    on_env = np.abs(envz - z) <= atol
    verified = triple_active & on_env & (n_active == 3)
    degenerate = triple_active & on_env & (n_active > 3)
    if degenerate.any():
        raise DegenerateSeedError(
            f"{int(degenerate.sum())} junction candidate(s) with >3 active "
            "planes; perturb the plane offsets")

    ti, tj, tk = ti[verified], tj[verified], tk[verified]
    X, z = X[verified], z[verified]

    # --- canonical junctions and periodic copy keys
    def plane_key(p, gamma):
        pi, ki = env.base[p]
        sx, sy = env.copy_shift[p]
        return (pi, ki, sx - gamma[0], sy - gamma[1])

    def junction_key(a, b, c, gamma):
        return frozenset((plane_key(a, gamma), plane_key(b, gamma),
                          plane_key(c, gamma)))

    canon = {}
    jpos, jfacets, jplanes = [], [], []
    gam_all = np.column_stack([np.floor(X[:, 0] / lx),
                               np.floor(X[:, 1] / ly)]).astype(np.int64)
    for n in range(len(ti)):
        if gam_all[n, 0] == 0 and gam_all[n, 1] == 0:
            key = junction_key(ti[n], tj[n], tk[n], (0, 0))
            if key in canon:
                raise DegenerateSeedError("duplicate canonical junction")
            canon[key] = len(jpos)
            jpos.append([X[n, 0], X[n, 1], z[n]])
            trip = []
            for p in (ti[n], tj[n], tk[n]):
                pi, ki, sx, sy = plane_key(p, (0, 0))
                trip.append(((pi, ki), (sx, sy)))
            jfacets.append(trip)
            jplanes.append((ti[n], tj[n], tk[n]))
    if not jpos:
        raise DegenerateSeedError("no junctions found on the tile")

    # --- edges: consecutive same-pair junctions along each plane-pair line
    pair_sites = {}
    for n in range(len(ti)):
        a, b, c = int(ti[n]), int(tj[n]), int(tk[n])
        for u, v in ((a, b), (a, c), (b, c)):
            pair_sites.setdefault((u, v), []).append(n)

    bases = {}
    for p, planes in enumerate(pyramids):
        for k in range(len(planes)):
            bases[(p, k)] = None
    base_order = sorted(bases)
    base_idx = {bk: i for i, bk in enumerate(base_order)}
    gradients = np.array([pyramids[p][k][0] for p, k in base_order], dtype=float)

    def lookup(n, gamma):
        key = junction_key(ti[n], tj[n], tk[n], gamma)
        j = canon.get(key)
        if j is None:
            raise DegenerateSeedError(
                "edge endpoint outside the periodic window; enlarge window")
        return j

    edges = []
    seen_mid = set()
    for (a, b), sites in sorted(pair_sites.items()):
        if len(sites) < 2:
            continue
        gdiff = env.G[a] - env.G[b]
        if np.hypot(*gdiff) <= 1e-15:
            continue
        tdir = np.array([-gdiff[1], gdiff[0]])
        tdir /= np.hypot(*tdir)
        order = sorted(sites, key=lambda n: float(X[n] @ tdir))
        for n1, n2 in zip(order[:-1], order[1:]):
            mid = 0.5 * (X[n1] + X[n2])
            gm = (np.floor(mid[0] / lx), np.floor(mid[1] / ly))
            if gm != (0.0, 0.0):
                continue
            act, _ = env.active_mask(mid[None, :], atol)
            if not (act[0, a] and act[0, b]) or act[0].sum() != 2:
                continue
            # sidedness: A holds the side where it wins its own contest
            same_pyr = env.owner[a] == env.owner[b]
            uA = gdiff if same_pyr else -gdiff
            t2 = np.array([uA[1], -uA[0]])  # A on the left of t2
            t3 = np.cross(unit_normal(env.G[a]), unit_normal(env.G[b]))
            t3 = t3 / np.linalg.norm(t3)
            if float(t3[:2] @ t2) < 0:
                t3 = -t3
            g1 = tuple(gam_all[n1])
            g2 = tuple(gam_all[n2])
            p1 = np.array([*X[n1], z[n1]])
            p2 = np.array([*X[n2], z[n2]])
            if float((p2 - p1) @ t3) >= 0:
                jA, gA, jB, gB = lookup(n1, g1), g1, lookup(n2, g2), g2
            else:
                jA, gA, jB, gB = lookup(n2, g2), g2, lookup(n1, g1), g1
            midkey = (round(mid[0] / lx * 1e9), round(mid[1] / ly * 1e9), a, b)
            if midkey in seen_mid:
                continue
            seen_mid.add(midkey)
            gam_home = (0, 0)
            left = (env.base[a], tuple(np.asarray(env.copy_shift[a]) - gam_home))
            right = (env.base[b], tuple(np.asarray(env.copy_shift[b]) - gam_home))
            edges.append((jA, gA, jB, gB,
                          (base_idx[left[0]], left[1]),
                          (base_idx[right[0]], right[1]),
                          t3))

    jf = [[(base_idx[bk], sig) for bk, sig in trip] for trip in jfacets]
    return TileStructure(lx, ly, np.asarray(jpos), jf, edges, gradients)


# -------------------------------------------------------------- assembly

def assemble(ts: TileStructure, nx: int, ny: int) -> Network:
    """Replicate a tile structure nx*ny times onto the square torus."""
    L = ts.lx * nx
    if abs(ts.ly * ny - L) > 1e-12 * L:
        raise ValueError("tile replication must produce a square domain")
    net = Network(L)
    T = len(ts.jpos)
    NB = len(ts.gradients)
    NE = len(ts.edges)

    def rep(ix, iy):
        return (ix % nx) + nx * (iy % ny)

    def jid(j, ix, iy):
        return j + T * rep(ix, iy)

    def fid(b, ix, iy):
        return b + NB * rep(ix, iy)

    j_edges = {}
    j_facets = {}
    for iy in range(ny):
        for ix in range(nx):
            r = rep(ix, iy)
            for j in range(T):
                p = ts.jpos[j] + np.array([ix * ts.lx, iy * ts.ly, 0.0])
                net.install(Junction(j + T * r, p))
                fids = sorted(fid(b, ix + s[0], iy + s[1])
                              for b, s in ts.jfacets[j])
                j_facets[j + T * r] = fids
    for iy in range(ny):
        for ix in range(nx):
            r = rep(ix, iy)
            for b in range(NB):
                net.install(Facet(b + NB * r, ts.gradients[b], 0.0))
            for k, (j1, g1, j2, g2, left, right, tan) in enumerate(ts.edges):
                c1x, c1y = ix + g1[0], iy + g1[1]
                c2x, c2y = ix + g2[0], iy + g2[1]
                w = (c2x // nx - c1x // nx, c2y // ny - c1y // ny)
                e = Edge(k + NE * r,
                         jid(j1, c1x, c1y), jid(j2, c2x, c2y),
                         fid(left[0], ix + left[1][0], iy + left[1][1]),
                         fid(right[0], ix + right[1][0], iy + right[1][1]),
                         tan, w)
                net.install(e)
                for jx in (e.origin, e.terminus):
                    j_edges.setdefault(jx, []).append(e.id)

    for jx, jn in net.junctions.items():
        es = j_edges.get(jx, [])
        if len(es) != 3:
            raise DegenerateSeedError(
                f"junction {jx} has {len(es)} incident edges")
        jn.edges = sorted(es)
        jn.facets = j_facets[jx]

    for f in list(net.facets.values()):
        try:
            rebuild_boundary(net, f.id)
        except BrokenCycleError as exc:
            raise DegenerateSeedError(f"tile assembly: {exc}") from exc
        net.rebase_offset(f.id)
    return net


def symmetric_pyramid(symmetry: str, s: float, cx: float, cy: float,
                      split: float) -> list:
    """One upward well: the K symmetric planes through (cx, cy, 0), with a
    deterministic per-plane offset pattern that unfolds the apex into
    triple junctions for K > 3."""
    G = gradient_set(symmetry, s)
    planes = []
    for k, g in enumerate(G):
        eps = split * (((k + 1) * 0.6180339887498949) % 1.0 - 0.5)
        planes.append((np.array(g), -g[0] * cx - g[1] * cy + eps))
    return planes


def _near_square_factors(n: int):
    a = int(np.sqrt(n))
    while a > 1 and n % a:
        a -= 1
    return max(a, 1), n // max(a, 1)


def build_tile(symmetry: str, s: float, lx: float, ly: float) -> TileStructure:
    hscale = s * min(lx, ly)
    pyr = symmetric_pyramid(symmetry, s, lx / 2.0, ly / 2.0,
                            APEX_SPLIT * hscale)
    return _extract_tile([pyr], lx, ly, hscale)


def generate_initial(symmetry: str, N: int, s: float, L: float,
                     seed: int) -> Network:
    """Surface of N jittered seed wells with symmetric gradients on [0,L)^2.

    Seeds sit on an nx*ny grid (nx*ny = N, near-square).  Each replica's
    plane offsets get a base-height shift plus per-facet jitter, junctions
    are re-derived from the jittered planes, and the result must pass the
    full audit with healthy margins; on failure the jitter is halved and
    redrawn (deterministically) a few times before giving up.
    """
    if symmetry not in SYMMETRY_FOLDS:
        raise ValueError(f"unknown symmetry {symmetry!r}")
    if N < 1:
        raise ValueError("need at least one seed")
    nx, ny = _near_square_factors(N)
    lx, ly = L / nx, L / ny
    ts = build_tile(symmetry, s, lx, ly)
    hscale = s * min(lx, ly)
    base_amp = 0.25 * hscale
    fac_amp = 0.1 * APEX_SPLIT * hscale
    for attempt in range(6):
        rng = np.random.default_rng(np.random.SeedSequence((seed, attempt)))
        net = assemble(ts, nx, ny)
        NB = len(ts.gradients)
        shift = rng.uniform(-base_amp, base_amp, nx * ny)
        for f in net.facets.values():
            f.d += shift[f.id // NB] + rng.uniform(-fac_amp, fac_amp)
        cache = GeomCache(net)
        P = cache.positions(cache.D)
        move = np.abs(P - cache.P).max() if len(P) else 0.0
        if move > 0.25 * min(lx, ly):
            base_amp *= 0.5
            fac_amp *= 0.5
            continue
        cache.commit(cache.D, P)
        lengths = GeomCache(net).signed_lengths(GeomCache(net).P)
        if len(lengths) and lengths.min() <= 1e-12 * L:
            base_amp *= 0.5
            fac_amp *= 0.5
            continue
        report = net.audit()
        if report.ok:
            return net
        base_amp *= 0.5
        fac_amp *= 0.5
    raise DegenerateSeedError(
        f"could not build a generic {symmetry} surface with N={N}")
