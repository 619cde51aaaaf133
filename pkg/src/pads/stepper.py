"""Time integration drivers.

Two strategies: a predictive driver that brackets the next topological
event and steps exactly to it (time is sliced into intervals with constant
equations of motion), and a fixed-step driver that corrects events late,
refining the step whenever domains of influence overlap (discrete compound
events) or a repair triggers a new event (repair-induced inconsistencies).
The fixed-step driver self-tunes toward a target fraction of facets
undergoing topological change per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import events as ev
from .errors import (EventBlockedError, HeightMismatchError,
                     MisdetectedJoinError, RefinementExhaustedError,
                     UnsupportedEventError)
from .kinematics import GeomCache, get_cache
from .network import Network

TAU_T_FACTOR = 1e-10     # event-time bisection tolerance, relative to horizon
DEFAULT_RHO = 0.01       # target per-step event fraction
DEFAULT_MAX_REFINE = 24


@dataclass
class StepConfig:
    """Knobs shared by both drivers."""

    method: str = "fixed"            # "fixed" | "predictive"
    dt: float | None = None          # fixed method: initial step
    rho: float = DEFAULT_RHO         # fixed method: target event fraction
    max_refine: int = DEFAULT_MAX_REFINE
    integrator: str = "rk4"          # "rk4" | "euler"
    eps_a: float | None = None       # removal trigger (area)
    eps_b: float | None = None       # group-collection threshold
    tau_join: float | None = None
    saddle_policy: str = "self-reinforcement"
    reconnect_policy: str = "require-unique"
    substep: float | None = None     # predictive: max integrator step

    def resolved(self, net: Network) -> "StepConfig":
        c = StepConfig(**self.__dict__)
        L = net.L
        if c.eps_a is None:
            c.eps_a = ev.EPS_A_FACTOR * L * L
        if c.eps_b is None:
            c.eps_b = ev.EPS_B_RATIO * c.eps_a
        if c.tau_join is None:
            c.tau_join = ev.TAU_JOIN_FACTOR * L
        return c


@dataclass
class Checkpoint:
    """Full restorable state: network snapshot, time, trace length."""

    snapshot: dict
    time: float
    trace_len: int


@dataclass
class Trace:
    """Committed event records plus run bookkeeping."""

    records: list = field(default_factory=list)

    def lines(self):
        return [r.trace_line() for r in self.records]

    def class_counts(self):
        out = {}
        for r in self.records:
            out[r.cls] = out.get(r.cls, 0) + 1
        return out


# ------------------------------------------------------------- integration

def integrate_step(net: Network, law, dt: float,
                   cache: GeomCache | None = None,
                   scheme: str = "rk4") -> GeomCache:
    """One committed integrator step: offsets evolve under the law with
    stage re-evaluation, then every junction is re-derived from its plane
    triple."""
    cache = get_cache(net, cache)
    d0 = cache.D.copy()

    def rate(d):
        cache.D = d
        vel = law(net, cache)
        return cache.velocity_array(vel) * cache.S

    if scheme == "euler":
        d1 = d0 + dt * rate(d0)
    elif scheme == "rk4":
        k1 = rate(d0)
        k2 = rate(d0 + 0.5 * dt * k1)
        k3 = rate(d0 + 0.5 * dt * k2)
        k4 = rate(d0 + dt * k3)
        d1 = d0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ValueError(f"unknown integrator {scheme!r}")
    cache.D = d0
    P = cache.positions(d1)
    cache.commit(d1, P)
    return cache


# --------------------------------------------------------------- detection

@dataclass
class Detection:
    """A signature found by the corrective scan, before resolution."""

    kind: str          # "edge" | "area" | "constriction"
    ident: object      # edge id / facet id / ConstrictionSignature
    est_time: float
    base_facets: set


def corrective_scan(net: Network, cache: GeomCache, cfg: StepConfig,
                    t0: float, dt: float, pre_lengths=None, pre_areas=None):
    """Signatures present after a step: flipped edges, facets below the
    area trigger, constricted facets.  Event times are estimated by linear
    interpolation against the pre-step values when available."""
    cache = get_cache(net, cache)
    dets = []
    lengths = cache.signed_lengths(cache.P)
    areas = cache.areas(cache.P)

    for i in np.flatnonzero(lengths <= 0.0):
        eid = cache.eids[i]
        t_est = t0 + dt
        if pre_lengths is not None and eid in pre_lengths:
            l0 = pre_lengths[eid]
            if l0 > 0 and l0 - lengths[i] > 0:
                t_est = t0 + dt * l0 / (l0 - lengths[i])
        e = net.edges[eid]
        jo = net.junctions[e.origin].facets
        jt = net.junctions[e.terminus].facets
        dets.append(Detection("edge", eid, t_est, set(jo) | set(jt)))

    flipped_facets = {f for d in dets for f in d.base_facets}
    for i in np.flatnonzero(areas < cfg.eps_a):
        fid = cache.fids[i]
        t_est = t0 + dt
        if pre_areas is not None and fid in pre_areas:
            a0 = pre_areas[fid]
            if a0 > cfg.eps_a and a0 - areas[i] > 0:
                t_est = t0 + dt * (a0 - cfg.eps_a) / (a0 - areas[i])
        dets.append(Detection("area", fid, t_est, {fid}))

    area_facets = {d.ident for d in dets if d.kind == "area"}
    for fid in cache.fids:
        if fid in area_facets or fid in flipped_facets:
            continue  # already driven by another signature
        sig = ev.detect_constriction(net, fid)
        if sig is None:
            continue
        base = {fid}
        if sig.kind == "junction_edge":
            base |= set(net.junctions[sig.junction].facets)
            e = net.edges[sig.edge]
            base |= {e.left, e.right}
        else:
            for eid in sig.edges:
                e = net.edges[eid]
                base |= {e.left, e.right}
        frac = min(1.0, sig.depth / max(np.sqrt(cfg.eps_a), 1e-300))
        dets.append(Detection("constriction", sig, t0 + dt * (1 - 0.5 * frac),
                              base))
    return dets


def domain_of_influence(net: Network, base_facets) -> set:
    """Participant facets plus their one-ring of edge-adjacent neighbors."""
    out = set(base_facets)
    for fid in list(base_facets):
        if fid in net.facets:
            out.update(net.facet_neighbors(fid))
    return out


# ---------------------------------------------------------- event dispatch

def resolve_detection(net: Network, det: Detection, cfg: StepConfig,
                      velocities, law, time: float, vmax: float,
                      dt: float):
    """Resolve one scanned signature; returns the EventRecord, or None when
    the resolution is legitimately deferred (vanishing-facet removals)."""
    if det.kind == "edge":
        eid = det.ident
        if eid not in net.edges:
            return None
        rec = ev.classify_vanishing_edge(net, eid)
        if rec.cls == "NeighborSwitch":
            return ev.resolve_neighbor_switch(
                net, eid, velocities=velocities,
                saddle_policy=cfg.saddle_policy, time=time)
        if rec.cls == "FacetJoin":
            jo, jt, cl, cr, to, tt = ev._edge_ends(net, eid)
            g = net.facets[to].g
            eta = 10.0 * max(vmax, 1e-300) * dt * float(
                np.sqrt(1 + g[0] ** 2 + g[1] ** 2))
            ev.adjust_heights_for_join(net, to, tt, eta_max=eta)
            return ev.resolve_facet_join(net, eid, tau_join=cfg.tau_join,
                                         time=time)
        raise UnsupportedEventError(
            f"edge {eid} classifies as {rec.cls}", rec)
    if det.kind == "area":
        fid = det.ident
        if fid not in net.facets:
            return None
        nf = ev.collect_near_field(net, fid, cfg.eps_a, cfg.eps_b)
        return ev.remove_and_patch(net, nf, policy=cfg.reconnect_policy,
                                   time=time)
    sig = det.ident
    if sig.facet not in net.facets:
        return None
    if sig.kind == "junction_edge":
        return ev.resolve_facet_pierce(net, sig.facet, sig.junction,
                                       sig.edge, velocities=velocities,
                                       time=time, law=law)
    return ev.resolve_joining_facet_pinch(net, sig.facet, *sig.edges,
                                          tau_join=cfg.tau_join, time=time)


# ------------------------------------------------------------- fixed steps

class _Refine(Exception):
    """Internal: the current step must be retraced and refined."""

    def __init__(self, why):
        self.why = why


def run_method2(net: Network, law, dt: float, t_end: float,
                config: StepConfig | None = None, t0: float = 0.0,
                trace: Trace | None = None, observer=None) -> Trace:
    """Fixed timesteps with late correction.

    Per step: advance, scan for bypassed events, resolve them in estimated
    time order when their domains of influence are disjoint; otherwise
    retrace the step, halve it, and repeat recursively.  A repair that
    produces a fresh signature in its domain of influence (plus one ring)
    likewise forces a retrace.  The step size self-tunes toward the target
    event fraction rho.
    """
    cfg = (config or StepConfig(method="fixed")).resolved(net)
    trace = trace if trace is not None else Trace()
    t = t0
    dt = float(dt)
    while t < t_end - 1e-15 * max(1.0, abs(t_end)):
        dt_step = min(dt, t_end - t)
        n_involved = _fixed_step(net, law, t, dt_step, cfg, trace, depth=0)
        t += dt_step
        F = len(net.facets)
        observed = n_involved / max(F, 1)
        if observed == 0.0:
            dt *= 2.0
        else:
            dt *= float(np.clip(cfg.rho / observed, 0.5, 2.0))
        if observer is not None:
            observer(net, t, dt, trace)
    return trace


def _fixed_step(net: Network, law, t0: float, dt: float, cfg: StepConfig,
                trace: Trace, depth: int) -> int:
    """One fixed step with retrace/refine/repeat; returns the number of
    facets involved in resolved events (for step-size tuning)."""
    chk = Checkpoint(net.snapshot(), t0, len(trace.records))
    cache = get_cache(net)
    pre_lengths = {cache.eids[i]: float(l)
                   for i, l in enumerate(cache.signed_lengths(cache.P))}
    pre_areas = {cache.fids[i]: float(a)
                 for i, a in enumerate(cache.areas(cache.P))}
    try:
        cache = integrate_step(net, law, dt, cache, scheme=cfg.integrator)
        cache = get_cache(net, cache)
        dets = corrective_scan(net, cache, cfg, t0, dt, pre_lengths, pre_areas)
        if not dets:
            return 0
        dois = [domain_of_influence(net, d.base_facets) for d in dets]
        for i in range(len(dets)):
            for j in range(i + 1, len(dets)):
                if dois[i] & dois[j]:
                    raise _Refine(f"compound event at t~{dets[i].est_time:.6g}")
        velocities = law(net, cache)
        vmax = max(abs(v) for v in velocities.values()) if velocities else 0.0
        order = sorted(range(len(dets)),
                       key=lambda i: (dets[i].est_time, str(dets[i].ident)))
        involved = 0
        resolved_ids = set()
        for i in order:
            det = dets[i]
            try:
                rec = resolve_detection(net, det, cfg, velocities, law,
                                        dets[i].est_time, vmax, dt)
            except (EventBlockedError, MisdetectedJoinError,
                    HeightMismatchError) as exc:
                raise _Refine(str(exc))
            if rec is None:
                continue  # legitimately deferred (retried next step)
            trace.records.append(rec)
            involved += len(det.base_facets)
            resolved_ids.add(i)
            # repair-induced inconsistency check over DOI + one ring
            zone = domain_of_influence(net, rec.facets_affected)
            fresh = _rescan_zone(net, zone, cfg)
            known = {_det_key(d) for d in dets}
            for f2 in fresh:
                if _det_key(f2) not in known:
                    raise _Refine(f"repair-induced {f2.kind} in zone")
        return involved
    except _Refine:
        net.restore_snapshot(chk.snapshot)
        del trace.records[chk.trace_len:]
        if depth >= cfg.max_refine:
            raise RefinementExhaustedError(
                f"step at t={t0:.6g} not resolvable at depth {depth}")
        half = dt / 2.0
        n1 = _fixed_step(net, law, t0, half, cfg, trace, depth + 1)
        n2 = _fixed_step(net, law, t0 + half, half, cfg, trace, depth + 1)
        return n1 + n2
    except UnsupportedEventError:
        net.restore_snapshot(chk.snapshot)
        del trace.records[chk.trace_len:]
        raise


def _det_key(det: Detection):
    if det.kind == "constriction":
        return ("constriction", det.ident.facet)
    return (det.kind, det.ident)


def _rescan_zone(net: Network, zone, cfg: StepConfig):
    """Scan only the given facets for fresh signatures."""
    from .kinematics import edge_signed_length, facet_area
    out = []
    seen_edges = set()
    for fid in sorted(zone):
        if fid not in net.facets:
            continue
        for eid, _ in net.facets[fid].boundary:
            if eid in seen_edges:
                continue
            seen_edges.add(eid)
            if edge_signed_length(net, eid) <= 0:
                out.append(Detection("edge", eid, 0.0, set()))
        try:
            if facet_area(net, fid) < cfg.eps_a:
                out.append(Detection("area", fid, 0.0, {fid}))
                continue
        except Exception:
            out.append(Detection("area", fid, 0.0, {fid}))
            continue
        sig = ev.detect_constriction(net, fid)
        if sig is not None:
            out.append(Detection("constriction", sig, 0.0, {fid}))
    return out


# -------------------------------------------------------------- prediction

def predict_next_event_time(net: Network, law, t0: float, horizon: float,
                            cfg: StepConfig, n_probe: int = 12,
                            area_trigger=None):
    """Earliest zero of an edge length, facet-area crossing of the removal
    threshold, or constriction contact within the horizon.

    Sign changes are bracketed on trial advances from a snapshot and
    bisected to 1e-10 * horizon.  area_trigger optionally overrides the
    per-facet removal threshold (deferred removals back off).  Returns
    (t*, Detection) or None.
    """
    snap = net.snapshot()
    if area_trigger is None:
        area_trigger = {}

    def eps_of(fid):
        return area_trigger.get(fid, cfg.eps_a)

    def margins(delta):
        trial = Network.from_snapshot(snap)
        if delta > 0:
            integrate_step(trial, law, delta, scheme=cfg.integrator)
        c = get_cache(trial)
        lens = c.signed_lengths(c.P)
        areas = c.areas(c.P)
        non_simple = []
        a2 = c.areas2(c.P)
        for i, fid in enumerate(c.fids):
            if a2[i] <= 0:
                non_simple.append(fid)
                continue
            if ev.detect_constriction(trial, fid) is not None:
                non_simple.append(fid)
        return trial, c, lens, areas, non_simple

    def crossed(c, lens, areas, non_simple):
        hits = []
        for i in np.flatnonzero(lens <= 0.0):
            hits.append(("edge", c.eids[i], float(lens[i])))
        for i, fid in enumerate(c.fids):
            if areas[i] < eps_of(fid):
                hits.append(("area", fid, float(areas[i] - eps_of(fid))))
        for fid in non_simple:
            hits.append(("constriction", fid, 0.0))
        return hits

    _, c0, l0, a0, ns0 = margins(0.0)
    if crossed(c0, l0, a0, ns0):
        raise EventBlockedError("unresolved event already present")

    lo, hi = 0.0, None
    for k in range(1, n_probe + 1):
        delta = horizon * k / n_probe
        _, c, lens, areas, ns = margins(delta)
        if crossed(c, lens, areas, ns):
            hi = delta
            break
        lo = delta
    if hi is None:
        return None
    tol = TAU_T_FACTOR * horizon
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        _, c, lens, areas, ns = margins(mid)
        if crossed(c, lens, areas, ns):
            hi = mid
        else:
            lo = mid
    trial, c, lens, areas, ns = margins(hi)
    hits = crossed(c, lens, areas, ns)
    kind, ident, _ = sorted(hits, key=lambda h: (h[2], str(h[1])))[0]
    if kind == "constriction":
        sig = ev.detect_constriction(trial, ident,
                                     touch_tol=1e-7 * net.L)
        det = Detection("constriction", sig, t0 + hi, {ident})
    else:
        det = Detection(kind, ident, t0 + hi, set())
    return t0 + hi, det


def run_method1(net: Network, law, t_end: float,
                config: StepConfig | None = None, t0: float = 0.0,
                trace: Trace | None = None, observer=None) -> Trace:
    """Predictive event-to-event driver.

    Repeats: compute velocities, bracket the next event, advance exactly to
    it (sub-stepping the integrator), resolve that single event.  Deferred
    facet removals back off their per-facet trigger threshold so the run
    can proceed until the group becomes removable.
    """
    cfg = (config or StepConfig(method="predictive")).resolved(net)
    trace = trace if trace is not None else Trace()
    t = t0
    defer_scale = {}
    horizon = None
    while t < t_end - 1e-15 * max(1.0, abs(t_end)):
        cache = get_cache(net)
        eff = StepConfig(**cfg.__dict__)
        eff.eps_a = cfg.eps_a
        # per-facet deferral backoff: shrink the trigger for deferred groups
        scan_cfg = eff
        if horizon is None:
            horizon = (t_end - t) / 8.0 or t_end
        found = None
        h = min(horizon, t_end - t)
        while True:
            found = _predict_with_deferrals(net, law, t, h, scan_cfg,
                                            defer_scale)
            if found is not None or t + h >= t_end - 1e-15:
                break
            h = min(2 * h, t_end - t)
        if found is None:
            _advance_substeps(net, law, t_end - t, cfg)
            t = t_end
            if observer is not None:
                observer(net, t, None, trace)
            break
        t_star, det = found
        _advance_substeps(net, law, t_star - t, cfg)
        t = t_star
        cache = get_cache(net)
        velocities = law(net, cache)
        vmax = max(abs(v) for v in velocities.values()) if velocities else 0.0
        rec = None
        if det.kind == "area":
            fid = det.ident
            if fid in net.facets:
                nf = ev.collect_near_field(net, fid, cfg.eps_a * 1.0001,
                                           cfg.eps_b)
                rec = ev.remove_and_patch(net, nf,
                                          policy=cfg.reconnect_policy, time=t)
                if rec is None:
                    from .kinematics import facet_area
                    defer_scale[fid] = facet_area(net, fid) / 2.0
        elif det.kind == "edge":
            if det.ident in net.edges:
                det2 = Detection("edge", det.ident, t, det.base_facets)
                rec = resolve_detection(net, det2, cfg, velocities, law, t,
                                        vmax, horizon)
        else:
            sig = det.ident
            if sig is not None and sig.facet in net.facets:
                det2 = Detection("constriction", sig, t, det.base_facets)
                rec = resolve_detection(net, det2, cfg, velocities, law, t,
                                        vmax, horizon)
        if rec is not None:
            trace.records.append(rec)
            for fid in list(defer_scale):
                if fid not in net.facets:
                    del defer_scale[fid]
        if observer is not None:
            observer(net, t, None, trace)
        horizon = max(h / 4.0, (t_end - t) / 64.0) or horizon
    return trace


def _predict_with_deferrals(net, law, t0, horizon, cfg, defer_scale):
    """predict_next_event_time with per-facet reduced area triggers for
    facets whose removal was deferred."""
    return predict_next_event_time(net, law, t0, horizon, cfg,
                                   area_trigger=defer_scale)


def _advance_substeps(net: Network, law, span: float, cfg: StepConfig):
    if span <= 0:
        return
    h_max = cfg.substep if cfg.substep else span
    n = max(1, int(np.ceil(span / h_max)))
    h = span / n
    cache = None
    for _ in range(n):
        cache = integrate_step(net, law, h, cache, scheme=cfg.integrator)
