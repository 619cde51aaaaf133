"""Configurational facet-velocity laws.

A law maps the current network geometry to one normal velocity per facet.
Laws are pure functions of facet geometry; the registry is open so new
configurational laws can be plugged in.
"""

from __future__ import annotations

import numpy as np

from .kinematics import GeomCache, get_cache
from .network import Network

_REGISTRY = {}


def register_law(name: str):
    """Decorator: register a law factory under `name`.

    The factory receives the law parameters and returns
    evaluate(net, cache) -> {facet_id: V}.
    """
    def deco(factory):
        _REGISTRY[name] = factory
        return factory
    return deco


def law_names():
    return sorted(_REGISTRY)


class VelocityLaw:
    """A named configurational law with parameters."""

    def __init__(self, kind: str, **params):
        if kind not in _REGISTRY:
            raise ValueError(f"unknown velocity law {kind!r}; "
                             f"known: {law_names()}")
        self.kind = kind
        self.params = dict(params)
        self._eval = _REGISTRY[kind](**params)

    def __call__(self, net: Network, cache: GeomCache | None = None) -> dict:
        cache = get_cache(net, cache)
        field = self._eval(net, cache)
        if len(field) != len(net.facets):
            raise ValueError("velocity field must cover every facet once")
        for v in field.values():
            if not np.isfinite(v):
                raise ValueError("non-finite facet velocity")
        return field

    def __repr__(self):
        ps = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"VelocityLaw({self.kind}{', ' if ps else ''}{ps})"


@register_law("mean_height")
def _mean_height():
    """V_i = <h>_i: facets move away from the z=0 isotherm at a rate
    proportional to their mean distance from it."""
    def evaluate(net, cache):
        mh = cache.mean_heights(cache.positions(cache.D), cache.D)
        return {fid: float(mh[i]) for i, fid in enumerate(cache.fids)}
    return evaluate


@register_law("constant")
def _constant(c: float = 1.0):
    def evaluate(net, cache):
        return {fid: float(c) for fid in cache.fids}
    return evaluate


@register_law("area_power")
def _area_power(alpha: float = 1.0, c: float = 1.0):
    """V_i = c * area_i^alpha."""
    def evaluate(net, cache):
        areas = cache.areas(cache.positions(cache.D))
        return {fid: float(c * areas[i] ** alpha)
                for i, fid in enumerate(cache.fids)}
    return evaluate


@register_law("table")
def _table(values: dict = None, default: float = 0.0):
    """Fixed per-facet velocities (testing and hand-driven motions)."""
    values = dict(values or {})

    def evaluate(net, cache):
        return {fid: float(values.get(fid, default)) for fid in cache.fids}
    return evaluate
