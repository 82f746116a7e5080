"""Batched 2D contact primitives: circles against kinematic bodies and each other.

All functions act on leading batch axes and return updated copies together
with a boolean ``contact`` mask (geometric overlap detected and resolved).
"""
from __future__ import annotations

import numpy as np

_FALLBACK_NORMAL = np.array([0.0, 1.0])


def closest_point_on_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Closest point on segment ``a-b`` to ``p``; returns ``(q, s)`` with ``s`` in [0, 1]."""
    ab = b - a
    denom = np.sum(ab * ab, axis=-1)
    s = np.sum((p - a) * ab, axis=-1) / np.where(denom > 0, denom, 1.0)
    s = np.clip(s, 0.0, 1.0)
    return a + s[..., None] * ab, s


def segment_distance(p, a, b) -> np.ndarray:
    q, _ = closest_point_on_segment(p, a, b)
    return np.linalg.norm(p - q, axis=-1)


def _normal(delta, dist):
    safe = np.where(dist > 1e-12, dist, 1.0)[..., None]
    n = delta / safe
    return np.where((dist > 1e-12)[..., None], n, _FALLBACK_NORMAL)


def resolve_against_kinematic(pos, vel, radius, q, v_body, restitution, body_radius=0.0, active=None):
    """Dynamic circle (centre ``pos``) against a kinematic body whose closest
    surface-spine point is ``q`` moving at ``v_body``.

    Approaching normal velocity is reflected with coefficient ``restitution``
    relative to the body; penetration is removed by projection.
    """
    delta = pos - q
    dist = np.linalg.norm(delta, axis=-1)
    reach = radius + body_radius
    contact = dist < reach
    if active is not None:
        contact &= active
    if not np.any(contact):
        return pos, vel, contact
    n = _normal(delta, dist)
    vn = np.sum((vel - v_body) * n, axis=-1)
    approach = contact & (vn < 0)
    vel = vel - np.where(approach, (1.0 + restitution) * vn, 0.0)[..., None] * n
    pos = pos + np.where(contact, reach - dist, 0.0)[..., None] * n
    return pos, vel, contact


def resolve_pair(p1, v1, p2, v2, radius, restitution, active=None):
    """Equal-mass circle/circle collision of identical radius."""
    delta = p1 - p2
    dist = np.linalg.norm(delta, axis=-1)
    contact = dist <= 2.0 * radius
    if active is not None:
        contact &= active
    if not np.any(contact):
        return p1, v1, p2, v2, contact
    n = _normal(delta, dist)
    vn = np.sum((v1 - v2) * n, axis=-1)
    j = np.where(contact & (vn < 0), -(1.0 + restitution) * vn / 2.0, 0.0)[..., None]
    corr = np.where(contact, (2.0 * radius - dist) / 2.0, 0.0)[..., None]
    return p1 + corr * n, v1 + j * n, p2 - corr * n, v2 - j * n, contact


def resolve_inside_circle(pos, vel, radius, container_radius, restitution):
    """Keep a circle inside a static circular wall centred at the origin."""
    dist = np.linalg.norm(pos, axis=-1)
    limit = container_radius - radius
    contact = dist > limit
    if not np.any(contact):
        return pos, vel, contact
    n = -_normal(pos, dist)  # inward
    vn = np.sum(vel * n, axis=-1)
    vel = vel - np.where(contact & (vn < 0), (1.0 + restitution) * vn, 0.0)[..., None] * n
    pos = pos + np.where(contact, dist - limit, 0.0)[..., None] * n
    return pos, vel, contact


def damp(pos, vel, rate, dt):
    """Exact solution of ``x' = v, v' = -rate * v`` over ``dt``."""
    if rate <= 0:
        return pos + vel * dt, vel
    decay = np.exp(-rate * dt)
    return pos + vel * ((1.0 - decay) / rate), vel * decay
