"""Find-2D: a planar two-link arm searches a plate for a disc by touch."""
from __future__ import annotations

import numpy as np

from . import physics
from .base import ContactEnv, r_dist

LINK1, LINK2 = 0.30, 0.25
LINK_RADIUS = 0.01
DISC_RADIUS = 0.03
PLATE_CENTER = np.array([0.35, 0.0])
PLATE_HALF = 0.10
DISC_DAMPING = 8.0
RESTITUTION = 0.2
FIND_TOLERANCES = (0.03, 0.01, 0.0005)


def arm_points(theta: np.ndarray):
    """Base, elbow and fingertip positions for joint angles ``(..., 2)``."""
    t1 = theta[..., 0]
    t12 = t1 + theta[..., 1]
    base = np.zeros(theta.shape[:-1] + (2,))
    elbow = np.stack([LINK1 * np.cos(t1), LINK1 * np.sin(t1)], axis=-1)
    tip = elbow + np.stack([LINK2 * np.cos(t12), LINK2 * np.sin(t12)], axis=-1)
    return base, elbow, tip


def point_velocity(theta, theta_dot, point):
    """Velocity of a point rigidly attached to the distal link."""
    w1 = theta_dot[..., 0]
    w12 = w1 + theta_dot[..., 1]
    _, elbow, _ = arm_points(theta)
    v_elbow = w1[..., None] * np.stack([-elbow[..., 1], elbow[..., 0]], axis=-1)
    r = point - elbow
    return v_elbow + w12[..., None] * np.stack([-r[..., 1], r[..., 0]], axis=-1)


def link1_point_velocity(theta_dot, point):
    w1 = theta_dot[..., 0]
    return w1[..., None] * np.stack([-point[..., 1], point[..., 0]], axis=-1)


def sensor_overlaps(theta, disc_pos):
    """Binary contact of the two distal-link halves with the disc, shape (..., 2)."""
    _, elbow, tip = arm_points(theta)
    mid = 0.5 * (elbow + tip)
    reach = DISC_RADIUS + LINK_RADIUS
    near = physics.segment_distance(disc_pos, elbow, mid) < reach
    far = physics.segment_distance(disc_pos, mid, tip) < reach
    return np.stack([near, far], axis=-1)


class Find2D(ContactEnv):
    env_id = "find2d"
    joint_low = np.array([-1.0, -2.6])
    joint_high = np.array([2.6, 2.6])
    home = np.array([1.5, 0.0])
    vel_scale = 0.33
    n_sensors = 2
    default_history = 16
    default_length = 300
    default_scales = {"dist": 1.0}
    default_randomization = {"joint_deg": 7.0, "plate_half": PLATE_HALF}
    extra_dim = 4
    gt_names = ("disc_x", "disc_y", "disc_vx", "disc_vy", "tip_x", "tip_y")
    metric_names = ("time_to_3cm", "time_to_1cm", "time_to_0.05cm")
    min_radius = LINK_RADIUS

    def _alloc_objects(self):
        self.disc = np.zeros((self.B, 2))
        self.disc_vel = np.zeros((self.B, 2))

    def _object_fields(self):
        return ("disc", "disc_vel", "first_hit")

    def _joint_jitter(self, span):
        return np.full(self.J, np.deg2rad(self.rand["joint_deg"]))

    def _reset_objects(self, i, rng):
        if self.cfg.spawn_objects:
            h = self.rand["plate_half"]
            self.disc[i] = PLATE_CENTER + rng.uniform(-h, h, 2)
        else:
            self.disc[i] = (10.0, 10.0)
        self.disc_vel[i] = 0.0

    def _reset_metrics(self, idx):
        if not hasattr(self, "first_hit"):
            self.first_hit = np.full((self.B, len(FIND_TOLERANCES)), -1, dtype=np.int64)
        self.first_hit[idx] = -1

    def _extras(self):
        _, _, tip = arm_points(self.theta)
        phi = self.theta[:, 0] + self.theta[:, 1]
        return np.column_stack([tip, np.cos(phi), np.sin(phi)])

    def _max_relative_speed(self):
        arm = np.abs(self.theta_dot[:, 0]) * (LINK1 + LINK2) + np.abs(self.theta_dot[:, 1]) * LINK2
        return arm + np.linalg.norm(self.disc_vel, axis=1)

    def _micro_step(self, dt, active):
        self.disc, self.disc_vel = physics.damp(self.disc, self.disc_vel, DISC_DAMPING, dt[:, None])
        base, elbow, tip = arm_points(self.theta)
        if self.trace is not None:
            self.trace.append({"theta": self.theta.copy(), "disc": self.disc.copy(), "active": active.copy()})
        hits = sensor_overlaps(self.theta, self.disc) & active[:, None]
        for a, b, on_link2 in ((base, elbow, False), (elbow, tip, True)):
            q, _ = physics.closest_point_on_segment(self.disc, a, b)
            v_body = point_velocity(self.theta, self.theta_dot, q) if on_link2 else link1_point_velocity(self.theta_dot, q)
            self.disc, self.disc_vel, _ = physics.resolve_against_kinematic(
                self.disc, self.disc_vel, DISC_RADIUS, q, v_body, RESTITUTION, LINK_RADIUS, active
            )
        # plate rim: clamp and kill outward velocity
        lo, hi = PLATE_CENTER - PLATE_HALF, PLATE_CENTER + PLATE_HALF
        if self.cfg.spawn_objects:
            out_lo, out_hi = self.disc < lo, self.disc > hi
            self.disc = np.clip(self.disc, lo, hi)
            self.disc_vel = np.where(out_lo, np.maximum(self.disc_vel, 0.0), self.disc_vel)
            self.disc_vel = np.where(out_hi, np.minimum(self.disc_vel, 0.0), self.disc_vel)
        return hits

    def tip_distance(self) -> np.ndarray:
        _, _, tip = arm_points(self.theta)
        return np.maximum(np.linalg.norm(tip - self.disc, axis=1) - DISC_RADIUS - LINK_RADIUS, 0.0)

    def _reward_terms(self, contacts):
        d = self.tip_distance()
        for j, tol in enumerate(FIND_TOLERANCES):
            newly = (self.first_hit[:, j] < 0) & (d <= tol)
            self.first_hit[newly, j] = self.t[newly] + 1
        return {"dist": r_dist(d)}, np.zeros(self.B, dtype=bool)

    def _episode_metrics(self, idx):
        out = {}
        for j, name in enumerate(self.metric_names):
            steps = self.first_hit[idx, j].astype(np.float64)
            out[name] = np.where(steps >= 0, steps * self.dt * self.substeps, np.nan)
        return out

    def ground_truth(self):
        _, _, tip = arm_points(self.theta)
        return np.column_stack([self.disc, self.disc_vel, tip])
