"""Bounce-2D: keep a ball bouncing on a tilting paddle (x, z, tilt joints)."""
from __future__ import annotations

import numpy as np

from . import physics
from .base import ContactEnv

PADDLE_LENGTH = 0.35
BALL_RADIUS = 0.035
RESTITUTION = 0.8
GRAVITY = 9.81
FALL_X = 0.24
MIN_GAP = 5
N_SEGMENTS = 5


def paddle_endpoints(theta: np.ndarray):
    c = theta[..., :2]
    u = np.stack([np.cos(theta[..., 2]), np.sin(theta[..., 2])], axis=-1)
    half = 0.5 * PADDLE_LENGTH
    return c - half * u, c + half * u


def paddle_point_velocity(theta, theta_dot, point):
    r = point - theta[..., :2]
    w = theta_dot[..., 2:3]
    return theta_dot[..., :2] + w * np.stack([-r[..., 1], r[..., 0]], axis=-1)


def segment_overlaps(theta, ball):
    """Which of the five equal paddle segments the ball overlaps, shape (..., 5)."""
    a, b = paddle_endpoints(theta)
    hits = []
    for i in range(N_SEGMENTS):
        s0, s1 = i / N_SEGMENTS, (i + 1) / N_SEGMENTS
        pa = a + s0 * (b - a)
        pb = a + s1 * (b - a)
        hits.append(physics.segment_distance(ball, pa, pb) < BALL_RADIUS)
    return np.stack(hits, axis=-1)


class Bounce2D(ContactEnv):
    env_id = "bounce2d"
    joint_low = np.array([-0.2, 0.0, -0.5])
    joint_high = np.array([0.2, 0.3, 0.5])
    home = np.array([0.0, 0.15, 0.0])
    vel_scale = 0.2
    n_sensors = N_SEGMENTS
    default_history = 4
    default_length = 600
    default_scales = {"air": 0.01, "bounce": 10.0, "fall": 10.0}
    default_randomization = {"joint_frac": 0.2, "ball_xy": 0.01, "drop_height": 0.12}
    gt_names = ("ball_x", "ball_z", "ball_vx", "ball_vz", "steps_without_contact")
    metric_names = ("bounces",)
    min_radius = BALL_RADIUS

    def __init__(self, cfg, gravity: float = GRAVITY, restitution: float = RESTITUTION):
        self.gravity = gravity
        self.restitution = restitution
        super().__init__(cfg)

    def _alloc_objects(self):
        self.ball = np.zeros((self.B, 2))
        self.ball_vel = np.zeros((self.B, 2))
        self.since_contact = np.zeros(self.B, dtype=np.int64)
        self.bounces = np.zeros(self.B, dtype=np.int64)

    def _object_fields(self):
        return ("ball", "ball_vel", "since_contact", "bounces")

    def _reset_objects(self, i, rng):
        j = self.rand["ball_xy"]
        if self.cfg.spawn_objects:
            self.ball[i] = self.theta[i, :2] + np.array([0.0, self.rand["drop_height"]]) + rng.uniform(-j, j, 2)
        else:
            self.ball[i] = (0.0, 10.0)
        self.ball_vel[i] = 0.0

    def _reset_metrics(self, idx):
        self.since_contact[idx] = 0
        self.bounces[idx] = 0

    def _max_relative_speed(self):
        paddle = np.linalg.norm(self.theta_dot[:, :2], axis=1) + np.abs(self.theta_dot[:, 2]) * 0.5 * PADDLE_LENGTH
        return paddle + np.linalg.norm(self.ball_vel, axis=1) + self.gravity * self.dt

    def _micro_step(self, dt, active):
        self.ball_vel[:, 1] -= self.gravity * dt
        self.ball = self.ball + self.ball_vel * dt[:, None]
        if self.trace is not None:
            self.trace.append({"theta": self.theta.copy(), "ball": self.ball.copy(), "active": active.copy()})
        hits = segment_overlaps(self.theta, self.ball) & active[:, None]
        a, b = paddle_endpoints(self.theta)
        q, _ = physics.closest_point_on_segment(self.ball, a, b)
        v_body = paddle_point_velocity(self.theta, self.theta_dot, q)
        self.ball, self.ball_vel, _ = physics.resolve_against_kinematic(
            self.ball, self.ball_vel, BALL_RADIUS, q, v_body, self.restitution, 0.0, active
        )
        return hits

    def _reward_terms(self, contacts):
        touched = contacts.any(axis=1)
        bounce = touched & (self.since_contact >= MIN_GAP)
        self.bounces += bounce
        self.since_contact = np.where(touched, 0, self.since_contact + 1)
        fell = (np.abs(self.ball[:, 0]) > FALL_X) | (self.ball[:, 1] < 0.0)
        terms = {
            "air": (~touched).astype(np.float64),
            "bounce": bounce.astype(np.float64),
            "fall": -fell.astype(np.float64),
        }
        return terms, fell

    def _episode_metrics(self, idx):
        return {"bounces": self.bounces[idx].astype(np.float64)}

    def ground_truth(self):
        return np.column_stack([self.ball, self.ball_vel, self.since_contact.astype(np.float64)])
