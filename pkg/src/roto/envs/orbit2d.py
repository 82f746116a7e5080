"""Orbit-2D: four pegs steer two discs around each other inside a round dish.

Two virtual targets sit diametrically opposite on a 6 cm circle. When both
discs are within 1 cm of their assigned targets the assignment swaps; two
swaps bring each disc back to its first target and count as one rotation.
"""
from __future__ import annotations

import numpy as np

from . import physics
from .base import ContactEnv, r_dist

DISH_RADIUS = 0.12
DISC_RADIUS = 0.027
PEG_RADIUS = 0.015
DAMPING = 2.0
RESTITUTION = 0.5
TARGET_RADIUS = 0.06
TARGET_TOL = 0.01
FALL_SEPARATION = 0.15
PEG_HOME_RADIUS = 0.10
PEG_RANGE = 0.04
DISC_START = np.array([[0.0, 0.045], [0.0, -0.045]])
TARGETS = np.array([[TARGET_RADIUS, 0.0], [-TARGET_RADIUS, 0.0]])

_angles = np.deg2rad([45.0, 135.0, 225.0, 315.0])
PEG_HOME = PEG_HOME_RADIUS * np.stack([np.cos(_angles), np.sin(_angles)], axis=1)


def peg_positions(theta: np.ndarray) -> np.ndarray:
    return theta.reshape(theta.shape[:-1] + (4, 2))


def contact_flags(pegs, d1, d2):
    """Six binary sensors: pegs 0-3 vs either disc, disc-disc, disc-wall."""
    reach = DISC_RADIUS + PEG_RADIUS
    peg_hits = (np.linalg.norm(pegs - d1[..., None, :], axis=-1) < reach) | (
        np.linalg.norm(pegs - d2[..., None, :], axis=-1) < reach
    )
    pair = np.linalg.norm(d1 - d2, axis=-1) <= 2.0 * DISC_RADIUS
    limit = DISH_RADIUS - DISC_RADIUS
    wall = (np.linalg.norm(d1, axis=-1) > limit) | (np.linalg.norm(d2, axis=-1) > limit)
    return np.concatenate([peg_hits, pair[..., None], wall[..., None]], axis=-1)


class Orbit2D(ContactEnv):
    env_id = "orbit2d"
    joint_low = (PEG_HOME - PEG_RANGE).ravel()
    joint_high = (PEG_HOME + PEG_RANGE).ravel()
    home = PEG_HOME.ravel().copy()
    vel_scale = 0.2
    n_sensors = 6
    default_history = 4
    default_length = 600
    default_scales = {"dist1": 0.1, "dist2": 0.1, "rotation": 10.0, "fall": 10.0}
    default_randomization = {"joint_frac": 0.2, "disc_xy": 0.005}
    gt_names = ("d1_x", "d1_y", "d2_x", "d2_y", "v1_x", "v1_y", "v2_x", "v2_y", "separation")
    metric_names = ("rotations", "swaps")
    min_radius = PEG_RADIUS

    def _alloc_objects(self):
        self.discs = np.zeros((self.B, 2, 2))
        self.disc_vel = np.zeros((self.B, 2, 2))
        self.assignment = np.zeros(self.B, dtype=np.int64)
        self.swaps = np.zeros(self.B, dtype=np.int64)

    def _object_fields(self):
        return ("discs", "disc_vel", "assignment", "swaps")

    def _reset_objects(self, i, rng):
        j = self.rand["disc_xy"]
        if self.cfg.spawn_objects:
            self.discs[i] = DISC_START + rng.uniform(-j, j, (2, 2))
        else:
            self.discs[i] = DISC_START
        self.disc_vel[i] = 0.0
        self.assignment[i] = 0

    def _reset_metrics(self, idx):
        self.swaps[idx] = 0

    def targets(self) -> np.ndarray:
        """Assigned target per disc, shape (B, 2, 2)."""
        first = TARGETS[self.assignment]
        second = TARGETS[1 - self.assignment]
        return np.stack([first, second], axis=1)

    def _max_relative_speed(self):
        pegs = np.linalg.norm(self.theta_dot.reshape(self.B, 4, 2), axis=-1).max(axis=1)
        return pegs + np.linalg.norm(self.disc_vel, axis=-1).max(axis=1)

    def _micro_step(self, dt, active):
        d = dt[:, None, None]
        self.discs, self.disc_vel = physics.damp(self.discs, self.disc_vel, DAMPING, d)
        pegs = peg_positions(self.theta)
        if self.trace is not None:
            self.trace.append({"theta": self.theta.copy(), "discs": self.discs.copy(), "active": active.copy()})
        hits = contact_flags(pegs, self.discs[:, 0], self.discs[:, 1]) & active[:, None]
        peg_vel = self.theta_dot.reshape(self.B, 4, 2)
        for p in range(4):
            for k in range(2):
                self.discs[:, k], self.disc_vel[:, k], _ = physics.resolve_against_kinematic(
                    self.discs[:, k], self.disc_vel[:, k], DISC_RADIUS, pegs[:, p], peg_vel[:, p],
                    RESTITUTION, PEG_RADIUS, active,
                )
        p1, v1, p2, v2, _ = physics.resolve_pair(
            self.discs[:, 0], self.disc_vel[:, 0], self.discs[:, 1], self.disc_vel[:, 1],
            DISC_RADIUS, RESTITUTION, active,
        )
        self.discs = np.stack([p1, p2], axis=1)
        self.disc_vel = np.stack([v1, v2], axis=1)
        for k in range(2):
            pos, vel, _ = physics.resolve_inside_circle(
                self.discs[:, k], self.disc_vel[:, k], DISC_RADIUS, DISH_RADIUS, RESTITUTION
            )
            self.discs[:, k] = np.where(active[:, None], pos, self.discs[:, k])
            self.disc_vel[:, k] = np.where(active[:, None], vel, self.disc_vel[:, k])
        return hits

    def _reward_terms(self, contacts):
        tgt = self.targets()
        dist = np.linalg.norm(self.discs - tgt, axis=-1)
        reached = np.all(dist < TARGET_TOL, axis=1)
        self.assignment = np.where(reached, 1 - self.assignment, self.assignment)
        self.swaps += reached
        sep = np.linalg.norm(self.discs[:, 0] - self.discs[:, 1], axis=-1)
        out = np.linalg.norm(self.discs, axis=-1).max(axis=1) > DISH_RADIUS
        fell = (sep > FALL_SEPARATION) | out
        terms = {
            "dist1": r_dist(dist[:, 0]),
            "dist2": r_dist(dist[:, 1]),
            "rotation": reached.astype(np.float64),
            "fall": -fell.astype(np.float64),
        }
        return terms, fell

    def _episode_metrics(self, idx):
        return {"rotations": (self.swaps[idx] // 2).astype(np.float64), "swaps": self.swaps[idx].astype(np.float64)}

    def ground_truth(self):
        sep = np.linalg.norm(self.discs[:, 0] - self.discs[:, 1], axis=-1)
        return np.column_stack([self.discs.reshape(self.B, 4), self.disc_vel.reshape(self.B, 4), sep])
