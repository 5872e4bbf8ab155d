"""Desired-motion generators for the closed-loop controllers.

Two flavors:

* ``ChainTrajectory`` targets the full chain (all-body velocity or pose
  tracking).  A reference configuration is carried rigidly along a
  translation path, so the desired twist is the same linear velocity for
  every body with zero angular rates.  Such a twist satisfies the joint
  velocity constraints in *any* configuration, which keeps the sliding
  surface on the constraint manifold even from perturbed starts.
* ``TaskTrajectory`` targets only the end-effector (last body) pose, used
  by the task-space controller.

Paths are closed-form (rest, constant-velocity line, rest-to-rest quintic,
circle) or cubic-spline waypoints.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .model import ChainState


# --------------------------------------------------------------- paths -----

class RestPath:
    """Hold position: zero offset, velocity and acceleration."""

    def sample(self, t: float):
        z = np.zeros(3)
        return z, z, z


class LinePath:
    """Constant-velocity translation from the origin offset."""

    def __init__(self, velocity, offset=(0.0, 0.0, 0.0)):
        self.velocity = np.asarray(velocity, dtype=float)
        self.offset = np.asarray(offset, dtype=float)

    def sample(self, t: float):
        return (self.offset + t * self.velocity, self.velocity.copy(),
                np.zeros(3))


class QuinticPath:
    """Rest-to-rest translation by ``offset`` over ``duration`` seconds.

    Minimum-jerk profile 10 s^3 - 15 s^4 + 6 s^5; holds the end point
    afterwards.
    """

    def __init__(self, offset, duration: float):
        self.offset = np.asarray(offset, dtype=float)
        self.duration = float(duration)
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    def sample(self, t: float):
        s = np.clip(t / self.duration, 0.0, 1.0)
        f = 10 * s**3 - 15 * s**4 + 6 * s**5
        df = (30 * s**2 - 60 * s**3 + 30 * s**4) / self.duration
        ddf = (60 * s - 180 * s**2 + 120 * s**3) / self.duration**2
        if t < 0.0 or t > self.duration:
            df = ddf = 0.0
        return self.offset * f, self.offset * df, self.offset * ddf


class CirclePath:
    """Circle of given radius and period in the plane given by its normal.

    Starts at angle ``phase`` on the circle around ``center``; the path
    point at t = 0 is center + radius * u1(phase).
    """

    def __init__(self, radius: float, period: float, center=(0.0, 0.0, 0.0),
                 normal=(0.0, 0.0, 1.0), phase: float = 0.0, u1=None):
        self.radius = float(radius)
        self.period = float(period)
        self.center = np.asarray(center, dtype=float)
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        if u1 is None:
            # build an orthonormal in-plane pair deterministically
            seed = np.array([1.0, 0.0, 0.0])
            if abs(n @ seed) > 0.9:
                seed = np.array([0.0, 1.0, 0.0])
            u1 = seed - (seed @ n) * n
        else:
            u1 = np.asarray(u1, dtype=float)
            u1 = u1 - (u1 @ n) * n
        self.u1 = u1 / np.linalg.norm(u1)
        self.u2 = np.cross(n, self.u1)
        self.phase = float(phase)

    def sample(self, t: float):
        w = 2.0 * np.pi / self.period
        a = self.phase + w * t
        pos = self.center + self.radius * (np.cos(a) * self.u1
                                           + np.sin(a) * self.u2)
        vel = self.radius * w * (-np.sin(a) * self.u1 + np.cos(a) * self.u2)
        acc = -self.radius * w * w * (np.cos(a) * self.u1
                                      + np.sin(a) * self.u2)
        return pos, vel, acc


class WaypointPath:
    """Clamped cubic spline through (time, point) waypoints.

    Velocity is zero at both ends; beyond the table the end points are
    held.
    """

    def __init__(self, times, points):
        times = np.asarray(times, dtype=float)
        points = np.asarray(points, dtype=float)
        if times.ndim != 1 or len(times) < 2:
            raise ValueError("need at least two waypoints")
        self._spline = CubicSpline(times, points, axis=0,
                                   bc_type="clamped")
        self._t0, self._t1 = float(times[0]), float(times[-1])
        self._p0, self._p1 = points[0].copy(), points[-1].copy()

    def sample(self, t: float):
        if t <= self._t0:
            return self._p0.copy(), np.zeros(3), np.zeros(3)
        if t >= self._t1:
            return self._p1.copy(), np.zeros(3), np.zeros(3)
        return (self._spline(t), self._spline(t, 1), self._spline(t, 2))


# --------------------------------------------------------- chain targets ---

@dataclass
class ChainTarget:
    """Desired full-chain pose and twist at one instant."""

    positions: np.ndarray    # (N, 3)
    quaternions: np.ndarray  # (N, 4)
    nu: np.ndarray           # (6N,)
    nu_rate: np.ndarray      # (6N,)


class ChainTrajectory:
    """Reference chain configuration carried rigidly along a path.

    The configuration (relative geometry and attitudes) is frozen at the
    reference state; only a common translation evolves.  The desired twist
    is therefore constraint-feasible at every configuration.
    """

    def __init__(self, reference: ChainState, path=None):
        self.reference = reference.copy()
        self.path = path if path is not None else RestPath()

    def sample(self, t: float) -> ChainTarget:
        n = self.reference.n_bodies
        offset, vel, acc = self.path.sample(t)
        positions = self.reference.positions + offset
        nu = np.concatenate([np.tile(vel, n), np.zeros(3 * n)])
        nu_rate = np.concatenate([np.tile(acc, n), np.zeros(3 * n)])
        return ChainTarget(positions=positions,
                           quaternions=self.reference.quaternions.copy(),
                           nu=nu, nu_rate=nu_rate)


# ---------------------------------------------------------- task targets ---

@dataclass
class TaskTarget:
    """Desired end-effector pose, twist and twist rate."""

    position: np.ndarray     # (3,)
    quaternion: np.ndarray   # (4,)
    velocity: np.ndarray     # (6,) [v; w]
    acceleration: np.ndarray  # (6,)


class TaskTrajectory:
    """End-effector position path with a held attitude."""

    def __init__(self, path, attitude):
        self.path = path
        self.attitude = np.asarray(attitude, dtype=float)

    def sample(self, t: float) -> TaskTarget:
        pos, vel, acc = self.path.sample(t)
        return TaskTarget(position=pos,
                          quaternion=self.attitude.copy(),
                          velocity=np.concatenate([vel, np.zeros(3)]),
                          acceleration=np.concatenate([acc, np.zeros(3)]))
