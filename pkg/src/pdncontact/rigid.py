"""Rigid body state: classical RK4 translation dynamics or prescribed motion.

The body carries a reference surface/volume mesh; `apply_motion` produces the
mesh at the current offset. Rotation is not modeled: every benchmark drives a
purely translating obstacle, which keeps the projection geometry exact.
"""

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class RigidState:
    """Translating rigid obstacle.

    motion_mode "prescribed-displacement": the driver sets `offset` directly
    (mass and forces ignored). motion_mode "force-driven": rk4_step advances
    offset/velocity under gravity plus an external force held constant over
    the step.
    """

    reference_mesh: object
    offset: np.ndarray
    velocity: np.ndarray
    mass: float = 1.0
    gravity: np.ndarray = None
    motion_mode: str = "prescribed-displacement"
    time: float = 0.0

    def __post_init__(self):
        dim = self.reference_mesh.dim
        self.offset = np.asarray(self.offset, dtype=float).reshape(dim)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(dim)
        if self.gravity is None:
            self.gravity = np.zeros(dim)
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(dim)
        if self.motion_mode not in ("prescribed-displacement", "force-driven"):
            raise ValueError(f"unknown motion mode {self.motion_mode!r}")
        if self.motion_mode == "force-driven" and self.mass <= 0:
            raise ValueError("force-driven mode requires positive mass")


def rk4_step(state, external_force, dt):
    """Advance a force-driven body by classical RK4 on x'' = g + F/m.

    The external force is frozen across the four stages (the coupling scheme
    exchanges forces once per step), making the acceleration constant and the
    update exact for constant-force intervals.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.motion_mode != "force-driven":
        raise ValueError("rk4_step requires a force-driven rigid body")
    if state.mass <= 0:
        raise ValueError("mass must be positive")
    F = np.asarray(external_force, dtype=float).reshape(state.offset.shape)
    acc = state.gravity + F / state.mass

    def deriv(pos_vel):
        pos, vel = pos_vel
        return vel, acc

    x0, v0 = state.offset, state.velocity
    k1x, k1v = deriv((x0, v0))
    k2x, k2v = deriv((x0 + 0.5 * dt * k1x, v0 + 0.5 * dt * k1v))
    k3x, k3v = deriv((x0 + 0.5 * dt * k2x, v0 + 0.5 * dt * k2v))
    k4x, k4v = deriv((x0 + dt * k3x, v0 + dt * k3v))
    x1 = x0 + (dt / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
    v1 = v0 + (dt / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
    return replace(state, offset=x1, velocity=v1, time=state.time + dt)


def prescribed_step(state, offset, dt, velocity=None):
    """Move a prescribed-displacement body to a new offset."""
    offset = np.asarray(offset, dtype=float).reshape(state.offset.shape)
    if velocity is None:
        velocity = (offset - state.offset) / dt if dt > 0 else np.zeros_like(offset)
    return replace(state, offset=offset, velocity=np.asarray(velocity, dtype=float),
                   time=state.time + dt)


def apply_motion(state):
    """Surface/volume mesh of the body at its current offset."""
    return state.reference_mesh.translated(state.offset)
