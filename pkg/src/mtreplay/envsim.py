"""Point-mass hover task with gravity that drifts over training.

The environment is a 1-D thruster problem: hold a unit mass at the target
height against gravity. The required thrust scales with |g|, so changing
gravity genuinely changes the optimal policy. The current gravity value is
appended to the observation, which is always [height, velocity, gravity].

Gravity follows one of four schedules (fixed, linear ramp, sine, uniform
random), held piecewise-constant over an adjustment period of 1000 steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GRAVITY_FIXED = -9.81
GRAVITY_MIN = -17.0
GRAVITY_MAX = -7.0
EVAL_GRAVITIES = (-7.0, -9.5, -12.0, -14.5, -17.0)

SCHEDULE_KINDS = ("fixed", "linear", "sine", "random")


@dataclass(frozen=True, slots=True)
class EnvParams:
    mass: float = 1.0
    f_max: float = 25.0
    dt: float = 0.05
    y_target: float = 1.0
    episode_len: int = 200


@dataclass(frozen=True, slots=True)
class GravitySchedule:
    """Maps a global training step to a gravity value.

    linear ramps from -7 at step 0 to -17 at `total_steps`; sine starts at
    the midpoint -12 rising toward -7 and completes `cycles` full periods;
    random redraws uniformly from [-17, -7] each adjustment period.
    """

    kind: str
    total_steps: int
    cycles: int = 3
    adjustment_period: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.total_steps < 0 or self.adjustment_period <= 0:
            raise ValueError("total_steps and adjustment_period must be positive")

    def gravity_at(self, global_step: int) -> float:
        if not 0 <= global_step <= self.total_steps:
            raise ValueError(
                f"step {global_step} outside [0, {self.total_steps}]")
        if self.kind == "fixed":
            return GRAVITY_FIXED
        q = (global_step // self.adjustment_period) * self.adjustment_period
        if self.kind == "linear":
            frac = q / self.total_steps if self.total_steps else 0.0
            return GRAVITY_MAX + (GRAVITY_MIN - GRAVITY_MAX) * frac
        if self.kind == "sine":
            phase = 2.0 * math.pi * self.cycles * q / self.total_steps \
                if self.total_steps else 0.0
            return -12.0 + 5.0 * math.sin(phase)
        rng = np.random.default_rng([self.seed, q // self.adjustment_period])
        return float(rng.uniform(GRAVITY_MIN, GRAVITY_MAX))


class PointMassEnv:
    """Semi-implicit Euler integration with an inelastic floor at y = 0."""

    def __init__(self, params: EnvParams = EnvParams()):
        self.params = params
        self.y = 0.0
        self.v = 0.0
        self.g = GRAVITY_FIXED
        self.step_in_episode = 0

    def observation(self) -> np.ndarray:
        return np.array([self.y, self.v, self.g])

    def set_gravity(self, g: float) -> None:
        self.g = float(g)

    def reset(self, gravity: float, rng: np.random.Generator) -> np.ndarray:
        self.y = float(rng.uniform(0.0, 0.2))
        self.v = 0.0
        self.g = float(gravity)
        self.step_in_episode = 0
        return self.observation()

    def step(self, action: float) -> tuple[np.ndarray, float, bool]:
        a = float(np.asarray(action).reshape(()))
        if not math.isfinite(a):
            raise ValueError(f"non-finite action: {a!r}")
        a = min(1.0, max(-1.0, a))
        p = self.params
        self.v += (a * p.f_max + p.mass * self.g) / p.mass * p.dt
        self.y += self.v * p.dt
        if self.y <= 0.0:
            self.y = 0.0
            self.v = max(self.v, 0.0)
        reward = -abs(self.y - p.y_target) - 0.01 * a * a
        self.step_in_episode += 1
        done = self.step_in_episode >= p.episode_len
        return self.observation(), reward, done


def make_eval_env(gravity: float, params: EnvParams = EnvParams()) -> PointMassEnv:
    """Environment with gravity pinned for the whole episode."""
    if not GRAVITY_MIN <= gravity <= GRAVITY_MAX:
        raise ValueError(
            f"eval gravity {gravity} outside [{GRAVITY_MIN}, {GRAVITY_MAX}]")
    env = PointMassEnv(params)
    env.set_gravity(gravity)
    return env
