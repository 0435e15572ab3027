"""Package-balance task in the style of VMAS balance, with discrete thrust.

A rigid line carries a spherical package. Agents are attached at fixed
points along the line and push with discrete thrusts. Gravity pulls both
down; a tilted line lets the package slide. Every agent receives the same
reward: the decrease in package-goal distance times ``scale``, plus a
``-10`` penalty on the step where the line or the package reaches the floor
(the package leaving the line counts as reaching the floor).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# constants table
DT = 0.1
GRAVITY = 1.0
LINE_HALF = 0.8
LINE_MASS = 1.0
PKG_MASS = 0.5
PKG_RADIUS = 0.05
THRUST = 0.6
LIN_DAMP = 0.1
ANG_DAMP = 0.2
PKG_DAMP = 0.05
START_HEIGHT = 0.4
FLOOR_PENALTY = -10.0
REWARD_SCALE = 10.0
HORIZON = 100

ACTION_SETS = {
    5: np.array([[0.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]]),
    9: np.array([[x, y] for x in (-1.0, 0.0, 1.0) for y in (-1.0, 0.0, 1.0)]),
}
OBS_DIM = 14


@dataclass(frozen=True)
class BalanceState:
    center: np.ndarray      # line centre (x, y)
    vel: np.ndarray         # line centre velocity
    angle: float
    omega: float
    pkg_u: float            # package coordinate along the line from the centre
    pkg_du: float
    goal: np.ndarray
    offsets: np.ndarray     # agent attachment coordinates along the line
    t: int = 0
    horizon: int = HORIZON
    scale: float = REWARD_SCALE


def _axis(angle: float) -> tuple[np.ndarray, np.ndarray]:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c, s]), np.array([-s, c])


def package_position(state: BalanceState) -> np.ndarray:
    along, normal = _axis(state.angle)
    return state.center + state.pkg_u * along + PKG_RADIUS * normal


def package_velocity(state: BalanceState) -> np.ndarray:
    along, normal = _axis(state.angle)
    return state.vel + state.pkg_du * along + state.omega * state.pkg_u * normal


def goal_distance(state: BalanceState) -> float:
    return float(np.linalg.norm(state.goal - package_position(state)))


def progress_reward(prev_distance: float, next_distance: float, scale: float = REWARD_SCALE) -> float:
    return (prev_distance - next_distance) * scale


def balance_reset(seed: int | np.random.Generator, n_agents: int = 4, horizon: int = HORIZON,
                  scale: float = REWARD_SCALE) -> tuple[BalanceState, np.ndarray]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    center = np.array([rng.uniform(-0.2, 0.2), START_HEIGHT])
    goal = np.array([rng.uniform(-0.6, 0.6), rng.uniform(0.9, 1.2)])
    pkg_u = float(rng.uniform(-0.5, 0.5))
    offsets = np.linspace(-0.6, 0.6, n_agents) if n_agents > 1 else np.zeros(1)
    state = BalanceState(center, np.zeros(2), 0.0, 0.0, pkg_u, 0.0, goal, offsets, 0, horizon, scale)
    return state, observe(state)


def observe(state: BalanceState) -> np.ndarray:
    along, normal = _axis(state.angle)
    pkg = package_position(state)
    pkg_v = package_velocity(state)
    n = len(state.offsets)
    out = np.empty((n, OBS_DIM))
    for k, s in enumerate(state.offsets):
        p = state.center + s * along
        v = state.vel + state.omega * s * normal
        out[k] = np.concatenate([p, v, pkg - p, pkg_v, state.goal - pkg,
                                 [along[1], along[0], state.omega, state.pkg_u / LINE_HALF]])
    return out


def touches_floor(state: BalanceState) -> bool:
    along, _ = _axis(state.angle)
    ends_y = (state.center + LINE_HALF * along)[1], (state.center - LINE_HALF * along)[1]
    pkg = package_position(state)
    return min(ends_y) <= 0.0 or pkg[1] - PKG_RADIUS <= 0.0 or abs(state.pkg_u) > LINE_HALF


def balance_step(state: BalanceState, joint_action, n_choices: int = 5):
    """Returns ``(next_state, obs, rewards, done, info)``."""
    table = ACTION_SETS[n_choices]
    a = np.asarray(joint_action, dtype=np.int64)
    if a.shape != (len(state.offsets),) or np.any(a < 0) or np.any(a >= len(table)):
        raise ValueError(f"invalid joint action {joint_action!r}")
    forces = table[a] * THRUST
    along, normal = _axis(state.angle)
    mass = LINE_MASS + PKG_MASS
    acc = forces.sum(axis=0) / mass - np.array([0.0, GRAVITY]) - LIN_DAMP * state.vel
    # torque about the centre from thrust applied at each attachment point
    torque = float(np.sum(state.offsets * (forces @ normal)))
    inertia = LINE_MASS * (2 * LINE_HALF) ** 2 / 12.0 + PKG_MASS * state.pkg_u ** 2
    alpha = torque / inertia - ANG_DAMP * state.omega
    vel = state.vel + acc * DT
    omega = state.omega + alpha * DT
    pkg_du = (state.pkg_du - GRAVITY * along[1] * DT) * (1.0 - PKG_DAMP)
    nxt = replace(state, center=state.center + vel * DT, vel=vel, angle=state.angle + omega * DT,
                  omega=omega, pkg_u=state.pkg_u + pkg_du * DT, pkg_du=pkg_du, t=state.t + 1)
    shaped = progress_reward(goal_distance(state), goal_distance(nxt), state.scale)
    floor = touches_floor(nxt)
    penalty = FLOOR_PENALTY if floor else 0.0
    done = floor or nxt.t >= nxt.horizon
    rewards = np.full(len(state.offsets), shaped + penalty)
    return nxt, observe(nxt), rewards, done, {"shaped": shaped, "penalty": penalty, "floor": floor}


class BalanceEnv:
    name = "balance"

    def __init__(self, seed: int | None = None, n_agents: int = 4, horizon: int = HORIZON,
                 n_choices: int = 5, scale: float = REWARD_SCALE):
        if n_choices not in ACTION_SETS:
            raise ValueError(f"n_choices must be one of {sorted(ACTION_SETS)}")
        self.n_agents = n_agents
        self.horizon = horizon
        self.n_choices = n_choices
        self.n_actions = n_choices
        self.scale = scale
        self.obs_dim = OBS_DIM
        self.rng = np.random.default_rng(seed)
        self.state: BalanceState | None = None
        self._done = False

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state, obs = balance_reset(self.rng, self.n_agents, self.horizon, self.scale)
        self._done = False
        return obs

    def step(self, actions):
        if self.state is None:
            raise RuntimeError("step() before reset()")
        if self._done:
            raise RuntimeError("episode finished; call reset()")
        self.state, obs, rewards, done, info = balance_step(self.state, actions, self.n_choices)
        self._done = done
        return obs, rewards, done, info
