"""Deterministic predator-prey particle world.

Predators (the learning agents) and prey are point masses on a double
integrator inside the unit square; landmarks are fixed scenery. Each step
every entity picks one of five discrete moves (stay or a cardinal
direction), accelerations are integrated with velocity damping and a speed
cap, and the shared reward counts predator-prey contacts. Prey move
uniformly at random from a dedicated stream, so attacker and exploration
randomness can never perturb them.

Per-agent observations are flat vectors laid out as:

    [own velocity (2), own position (2),
     landmark offsets (2 per landmark),
     other-predator offsets (2 each),
     prey offsets (2 each), prey velocities (2 each)]

and the global state is the concatenation of all predator observations.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

N_ACTIONS = 5

# Action index -> acceleration direction: stay, up, down, left, right.
ACTION_VECTORS = np.array(
    [[0.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]]
)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    n_predators: int
    n_prey: int
    n_landmarks: int = 2
    episode_limit: int = 50
    dt: float = 0.1
    damping: float = 0.25
    predator_accel: float = 3.0
    prey_accel: float = 4.0
    predator_max_speed: float = 1.0
    prey_max_speed: float = 1.3
    predator_radius: float = 0.075
    prey_radius: float = 0.05
    landmark_radius: float = 0.2
    reward_per_collision: float = 10.0

    def __post_init__(self):
        if self.n_predators < 1 or self.n_prey < 1 or self.n_landmarks < 0:
            raise ScenarioError("scenario needs >=1 predator, >=1 prey, >=0 landmarks")
        if self.episode_limit < 1:
            raise ScenarioError("episode_limit must be positive")

    @property
    def obs_dim(self) -> int:
        return 4 + 2 * self.n_landmarks + 2 * (self.n_predators - 1) + 4 * self.n_prey

    @property
    def state_dim(self) -> int:
        return self.n_predators * self.obs_dim

    @property
    def n_actions(self) -> int:
        return N_ACTIONS


SCENARIOS = {
    "pp_3_1": dict(n_predators=3, n_prey=1),
    "pp_6_2": dict(n_predators=6, n_prey=2),
    "pp_9_3": dict(n_predators=9, n_prey=3),
}


def make_scenario(name: str, **overrides) -> ScenarioSpec:
    if name not in SCENARIOS:
        raise ScenarioError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}")
    kwargs = dict(SCENARIOS[name])
    kwargs.update(overrides)
    return ScenarioSpec(**kwargs)


@dataclass
class WorldState:
    predator_pos: np.ndarray
    predator_vel: np.ndarray
    prey_pos: np.ndarray
    prey_vel: np.ndarray
    landmark_pos: np.ndarray
    t: int
    prey_rng: np.random.Generator = field(repr=False)

    def clone(self) -> "WorldState":
        return WorldState(
            predator_pos=self.predator_pos.copy(),
            predator_vel=self.predator_vel.copy(),
            prey_pos=self.prey_pos.copy(),
            prey_vel=self.prey_vel.copy(),
            landmark_pos=self.landmark_pos.copy(),
            t=self.t,
            prey_rng=copy.deepcopy(self.prey_rng),
        )


def clone(state: WorldState) -> WorldState:
    return state.clone()


def reset(spec: ScenarioSpec, seed: int) -> tuple[WorldState, np.ndarray]:
    """Place every entity uniformly in the unit square; returns (state, obs)."""
    init_seq, prey_seq = np.random.SeedSequence(seed).spawn(2)
    init_rng = np.random.default_rng(init_seq)
    state = WorldState(
        predator_pos=init_rng.uniform(0.0, 1.0, size=(spec.n_predators, 2)),
        predator_vel=np.zeros((spec.n_predators, 2)),
        prey_pos=init_rng.uniform(0.0, 1.0, size=(spec.n_prey, 2)),
        prey_vel=np.zeros((spec.n_prey, 2)),
        landmark_pos=init_rng.uniform(0.0, 1.0, size=(spec.n_landmarks, 2)),
        t=0,
        prey_rng=np.random.default_rng(prey_seq),
    )
    return state, observe(spec, state)


def prey_policy(state: WorldState, prey_id: int, rng: np.random.Generator) -> int:
    """Uniform random move for one prey; prey_id kept for interface symmetry."""
    del state, prey_id
    return int(rng.integers(N_ACTIONS))


def _integrate(pos, vel, accel, dt, damping, max_speed):
    vel *= 1.0 - damping
    vel += accel * dt
    speed = np.linalg.norm(vel, axis=-1, keepdims=True)
    over = speed > max_speed
    np.divide(vel, speed / max_speed, out=vel, where=over)
    pos += vel * dt
    # Walls of the unit square: clamp and kill the normal velocity component.
    hit = (pos < 0.0) | (pos > 1.0)
    np.clip(pos, 0.0, 1.0, out=pos)
    vel[hit] = 0.0


def step(spec: ScenarioSpec, state: WorldState,
         joint_action) -> tuple[WorldState, np.ndarray, float, bool]:
    """Advance one step; returns (next state, joint obs, reward, done)."""
    if state.t >= spec.episode_limit:
        raise ScenarioError("episode already finished")
    actions = np.asarray(joint_action, dtype=np.int64)
    if actions.shape != (spec.n_predators,):
        raise ScenarioError(
            f"joint_action shape {actions.shape} != ({spec.n_predators},)"
        )
    if np.any(actions < 0) or np.any(actions >= N_ACTIONS):
        raise ScenarioError(f"action index out of range: {actions}")

    nxt = state.clone()
    prey_actions = np.array(
        [prey_policy(nxt, g, nxt.prey_rng) for g in range(spec.n_prey)]
    )
    _integrate(nxt.predator_pos, nxt.predator_vel,
               ACTION_VECTORS[actions] * spec.predator_accel,
               spec.dt, spec.damping, spec.predator_max_speed)
    _integrate(nxt.prey_pos, nxt.prey_vel,
               ACTION_VECTORS[prey_actions] * spec.prey_accel,
               spec.dt, spec.damping, spec.prey_max_speed)
    nxt.t = state.t + 1
    return nxt, observe(spec, nxt), reward(spec, nxt), nxt.t >= spec.episode_limit


def reward(spec: ScenarioSpec, state: WorldState) -> float:
    """Shared reward: one unit per predator-prey contact, scaled."""
    diff = state.prey_pos[:, None, :] - state.predator_pos[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    contacts = dist < (spec.prey_radius + spec.predator_radius)
    return spec.reward_per_collision * float(contacts.sum())


def observe(spec: ScenarioSpec, state: WorldState) -> np.ndarray:
    """Per-predator observation matrix of shape (n_predators, obs_dim)."""
    n = spec.n_predators
    obs = np.empty((n, spec.obs_dim))
    for i in range(n):
        parts = [state.predator_vel[i], state.predator_pos[i]]
        parts.append((state.landmark_pos - state.predator_pos[i]).ravel())
        others = np.delete(state.predator_pos, i, axis=0) - state.predator_pos[i]
        parts.append(others.ravel())
        parts.append((state.prey_pos - state.predator_pos[i]).ravel())
        parts.append(state.prey_vel.ravel())
        obs[i] = np.concatenate(parts)
    return obs


def state_vector(spec: ScenarioSpec, state: WorldState,
                 obs: np.ndarray | None = None) -> np.ndarray:
    """Global state: the concatenation of all predator observations."""
    if obs is None:
        obs = observe(spec, state)
    return obs.reshape(spec.state_dim)


class PPWorld:
    """Stateful convenience wrapper around the functional ops.

    ``clone()`` yields an independent world with an identical future, which
    is what exact-rollout evaluation uses.
    """

    def __init__(self, spec: ScenarioSpec, seed: int | None = None,
                 _state: WorldState | None = None):
        self.spec = spec
        if _state is not None:
            self.state = _state
        else:
            if seed is None:
                raise ScenarioError("PPWorld needs a seed or an explicit state")
            self.state, self._obs = reset(spec, seed)
            return
        self._obs = observe(spec, self.state)

    def clone(self) -> "PPWorld":
        return PPWorld(self.spec, _state=self.state.clone())

    def observations(self) -> np.ndarray:
        return self._obs

    def state_vector(self) -> np.ndarray:
        return state_vector(self.spec, self.state, self._obs)

    @property
    def t(self) -> int:
        return self.state.t

    def step(self, joint_action) -> tuple[float, bool]:
        self.state, self._obs, r, done = step(self.spec, self.state, joint_action)
        return r, done
