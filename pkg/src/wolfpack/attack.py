"""Coordinated action-space attacks under a per-episode budget.

The budgeted attacker may replace executed joint actions. The coordinated
(wolfpack) variant hits one initial agent at a chosen step, then for the
next ``t_wp`` steps hits the ``m`` agents whose greedy policies would shift
most in response. Every attacked agent's action is driven to the joint-value
minimizer with all other agents held at their original choices, so under a
monotone mixer each attacked step can only lower the joint value.

Follow-up scoring virtually nudges each agent's value vector along the
mixer gradient at the attacked joint action (only the attacked term carries
gradient; the additive mixer would otherwise score every agent zero) and
ranks agents by the KL shift of their softmaxed action preferences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import kl_divergence, softmax


class AttackConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    k_wp: int
    m: int
    t_wp: int = 3
    init_mode: str = "uniform"        # uniform | min_qtot
    followup_mode: str = "kl"         # kl | l2 | random
    step_mode: str = "planner"        # planner | random
    alpha_virtual: float = 5e-4
    budget_mode: str = "scheduled"    # scheduled | deviation_only
    kl_temperature: float = 1.0

    def __post_init__(self):
        if self.k_wp < 0 or self.t_wp < 0 or self.m < 0:
            raise AttackConfigError("k_wp, t_wp and m must be non-negative")
        if self.init_mode not in ("uniform", "min_qtot"):
            raise AttackConfigError(f"unknown init_mode {self.init_mode!r}")
        if self.followup_mode not in ("kl", "l2", "random"):
            raise AttackConfigError(f"unknown followup_mode {self.followup_mode!r}")
        if self.step_mode not in ("planner", "random"):
            raise AttackConfigError(f"unknown step_mode {self.step_mode!r}")
        if self.budget_mode not in ("scheduled", "deviation_only"):
            raise AttackConfigError(f"unknown budget_mode {self.budget_mode!r}")
        if self.alpha_virtual < 0:
            raise AttackConfigError("alpha_virtual must be non-negative")

    @property
    def total_budget(self) -> int:
        return self.k_wp * (self.t_wp + 1)

    def validate(self, n_agents: int) -> list[str]:
        """Hard-check m against the agent count; soft-check the sweep bound.

        Returns warnings; raises on configurations that cannot run at all.
        """
        if self.k_wp > 0 and self.m > n_agents - 1:
            raise AttackConfigError(
                f"m={self.m} exceeds the {n_agents - 1} available follow-up agents"
            )
        warnings = []
        if self.k_wp > 0 and self.m >= (n_agents - 1) // 2 and self.m > 0:
            warnings.append(
                f"m={self.m} is at or above the recommended bound "
                f"floor((n-1)/2)={(n_agents - 1) // 2}; attacks may be extreme"
            )
        return warnings


@dataclass
class Window:
    t_init: int
    initial_agent: int
    followups: tuple[int, ...]
    window_id: int


@dataclass
class AttackSchedule:
    """Per-episode attacker bookkeeping."""

    budget: int
    wolfpacks_remaining: int
    k_t: int = -1
    window: Window | None = None
    windows_opened: int = 0
    attacked_log: list = field(default_factory=list)

    def __post_init__(self):
        if self.k_t < 0:
            self.k_t = self.budget

    @classmethod
    def fresh(cls, config: AttackConfig) -> "AttackSchedule":
        return cls(budget=config.total_budget, wolfpacks_remaining=config.k_wp)


def min_qtot_action(i: int, q: np.ndarray, state, original: np.ndarray,
                    mixer_fn) -> int:
    """Joint-value minimizing action for agent i, others at their originals.

    Exhaustive over the agent's actions; ties resolve to the lowest index.
    """
    n, n_actions = q.shape
    base = q[np.arange(n), original]
    candidates = np.tile(base, (n_actions, 1))
    candidates[:, i] = q[i]
    totals = mixer_fn(candidates, state)
    return int(np.argmin(totals))


def delta_q_tot(state, original: np.ndarray, attacked: np.ndarray,
                q: np.ndarray, mixer_fn) -> float:
    """Joint-value reduction Qtot(s, a) - Qtot(s, a~)."""
    idx = np.arange(q.shape[0])
    return float(mixer_fn(q[idx, original], state) - mixer_fn(q[idx, attacked], state))


def virtual_update(q: np.ndarray, state, original: np.ndarray,
                   attacked: np.ndarray, mixer_grad_fn,
                   alpha_virtual: float) -> np.ndarray:
    """One imagined credit-assignment step after an initial attack.

    Each agent's value at its attacked-joint entry moves up the mixer
    gradient evaluated at the attacked joint action; everything else is
    unchanged. The unattacked joint's value is treated as a constant.
    """
    idx = np.arange(q.shape[0])
    grad = mixer_grad_fn(q[idx, attacked], state)
    q_virtual = q.copy()
    q_virtual[idx, attacked] += alpha_virtual * np.asarray(grad)
    return q_virtual


def kl_shift_scores(q: np.ndarray, q_virtual: np.ndarray, i: int,
                    temperature: float = 1.0) -> dict[int, float]:
    """Preference-shift score per candidate agent (everyone but i)."""
    return {j: kl_divergence(softmax(q[j], temperature),
                             softmax(q_virtual[j], temperature))
            for j in range(q.shape[0]) if j != i}


def followup_select_kl(q: np.ndarray, q_virtual: np.ndarray, i: int, m: int,
                       temperature: float = 1.0) -> list[int]:
    """The m agents (excluding i) whose softmaxed preferences shift most."""
    n = q.shape[0]
    if m > n - 1:
        raise AttackConfigError(f"m={m} exceeds {n - 1} candidate agents")
    scores = kl_shift_scores(q, q_virtual, i, temperature)
    ranked = sorted(scores, key=lambda j: (-scores[j], j))
    return sorted(ranked[:m])


def followup_select_l2(obs: np.ndarray, i: int, m: int) -> list[int]:
    """The m agents (excluding i) observationally closest to agent i."""
    n = obs.shape[0]
    if m > n - 1:
        raise AttackConfigError(f"m={m} exceeds {n - 1} candidate agents")
    dists = []
    for j in range(n):
        if j == i:
            continue
        dists.append((float(np.linalg.norm(obs[j] - obs[i])), j))
    dists.sort()
    return sorted(j for _, j in dists[:m])


def followup_select_random(rng: np.random.Generator, n: int, i: int,
                           m: int) -> list[int]:
    others = [j for j in range(n) if j != i]
    if m > len(others):
        raise AttackConfigError(f"m={m} exceeds {len(others)} candidate agents")
    picked = rng.choice(len(others), size=m, replace=False)
    return sorted(others[k] for k in picked)


def init_agent(mode: str, rng: np.random.Generator, q: np.ndarray, state,
               original: np.ndarray, mixer_fn) -> int:
    """Initial victim: uniform draw, or the agent whose worst action hurts most."""
    n = q.shape[0]
    if mode == "uniform":
        return int(rng.integers(n))
    if mode != "min_qtot":
        raise AttackConfigError(f"unknown init mode {mode!r}")
    best_j, best_val = 0, np.inf
    base = q[np.arange(n), original]
    for j in range(n):
        candidates = np.tile(base, (q.shape[1], 1))
        candidates[:, j] = q[j]
        val = float(np.min(mixer_fn(candidates, state)))
        if val < best_val:
            best_j, best_val = j, val
    return best_j


def window_fits(t: int, config: AttackConfig, episode_limit: int) -> bool:
    """A window opened at t must close before the episode does."""
    return t + config.t_wp < episode_limit


def must_fire(t: int, schedule: AttackSchedule, config: AttackConfig,
              episode_limit: int) -> bool:
    """True when the remaining steps exactly fit the remaining windows.

    Forcing the initial attack at this point makes the scheduled budget come
    out exact whenever the episode is long enough.
    """
    if schedule.wolfpacks_remaining <= 0 or schedule.k_t <= 0:
        return False
    if schedule.window is not None:
        return False
    needed = schedule.wolfpacks_remaining * (config.t_wp + 1)
    return episode_limit - t <= needed


def wolfpack_act(t: int, state, original: np.ndarray, q: np.ndarray,
                 obs: np.ndarray, schedule: AttackSchedule, config: AttackConfig,
                 fire: bool, rng: np.random.Generator, mixer_fn,
                 mixer_grad_fn) -> np.ndarray:
    """One attacker decision; mutates the schedule, returns executed actions.

    Case split: inside an open window the fixed follow-up group is attacked
    (each agent's minimizing action recomputed from current values against
    the original joint action); otherwise a firing signal opens a new window
    on a fresh initial agent and selects the follow-up group once from the
    same step's quantities; otherwise the original action passes through.
    """
    original = np.asarray(original, dtype=np.int64)
    attacked = original.copy()
    win = schedule.window

    if win is not None:
        if not win.t_init < t <= win.t_init + config.t_wp:
            raise RuntimeError(
                f"inconsistent schedule: step {t} outside window at {win.t_init}"
            )
        if schedule.k_t > 0:
            for j in win.followups:
                attacked[j] = min_qtot_action(j, q, state, original, mixer_fn)
            _consume(schedule, config, original, attacked)
            _log(schedule, t, win, list(win.followups), state, original,
                 attacked, q, mixer_fn)
        if t == win.t_init + config.t_wp:
            schedule.window = None
        return attacked

    if fire and schedule.wolfpacks_remaining > 0 and schedule.k_t > 0:
        i = init_agent(config.init_mode, rng, q, state, original, mixer_fn)
        attacked[i] = min_qtot_action(i, q, state, original, mixer_fn)
        scores = None
        if config.followup_mode == "kl":
            q_virtual = virtual_update(q, state, original, attacked,
                                       mixer_grad_fn, config.alpha_virtual)
            scores = kl_shift_scores(q, q_virtual, i, config.kl_temperature)
            followups = followup_select_kl(q, q_virtual, i, config.m,
                                           config.kl_temperature)
        elif config.followup_mode == "l2":
            followups = followup_select_l2(obs, i, config.m)
        else:
            followups = followup_select_random(rng, q.shape[0], i, config.m)
        win = Window(t_init=t, initial_agent=i, followups=tuple(followups),
                     window_id=schedule.windows_opened)
        schedule.windows_opened += 1
        schedule.wolfpacks_remaining -= 1
        schedule.window = win if config.t_wp > 0 else None
        _consume(schedule, config, original, attacked)
        _log(schedule, t, win, [i], state, original, attacked, q, mixer_fn,
             initial=True, kl_scores=scores)
        return attacked

    return attacked


def _consume(schedule: AttackSchedule, config: AttackConfig,
             original: np.ndarray, attacked: np.ndarray) -> None:
    if config.budget_mode == "scheduled":
        schedule.k_t -= 1
    elif np.any(original != attacked):
        schedule.k_t -= 1


def _log(schedule: AttackSchedule, t: int, win: Window, targets: list[int],
         state, original, attacked, q, mixer_fn, initial: bool = False,
         kl_scores: dict | None = None) -> None:
    entry = {
        "step": t,
        "window": win.window_id,
        "initial": win.initial_agent if initial else None,
        "targets": targets,
        "delta_q_tot": delta_q_tot(state, original, attacked, q, mixer_fn),
    }
    if kl_scores is not None:
        entry["kl_scores"] = {str(j): float(s) for j, s in kl_scores.items()}
    schedule.attacked_log.append(entry)


class RandomAttacker:
    """Budget-matched baseline: random steps, agents, and replacement actions."""

    def __init__(self, episode_limit: int, budget: int, rng: np.random.Generator,
                 n_agents: int, n_actions: int = 5):
        self.rng = rng
        self.n_agents = n_agents
        self.n_actions = n_actions
        k = min(budget, episode_limit)
        if k > 0:
            steps = rng.choice(episode_limit, size=k, replace=False)
            self.steps = set(int(s) for s in steps)
        else:
            self.steps = set()
        self.k_t = k
        self.attacked_log = []

    def act(self, t: int, original: np.ndarray) -> np.ndarray:
        attacked = np.asarray(original, dtype=np.int64).copy()
        if t in self.steps and self.k_t > 0:
            agent = int(self.rng.integers(self.n_agents))
            # Uniform over the actions other than the original one.
            shift = int(self.rng.integers(self.n_actions - 1))
            attacked[agent] = shift + 1 if shift >= attacked[agent] else shift
            self.k_t -= 1
            self.attacked_log.append({"step": t, "window": None, "initial": None,
                                      "targets": [agent], "delta_q_tot": None})
        return attacked
