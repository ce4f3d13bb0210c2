"""Run configuration: strict JSON ingestion for the training harness.

Top-level keys are exactly {scenario, mixer, attack, train, planner, eval,
seeds}; unknown keys anywhere are rejected so typos fail loudly instead of
silently running defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .attack import AttackConfig
from .env import ScenarioSpec, make_scenario
from .learner import AgentNetConfig, MixerConfig
from .planner import PlannerConfig


class ConfigError(ValueError):
    pass


def _take(section: dict, defaults: dict, where: str) -> dict:
    unknown = set(section) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(section)
    return merged


@dataclass(frozen=True)
class TrainSettings:
    total_steps: int = 300_000
    pretrain_steps: int = 100_000
    lr: float = 5e-4
    gamma: float = 0.99
    buffer_episodes: int = 5000
    batch_episodes: int = 32
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal: int = 50_000
    ema_rate: float = 0.005
    target_update: str = "ema"          # ema | hard
    hard_update_interval: int = 200
    grad_clip: float = 10.0
    optimizer_alpha: float = 0.99
    optimizer_eps: float = 1e-5
    double_q: bool = True
    checkpoint_interval: int = 50_000
    log_interval: int = 1               # episodes between metric rows

    def __post_init__(self):
        if self.pretrain_steps > self.total_steps:
            raise ConfigError("pretrain_steps must not exceed total_steps")
        if self.target_update not in ("ema", "hard"):
            raise ConfigError(f"unknown target_update {self.target_update!r}")


@dataclass(frozen=True)
class PlannerSettings:
    window: int = 20
    horizon: int = 20
    temperature: float = 0.5
    embed: int = 64
    ff_mult: int = 4
    lr: float = 5e-4
    label_anchors: int = 2
    batch_windows: int = 16
    oracle_labels: bool = False


@dataclass(frozen=True)
class EvalSettings:
    episodes: int = 100
    attackers: tuple[str, ...] = ("natural", "random", "wolfpack")
    k: int = 4
    epsilon: float = 0.0

    def __post_init__(self):
        for name in self.attackers:
            if name not in ("natural", "random", "wolfpack"):
                raise ConfigError(f"unknown attacker {name!r}")


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioSpec
    mixer_kind: str
    mixer_embed: int
    hypernet_embed: int
    attack: AttackConfig
    train: TrainSettings
    planner: PlannerSettings
    eval: EvalSettings
    seeds: tuple[int, ...] = (0, 1, 2)

    def agent_config(self) -> AgentNetConfig:
        return AgentNetConfig(obs_dim=self.scenario.obs_dim,
                              n_agents=self.scenario.n_predators,
                              n_actions=self.scenario.n_actions)

    def mixer_config(self) -> MixerConfig:
        return MixerConfig(kind=self.mixer_kind,
                           state_dim=self.scenario.state_dim,
                           n_agents=self.scenario.n_predators,
                           embed=self.mixer_embed,
                           hypernet_embed=self.hypernet_embed)

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(state_dim=self.scenario.state_dim,
                             n_agents=self.scenario.n_predators,
                             n_actions=self.scenario.n_actions,
                             window=self.planner.window,
                             horizon=self.planner.horizon,
                             embed=self.planner.embed,
                             ff_mult=self.planner.ff_mult,
                             temperature=self.planner.temperature)


_SCENARIO_DEFAULTS = {
    "name": None,
    "n_predators": None,
    "n_prey": None,
    "n_landmarks": 2,
    "episode_limit": 50,
    "dt": 0.1,
    "damping": 0.25,
    "predator_accel": 3.0,
    "prey_accel": 4.0,
    "predator_max_speed": 1.0,
    "prey_max_speed": 1.3,
    "predator_radius": 0.075,
    "prey_radius": 0.05,
    "landmark_radius": 0.2,
    "reward_per_collision": 10.0,
}

_MIXER_DEFAULTS = {"kind": "qmix", "embed": 32, "hypernet_embed": 64}

_ATTACK_DEFAULTS = {
    "k_wp": 1,
    "t_wp": 3,
    "m": 1,
    "init_mode": "uniform",
    "followup_mode": "kl",
    "step_mode": "planner",
    "alpha_virtual": 5e-4,
    "budget_mode": "scheduled",
    "kl_temperature": 1.0,
}

_TRAIN_DEFAULTS = {f: getattr(TrainSettings, f) for f in (
    "total_steps", "pretrain_steps", "lr", "gamma", "buffer_episodes",
    "batch_episodes", "epsilon_start", "epsilon_end", "epsilon_anneal",
    "ema_rate", "target_update", "hard_update_interval", "grad_clip",
    "optimizer_alpha", "optimizer_eps", "double_q", "checkpoint_interval",
    "log_interval")}

_PLANNER_DEFAULTS = {f: getattr(PlannerSettings, f) for f in (
    "window", "horizon", "temperature", "embed", "ff_mult", "lr",
    "label_anchors", "batch_windows", "oracle_labels")}

_EVAL_DEFAULTS = {"episodes": 100, "attackers": ["natural", "random", "wolfpack"],
                  "k": 4, "epsilon": 0.0}


def _parse_scenario(section: dict) -> ScenarioSpec:
    merged = _take(section, _SCENARIO_DEFAULTS, "scenario")
    name = merged.pop("name")
    if name is not None:
        return make_scenario(name, **{k: v for k, v in merged.items()
                                      if k not in ("n_predators", "n_prey")
                                      or v is not None})
    if merged["n_predators"] is None or merged["n_prey"] is None:
        raise ConfigError("scenario needs a preset name or explicit counts")
    return ScenarioSpec(**merged)


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"scenario", "mixer", "attack", "train", "planner", "eval", "seeds"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "scenario" not in data:
        raise ConfigError("config requires a scenario section")

    scenario = _parse_scenario(dict(data.get("scenario", {})))
    mixer = _take(dict(data.get("mixer", {})), _MIXER_DEFAULTS, "mixer")
    if mixer["kind"] not in ("vdn", "qmix"):
        raise ConfigError(f"unknown mixer kind {mixer['kind']!r}")
    attack = AttackConfig(**_take(dict(data.get("attack", {})),
                                  _ATTACK_DEFAULTS, "attack"))
    train = TrainSettings(**_take(dict(data.get("train", {})),
                                  _TRAIN_DEFAULTS, "train"))
    planner = PlannerSettings(**_take(dict(data.get("planner", {})),
                                      _PLANNER_DEFAULTS, "planner"))
    eval_raw = _take(dict(data.get("eval", {})), _EVAL_DEFAULTS, "eval")
    eval_raw["attackers"] = tuple(eval_raw["attackers"])
    evals = EvalSettings(**eval_raw)

    seeds = data.get("seeds", [0, 1, 2])
    if (not isinstance(seeds, (list, tuple)) or not seeds
            or not all(isinstance(s, int) for s in seeds)):
        raise ConfigError("seeds must be a non-empty list of integers")

    attack.validate(scenario.n_predators)
    if evals.k % (attack.t_wp + 1) != 0:
        raise ConfigError(
            f"eval k={evals.k} is not a whole number of windows of "
            f"{attack.t_wp + 1} steps"
        )
    if scenario.episode_limit < attack.total_budget:
        raise ConfigError("episode_limit is too short for the attack budget")
    return RunConfig(scenario=scenario, mixer_kind=mixer["kind"],
                     mixer_embed=mixer["embed"],
                     hypernet_embed=mixer["hypernet_embed"], attack=attack,
                     train=train, planner=planner, eval=evals,
                     seeds=tuple(seeds))


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return parse_config(data)
