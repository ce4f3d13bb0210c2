"""Coordinated multi-agent action attacks and adversarial Q-learning defense."""

from .attack import (AttackConfig, AttackSchedule, RandomAttacker, delta_q_tot,
                     followup_select_kl, followup_select_l2, init_agent,
                     min_qtot_action, virtual_update, wolfpack_act)
from .buffer import EpisodeRecord, ReplayBuffer
from .config import RunConfig, load_config, parse_config
from .env import PPWorld, ScenarioSpec, make_scenario
from .harness import Trainer, evaluate, sweep, train
from .learner import (AgentNetConfig, MixerConfig, agent_q, ema_update,
                      epsilon_schedule, select_action, td_loss)
from .nn import ParamStore, softmax
from .planner import (PlannerConfig, PlannerWindow, attack_probability,
                      oracle_delta_qwp, plan_delta_qwp, qdiff_predict,
                      random_step_select, sample_init)

__all__ = [
    "AttackConfig", "AttackSchedule", "RandomAttacker", "delta_q_tot",
    "followup_select_kl", "followup_select_l2", "init_agent",
    "min_qtot_action", "virtual_update", "wolfpack_act", "EpisodeRecord",
    "ReplayBuffer", "RunConfig", "load_config", "parse_config", "PPWorld",
    "ScenarioSpec", "make_scenario", "Trainer", "evaluate", "sweep", "train",
    "AgentNetConfig", "MixerConfig", "agent_q", "ema_update",
    "epsilon_schedule", "select_action", "td_loss", "ParamStore", "softmax",
    "PlannerConfig", "PlannerWindow", "attack_probability", "oracle_delta_qwp",
    "plan_delta_qwp", "qdiff_predict", "random_step_select", "sample_init",
]

__version__ = "0.1.0"
