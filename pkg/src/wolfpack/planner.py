"""Critical-step selection: dynamics model, damage forecaster, firing rule.

Two single-block causal attention decoders share one backbone shape. The
dynamics (planning) model embeds per-step tokens of global state plus joint
action one-hots and regresses the next state and joint observation; it is
used only to label training data. The damage (Q-difference) forecaster reads
a window of past states and emits, at the last real position, the predicted
attack damage for each of the next ``horizon`` start steps; its first
element drives a Bernoulli firing decision through a temperature softmax.

Windows are left-padded with zero tokens plus a validity mask, so the last
index is always the newest real entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attack as atk
from . import autodiff as ad
from . import nn
from .attack import AttackConfig, AttackSchedule
from .autodiff import Tape, Tensor
from .learner import AgentNetConfig, agent_q, one_hot
from .nn import Binder, ParamStore, softmax


@dataclass(frozen=True)
class PlannerConfig:
    state_dim: int
    n_agents: int
    n_actions: int = 5
    obs_total: int | None = None   # defaults to state_dim (state = concat obs)
    window: int = 20
    horizon: int = 20
    embed: int = 64
    ff_mult: int = 4
    temperature: float = 0.5

    def __post_init__(self):
        if self.window < 1 or self.horizon < 1:
            raise ValueError("window and horizon must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def obs_width(self) -> int:
        return self.state_dim if self.obs_total is None else self.obs_total

    @property
    def token_dim(self) -> int:
        return self.state_dim + self.n_agents * self.n_actions


def build_planning_params(store: ParamStore, cfg: PlannerConfig, rng,
                          prefix: str = "planner") -> None:
    nn.add_dense_params(store, rng, f"{prefix}.embed", cfg.token_dim, cfg.embed)
    store.add(f"{prefix}.pos", nn.uniform_init(rng, (cfg.window, cfg.embed),
                                               cfg.embed))
    nn.add_attention_params(store, rng, f"{prefix}.block", cfg.embed,
                            cfg.ff_mult * cfg.embed)
    nn.add_dense_params(store, rng, f"{prefix}.head_state", cfg.embed, cfg.state_dim)
    nn.add_dense_params(store, rng, f"{prefix}.head_obs", cfg.embed, cfg.obs_width)


def build_qdiff_params(store: ParamStore, cfg: PlannerConfig,
                       rng, prefix: str = "qdiff") -> None:
    nn.add_dense_params(store, rng, f"{prefix}.embed", cfg.state_dim, cfg.embed)
    store.add(f"{prefix}.pos", nn.uniform_init(rng, (cfg.window, cfg.embed),
                                               cfg.embed))
    nn.add_attention_params(store, rng, f"{prefix}.block", cfg.embed,
                            cfg.ff_mult * cfg.embed)
    nn.add_dense_params(store, rng, f"{prefix}.head", cfg.embed, cfg.horizon)


class PlannerWindow:
    """Rolling (state, joint obs, joint action) history of fixed width."""

    def __init__(self, cfg: PlannerConfig):
        self.cfg = cfg
        self.states: list[np.ndarray] = []
        self.obs: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.states)

    def append(self, state_vec, obs_flat, actions) -> None:
        w = self.cfg.window
        self.states.append(np.asarray(state_vec, dtype=np.float64))
        self.obs.append(np.asarray(obs_flat, dtype=np.float64))
        self.actions.append(np.asarray(actions, dtype=np.int64))
        if len(self.states) > w:
            del self.states[0], self.obs[0], self.actions[0]

    def copy(self) -> "PlannerWindow":
        out = PlannerWindow(self.cfg)
        out.states = list(self.states)
        out.obs = list(self.obs)
        out.actions = list(self.actions)
        return out

    def arrays(self):
        """Left-padded (states, action one-hots, validity mask)."""
        cfg = self.cfg
        w = cfg.window
        k = len(self.states)
        if k == 0:
            raise ValueError("planner window is empty")
        states = np.zeros((w, cfg.state_dim))
        acts = np.zeros((w, cfg.n_agents * cfg.n_actions))
        mask = np.zeros(w, dtype=bool)
        states[w - k:] = np.stack(self.states)
        acts[w - k:] = one_hot(np.stack(self.actions),
                               cfg.n_actions).reshape(k, -1)
        mask[w - k:] = True
        return states, acts, mask


def left_pad_states(cfg: PlannerConfig, states_tail: np.ndarray):
    """Pad a (k, state_dim) tail of real states out to the window width."""
    w = cfg.window
    k = states_tail.shape[0]
    if k == 0:
        raise ValueError("need at least one state")
    out = np.zeros((w, cfg.state_dim))
    mask = np.zeros(w, dtype=bool)
    if k >= w:
        out[:] = states_tail[-w:]
        mask[:] = True
    else:
        out[w - k:] = states_tail
        mask[w - k:] = True
    return out, mask


def _take_last(tape, seq: Tensor):
    b, w, e = seq.data.shape
    flat = ad.reshape(tape, seq, (b, w * e))
    return ad.slice_last(tape, flat, (w - 1) * e, w * e)


def planning_forward(tape, binder: Binder, cfg: PlannerConfig, states, acts,
                     mask, prefix: str = "planner"):
    """Predict (next state, next joint obs) from a batch of windows."""
    if states.ndim == 2:
        states, acts, mask = states[None], acts[None], mask[None]
    tokens = np.concatenate([states, acts], axis=-1)
    x = ad.linear(tape, Tensor(tokens), binder.get(f"{prefix}.embed.w"),
                  binder.get(f"{prefix}.embed.b"))
    x = ad.add(tape, x, binder.get(f"{prefix}.pos"))
    x = nn.attention_block(tape, x, binder, f"{prefix}.block", causal=True,
                           key_mask=mask)
    h = _take_last(tape, x)
    s_pred = ad.linear(tape, h, binder.get(f"{prefix}.head_state.w"),
                       binder.get(f"{prefix}.head_state.b"))
    o_pred = ad.linear(tape, h, binder.get(f"{prefix}.head_obs.w"),
                       binder.get(f"{prefix}.head_obs.b"))
    return s_pred, o_pred


def qdiff_forward(tape, binder: Binder, cfg: PlannerConfig, states, mask,
                  prefix: str = "qdiff"):
    """Forecast the next ``horizon`` start-step damages from past states."""
    if states.ndim == 2:
        states, mask = states[None], mask[None]
    x = ad.linear(tape, Tensor(states), binder.get(f"{prefix}.embed.w"),
                  binder.get(f"{prefix}.embed.b"))
    x = ad.add(tape, x, binder.get(f"{prefix}.pos"))
    x = nn.attention_block(tape, x, binder, f"{prefix}.block", causal=True,
                           key_mask=mask)
    h = _take_last(tape, x)
    return ad.linear(tape, h, binder.get(f"{prefix}.head.w"),
                     binder.get(f"{prefix}.head.b"))


def qdiff_predict(store: ParamStore, cfg: PlannerConfig, states, mask,
                  prefix: str = "qdiff") -> np.ndarray:
    """Gradient-free forecast for one window; returns a length-L vector."""
    binder = Binder(store, None)
    out = qdiff_forward(None, binder, cfg, states, mask, prefix)
    return out.data.reshape(cfg.horizon)


def planning_loss(store: ParamStore, cfg: PlannerConfig, batch: dict,
                  prefix: str = "planner"):
    """Mean squared next-state plus next-observation error; grads in store."""
    if batch["states"].shape[0] == 0:
        raise ValueError("empty planning batch")
    tape = Tape()
    binder = Binder(store, tape)
    s_pred, o_pred = planning_forward(tape, binder, cfg, batch["states"],
                                      batch["actions"], batch["mask"], prefix)
    ds = ad.sum_last(tape, ad.square(tape, ad.sub(
        tape, s_pred, Tensor(batch["target_state"]))))
    do = ad.sum_last(tape, ad.square(tape, ad.sub(
        tape, o_pred, Tensor(batch["target_obs"]))))
    loss = ad.mean_all(tape, ad.add(tape, ds, do))
    tape.backward(loss)
    binder.flush_grads()
    return float(loss.data), tape


def qdiff_loss(store: ParamStore, cfg: PlannerConfig, batch: dict,
               prefix: str = "qdiff"):
    """Masked MSE between forecasts and damage targets; grads in store."""
    if batch["states"].shape[0] == 0:
        raise ValueError("empty forecast batch")
    tape = Tape()
    binder = Binder(store, tape)
    pred = qdiff_forward(tape, binder, cfg, batch["states"], batch["mask"], prefix)
    tmask = np.asarray(batch["target_mask"], dtype=np.float64)
    count = tmask.sum()
    if count == 0:
        raise ValueError("forecast batch has no valid targets")
    err = ad.square(tape, ad.sub(tape, pred, Tensor(batch["targets"])))
    loss = ad.affine_const(tape, ad.sum_all(tape, ad.mul(tape, err, Tensor(tmask))),
                           1.0 / count)
    tape.backward(loss)
    binder.flush_grads()
    return float(loss.data), tape


def attack_probability(forecast, temperature: float) -> float:
    """First element of the temperature softmax over the forecast vector."""
    forecast = np.asarray(forecast, dtype=np.float64)
    if forecast.ndim != 1 or forecast.size == 0:
        raise ValueError("forecast must be a non-empty vector")
    return float(softmax(forecast, temperature)[0])


def sample_init(p: float, rng: np.random.Generator,
                schedule: AttackSchedule) -> bool:
    """Bernoulli firing decision, gated on remaining windows and budget."""
    if schedule.window is not None:
        return False
    if schedule.wolfpacks_remaining <= 0 or schedule.k_t <= 0:
        return False
    return bool(rng.random() < p)


def random_step_select(rng: np.random.Generator, k_wp: int, episode_limit: int,
                       t_wp: int) -> list[int]:
    """K_WP window starts, uniform over non-overlapping feasible placements."""
    width = t_wp + 1
    free = episode_limit - k_wp * width
    if k_wp < 0 or free < 0:
        raise ValueError(
            f"cannot pack {k_wp} windows of {width} steps into {episode_limit}"
        )
    if k_wp == 0:
        return []
    slots = np.sort(rng.choice(free + k_wp, size=k_wp, replace=False))
    return [int(c) + j * (width - 1) for j, c in enumerate(slots)]


@dataclass
class RolloutPolicy:
    """What a damage rollout needs from the learner side."""

    store: ParamStore
    agent_cfg: AgentNetConfig
    mixer_fn: object
    mixer_grad_fn: object


def _greedy_step(policy: RolloutPolicy, obs_rows, last_onehot, hidden):
    """Batched greedy action query; rows are (rollout, agent) pairs."""
    cfg = policy.agent_cfg
    rows = obs_rows.shape[0]
    ids = np.tile(np.eye(cfg.n_agents), (rows // cfg.n_agents, 1))
    binder = Binder(policy.store, None)
    q, h = agent_q(None, binder, cfg, obs_rows, last_onehot, ids, Tensor(hidden))
    return q.data, h.data


def _attack_targets(q, state, original, targets, policy) -> np.ndarray:
    """Drive each targeted agent to its joint-value minimizer."""
    attacked = original.copy()
    for j in targets:
        attacked[j] = atk.min_qtot_action(j, q, state, original, policy.mixer_fn)
    return attacked


def _pick_followups(attack_cfg, policy, rng, q, state, original, attacked,
                    obs_mat, i) -> tuple[int, ...]:
    if attack_cfg.followup_mode == "kl":
        qv = atk.virtual_update(q, state, original, attacked,
                                policy.mixer_grad_fn, attack_cfg.alpha_virtual)
        return tuple(atk.followup_select_kl(q, qv, i, attack_cfg.m,
                                            attack_cfg.kl_temperature))
    if attack_cfg.followup_mode == "l2":
        return tuple(atk.followup_select_l2(obs_mat, i, attack_cfg.m))
    return tuple(atk.followup_select_random(rng, q.shape[0], i, attack_cfg.m))


def plan_delta_qwp(histories, anchor_states, anchor_obs, hiddens, last_onehots,
                   policy: RolloutPolicy, attack_cfg: AttackConfig,
                   planner_store: ParamStore, cfg: PlannerConfig,
                   rng: np.random.Generator,
                   t_wp: int | None = None) -> np.ndarray:
    """Imagined total damage of one full attack window per anchor row.

    ``histories`` is a list of R PlannerWindows holding the (state, action)
    tokens strictly before each anchor (may be empty); ``anchor_states``
    (R, s) and ``anchor_obs`` (R, n*o) are the anchor step's real quantities;
    ``hiddens`` (R, n, hidden) and ``last_onehots`` (R, n, A) are the
    recurrent states and executed-action conditioning from just before the
    anchor. The rollout picks greedy joint actions, attacks them (initial
    agent at the anchor, the fixed follow-up group afterwards), accumulates
    the per-step joint-value drop, and advances the dynamics model under the
    attacked actions. Returns the R damage sums.
    """
    t_wp = attack_cfg.t_wp if t_wp is None else t_wp
    r = len(histories)
    if r == 0:
        raise ValueError("plan_delta_qwp needs at least one anchor")
    n = policy.agent_cfg.n_agents
    acfg = policy.agent_cfg
    work = [w.copy() for w in histories]
    hidden = np.asarray(hiddens, dtype=np.float64).reshape(r * n, -1).copy()
    last_rows = np.asarray(last_onehots, dtype=np.float64).reshape(
        r * n, acfg.n_actions)

    states_now = np.asarray(anchor_states, dtype=np.float64)
    obs_now = np.asarray(anchor_obs, dtype=np.float64)
    totals = np.zeros(r)
    followups = [()] * r
    binder = Binder(planner_store, None)
    idx = np.arange(n)

    for step in range(t_wp + 1):
        obs_rows = obs_now.reshape(r * n, acfg.obs_dim)
        q_rows, hidden = _greedy_step(policy, obs_rows, last_rows, hidden)
        q = q_rows.reshape(r, n, acfg.n_actions)
        original = np.argmax(q, axis=-1)

        attacked = original.copy()
        for row in range(r):
            if step == 0:
                i = atk.init_agent(attack_cfg.init_mode, rng, q[row],
                                   states_now[row], original[row],
                                   policy.mixer_fn)
                attacked[row] = _attack_targets(q[row], states_now[row],
                                                original[row], (i,), policy)
                followups[row] = _pick_followups(
                    attack_cfg, policy, rng, q[row], states_now[row],
                    original[row], attacked[row],
                    obs_now[row].reshape(n, acfg.obs_dim), i)
            else:
                attacked[row] = _attack_targets(q[row], states_now[row],
                                                original[row], followups[row],
                                                policy)
            totals[row] += (policy.mixer_fn(q[row][idx, original[row]],
                                            states_now[row])
                            - policy.mixer_fn(q[row][idx, attacked[row]],
                                              states_now[row]))

        last_rows = one_hot(attacked.reshape(r * n), acfg.n_actions)
        if step == t_wp:
            break
        for row in range(r):
            work[row].append(states_now[row], obs_now[row], attacked[row])
        ws, wa, wm = zip(*(w.arrays() for w in work))
        s_pred, o_pred = planning_forward(None, binder, cfg, np.stack(ws),
                                          np.stack(wa), np.stack(wm))
        states_now = s_pred.data
        obs_now = o_pred.data
    return totals


def oracle_delta_qwp(world, hidden, last_onehot, policy: RolloutPolicy,
                     attack_cfg: AttackConfig, rng: np.random.Generator,
                     t_wp: int | None = None) -> float:
    """Ground-truth damage of one attack window, stepping a cloned world.

    The live world is untouched; the clone's own random streams travel with
    it, so the rollout is reproducible.
    """
    t_wp = attack_cfg.t_wp if t_wp is None else t_wp
    n = policy.agent_cfg.n_agents
    acfg = policy.agent_cfg
    sim = world.clone()
    hidden = np.asarray(hidden, dtype=np.float64).reshape(n, -1).copy()
    last_rows = np.asarray(last_onehot, dtype=np.float64).reshape(
        n, acfg.n_actions)
    total = 0.0
    followups: tuple[int, ...] = ()
    idx = np.arange(n)
    for step in range(t_wp + 1):
        obs = sim.observations()
        state = sim.state_vector()
        q, hidden = _greedy_step(policy, obs.reshape(n, acfg.obs_dim),
                                 last_rows, hidden)
        original = np.argmax(q, axis=-1)
        if step == 0:
            i = atk.init_agent(attack_cfg.init_mode, rng, q, state, original,
                               policy.mixer_fn)
            attacked = _attack_targets(q, state, original, (i,), policy)
            followups = _pick_followups(attack_cfg, policy, rng, q, state,
                                        original, attacked, obs, i)
        else:
            attacked = _attack_targets(q, state, original, followups, policy)
        total += (policy.mixer_fn(q[idx, original], state)
                  - policy.mixer_fn(q[idx, attacked], state))
        last_rows = one_hot(attacked, acfg.n_actions)
        if step == t_wp:
            break
        _, done = sim.step(attacked)
        if done:
            break
    return float(total)
