"""End-to-end runs: pretraining, adversarial training, evaluation, sweeps.

A run is fully determined by (config, seed). The run seed spawns six
independent generator streams (environment init, exploration, attacker,
sequence-model sampling, buffer sampling, parameter init); prey randomness
lives inside each episode's world, keyed from the episode seed. Toggling the
attacker therefore never perturbs the environment or exploration draws,
which keeps evaluations paired across attackers.

Training phase 1 runs attack-free; phase 2 executes the coordinated
attacker in the loop (reading the current learner's own networks) and keeps
learning on the executed, possibly attacked, trajectories. Both phases fit
the dynamics model and the damage forecaster each episode, so every
checkpoint carries a usable attack-step selector.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import os
from collections import deque

import numpy as np

from . import attack as atk
from . import planner as plan
from .attack import AttackConfig, AttackSchedule, RandomAttacker
from .buffer import EpisodeRecord, ReplayBuffer, collate
from .checkpoint import check_compatible, load_checkpoint, save_checkpoint
from .config import RunConfig
from .env import PPWorld, ScenarioSpec
from .learner import (AgentNetConfig, MixerConfig, build_agent_params,
                      build_mixer_params, ema_update, epsilon_schedule,
                      make_mixer_fn, make_mixer_grad_fn, one_hot, policy_q,
                      select_action, td_loss)
from .metrics import MetricsWriter
from .nn import ParamStore
from .optim import RmsProp, clip_global_norm
from .planner import (PlannerConfig, PlannerWindow, RolloutPolicy,
                      attack_probability, build_planning_params,
                      build_qdiff_params, left_pad_states, plan_delta_qwp,
                      planning_loss, qdiff_loss, qdiff_predict,
                      random_step_select, sample_init)


class TrainingError(RuntimeError):
    pass


def _spawn_rngs(seed: int) -> dict[str, np.random.Generator]:
    names = ("env", "explore", "attacker", "planner", "buffer", "params")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(seq) for name, seq in zip(names, seqs)}


def build_stores(config: RunConfig, params_rng) -> dict[str, ParamStore]:
    policy = ParamStore()
    build_agent_params(policy, config.agent_config(), params_rng)
    build_mixer_params(policy, config.mixer_config(), params_rng)
    planner_store = ParamStore()
    build_planning_params(planner_store, config.planner_config(), params_rng)
    qdiff_store = ParamStore()
    build_qdiff_params(qdiff_store, config.planner_config(), params_rng)
    return {"policy": policy, "planner": planner_store, "qdiff": qdiff_store}


def _checkpoint_meta(config: RunConfig, env_steps: int, method: str) -> dict:
    return {
        "scenario": dataclasses.asdict(config.scenario),
        "mixer": {"kind": config.mixer_kind, "embed": config.mixer_embed,
                  "hypernet_embed": config.hypernet_embed},
        "attack": dataclasses.asdict(config.attack),
        "planner": {"window": config.planner.window,
                    "horizon": config.planner.horizon,
                    "temperature": config.planner.temperature,
                    "embed": config.planner.embed,
                    "ff_mult": config.planner.ff_mult},
        "env_steps": env_steps,
        "method": method,
    }


class Trainer:
    """One (config, seed) training run."""

    def __init__(self, config: RunConfig, seed: int, out_dir,
                 run_id: str | None = None, method: str | None = None,
                 init_checkpoint=None, cell: str | None = None):
        self.config = config
        self.seed = seed
        self.out_dir = str(out_dir)
        os.makedirs(self.out_dir, exist_ok=True)
        default_method = config.mixer_kind + (
            "-wall" if config.attack.k_wp > 0 else "-vanilla")
        self.method = method or default_method
        self.run_id = run_id or f"{self.method}-seed{seed}"
        self.rngs = _spawn_rngs(seed)

        self.agent_cfg = config.agent_config()
        self.mixer_cfg = config.mixer_config()
        self.planner_cfg = config.planner_config()

        stores = build_stores(config, self.rngs["params"])
        self.step_offset = 0
        if init_checkpoint is not None:
            loaded, meta = load_checkpoint(init_checkpoint)
            check_compatible(loaded, stores)
            stores = loaded
            self.step_offset = int(meta.get("env_steps", 0))
        self.policy_store = stores["policy"]
        self.planner_store = stores["planner"]
        self.qdiff_store = stores["qdiff"]
        self.target_store = self.policy_store.copy()

        tr = config.train
        self.opt_policy = RmsProp(self.policy_store, lr=tr.lr,
                                  alpha=tr.optimizer_alpha, eps=tr.optimizer_eps)
        self.opt_planner = RmsProp(self.planner_store, lr=config.planner.lr,
                                   alpha=tr.optimizer_alpha, eps=tr.optimizer_eps)
        self.opt_qdiff = RmsProp(self.qdiff_store, lr=config.planner.lr,
                                 alpha=tr.optimizer_alpha, eps=tr.optimizer_eps)

        self.mixer_fn = make_mixer_fn(self.policy_store, self.mixer_cfg)
        self.mixer_grad_fn = make_mixer_grad_fn(self.policy_store, self.mixer_cfg)
        self.target_mixer_fn = make_mixer_fn(self.target_store, self.mixer_cfg)

        self.buffer = ReplayBuffer(tr.buffer_episodes)
        self.qdiff_dataset: deque = deque(maxlen=1024)
        self.env_steps = 0
        self.episodes = 0
        self.updates = 0
        self.return_window: deque = deque(maxlen=100)
        self.metrics = MetricsWriter(os.path.join(self.out_dir, "metrics.jsonl"),
                                     self.run_id, seed, self.method, cell=cell)

    # ----- acting -------------------------------------------------------

    def _phase(self) -> str:
        return ("pretrain" if self.env_steps < self.config.train.pretrain_steps
                else "adversarial")

    def rollout_policy(self) -> RolloutPolicy:
        return RolloutPolicy(store=self.policy_store, agent_cfg=self.agent_cfg,
                             mixer_fn=self.mixer_fn,
                             mixer_grad_fn=self.mixer_grad_fn)

    def run_episode(self, attacking: bool, trace: bool = False) -> EpisodeRecord:
        spec = self.config.scenario
        acfg = self.agent_cfg
        n, n_actions = spec.n_predators, spec.n_actions
        attack_cfg = self.config.attack
        env_seed = int(self.rngs["env"].integers(2 ** 62))
        world = PPWorld(spec, seed=env_seed)

        schedule = AttackSchedule.fresh(attack_cfg) if attacking else None
        random_starts = None
        if attacking and attack_cfg.step_mode == "random":
            random_starts = set(random_step_select(
                self.rngs["attacker"], attack_cfg.k_wp, spec.episode_limit,
                attack_cfg.t_wp))

        hidden = np.zeros((n, acfg.hidden))
        last_onehot = np.zeros((n, n_actions))
        state_tail: deque = deque(maxlen=self.planner_cfg.window)
        states = np.empty((spec.episode_limit + 1, spec.state_dim))
        obs_all = np.empty((spec.episode_limit + 1, n, spec.obs_dim))
        executed = np.empty((spec.episode_limit, n), dtype=np.int64)
        original = np.empty((spec.episode_limit, n), dtype=np.int64)
        attacked_flags = np.zeros((spec.episode_limit, n), dtype=bool)
        rewards = np.empty(spec.episode_limit)
        oracle_snaps = [] if self.config.planner.oracle_labels else None

        for t in range(spec.episode_limit):
            obs = world.observations()
            svec = world.state_vector()
            states[t] = svec
            obs_all[t] = obs
            if oracle_snaps is not None:
                oracle_snaps.append((world.clone(), hidden.copy(),
                                     last_onehot.copy()))

            q, hidden_next = policy_q(self.policy_store, acfg, obs,
                                      last_onehot, hidden)
            eps = epsilon_schedule(self.step_offset + self.env_steps,
                                   self.config.train.epsilon_start,
                                   self.config.train.epsilon_end,
                                   self.config.train.epsilon_anneal)
            acts = np.array([select_action(q[i], eps, self.rngs["explore"])
                             for i in range(n)], dtype=np.int64)

            if attacking:
                exec_acts = self._attack_step(
                    t, svec, acts, q, obs, schedule, random_starts,
                    state_tail, trace)
            else:
                exec_acts = acts

            reward, _ = world.step(exec_acts)
            original[t] = acts
            executed[t] = exec_acts
            attacked_flags[t] = exec_acts != acts
            rewards[t] = reward
            last_onehot = one_hot(exec_acts, n_actions)
            hidden = hidden_next
            self.env_steps += 1

        states[-1] = world.state_vector()
        obs_all[-1] = world.observations()
        if schedule is not None and attack_cfg.budget_mode == "scheduled":
            # Scheduled mode spends budget on targeted steps even when the
            # minimizing action coincides with the original (null deviation).
            for entry in schedule.attacked_log:
                attacked_flags[entry["step"], entry["targets"]] = True
        record = EpisodeRecord(states=states, obs=obs_all, executed=executed,
                               original=original, attacked=attacked_flags,
                               rewards=rewards,
                               attack_log=schedule.attacked_log if schedule else [])
        if oracle_snaps is not None:
            record.oracle_snaps = oracle_snaps
        self.episodes += 1
        return record

    def _attack_step(self, t, svec, acts, q, obs, schedule, random_starts,
                     state_tail, trace) -> np.ndarray:
        """Firing decision plus attacker action for one environment step."""
        spec = self.config.scenario
        attack_cfg = self.config.attack
        if attack_cfg.step_mode == "planner":
            state_tail.append(svec)
            ws, wm = left_pad_states(self.planner_cfg, np.stack(state_tail))
            forecast = qdiff_predict(self.qdiff_store, self.planner_cfg, ws, wm)
            p = attack_probability(forecast, self.planner_cfg.temperature)
            fire = False
            if schedule.window is None:
                eligible = atk.window_fits(t, attack_cfg, spec.episode_limit)
                fire = ((eligible and sample_init(p, self.rngs["planner"],
                                                  schedule))
                        or atk.must_fire(t, schedule, attack_cfg,
                                         spec.episode_limit))
            if trace:
                self.metrics.write("stepprob", phase=self._phase(),
                                   episode=self.episodes, step=t,
                                   env_step=self.env_steps,
                                   forecast=[float(x) for x in forecast],
                                   p_attack=p, fired=bool(fire))
        else:
            fire = t in random_starts
        return atk.wolfpack_act(t, svec, acts, q, obs, schedule, attack_cfg,
                                fire, self.rngs["attacker"], self.mixer_fn,
                                self.mixer_grad_fn)

    # ----- learning -----------------------------------------------------

    def update(self, episode: EpisodeRecord) -> dict:
        losses = {"td": None, "planning": None, "qdiff": None}
        tr = self.config.train
        if len(self.buffer) >= tr.batch_episodes:
            batch = collate(self.buffer.sample(self.rngs["buffer"],
                                               tr.batch_episodes))
            self.policy_store.zero_grads()
            loss, _ = td_loss(batch, self.policy_store, self.target_store,
                              self.agent_cfg, self.mixer_cfg,
                              gamma=tr.gamma, double_q=tr.double_q)
            self._check_loss(loss, "td")
            clip_global_norm(self.policy_store, tr.grad_clip)
            self.opt_policy.step(self.policy_store)
            self.updates += 1
            if tr.target_update == "ema":
                ema_update(self.target_store, self.policy_store, tr.ema_rate)
            elif self.updates % tr.hard_update_interval == 0:
                ema_update(self.target_store, self.policy_store, 1.0)
            losses["td"] = loss

        pbatch = self._planning_batch()
        if pbatch is not None:
            self.planner_store.zero_grads()
            loss, _ = planning_loss(self.planner_store, self.planner_cfg, pbatch)
            self._check_loss(loss, "planning")
            clip_global_norm(self.planner_store, tr.grad_clip)
            self.opt_planner.step(self.planner_store)
            losses["planning"] = loss

        self._label_qdiff(episode)
        qbatch = self._qdiff_batch()
        if qbatch is not None:
            self.qdiff_store.zero_grads()
            loss, _ = qdiff_loss(self.qdiff_store, self.planner_cfg, qbatch)
            self._check_loss(loss, "qdiff")
            clip_global_norm(self.qdiff_store, tr.grad_clip)
            self.opt_qdiff.step(self.qdiff_store)
            losses["qdiff"] = loss
        return losses

    def _check_loss(self, loss: float, name: str) -> None:
        if not np.isfinite(loss):
            dump = os.path.join(self.out_dir, "diagnostic_dump.json")
            with open(dump, "w", encoding="utf-8") as fh:
                json.dump({"loss": name, "value": str(loss),
                           "env_steps": self.env_steps,
                           "episodes": self.episodes}, fh)
            raise TrainingError(f"non-finite {name} loss at step "
                                f"{self.env_steps}; dump in {dump}")

    def _planning_batch(self) -> dict | None:
        """Teacher-forced one-step prediction windows sampled from replay."""
        if not len(self.buffer):
            return None
        pcfg = self.planner_cfg
        rng = self.rngs["planner"]
        b = self.config.planner.batch_windows
        episodes = self.buffer.episodes()
        idx = rng.integers(len(episodes), size=b)
        states = np.zeros((b, pcfg.window, pcfg.state_dim))
        actions = np.zeros((b, pcfg.window, pcfg.n_agents * pcfg.n_actions))
        mask = np.zeros((b, pcfg.window), dtype=bool)
        target_s = np.zeros((b, pcfg.state_dim))
        target_o = np.zeros((b, pcfg.obs_width))
        for row, e in enumerate(idx):
            ep = episodes[e]
            t = int(rng.integers(ep.length))
            lo = max(0, t - pcfg.window + 1)
            k = t - lo + 1
            states[row, pcfg.window - k:] = ep.states[lo:t + 1]
            acts = one_hot(ep.executed[lo:t + 1], pcfg.n_actions)
            actions[row, pcfg.window - k:] = acts.reshape(k, -1)
            mask[row, pcfg.window - k:] = True
            target_s[row] = ep.states[t + 1]
            target_o[row] = ep.obs[t + 1].reshape(-1)
        return {"states": states, "actions": actions, "mask": mask,
                "target_state": target_s, "target_obs": target_o}

    def _episode_hiddens(self, ep: EpisodeRecord) -> np.ndarray:
        """Recurrent states along a recorded episode; entry t is pre-step t."""
        acfg = self.agent_cfg
        n = acfg.n_agents
        hiddens = np.zeros((ep.length + 1, n, acfg.hidden))
        h = np.zeros((n, acfg.hidden))
        last = np.zeros((n, acfg.n_actions))
        for t in range(ep.length):
            hiddens[t] = h
            _, h = policy_q(self.policy_store, acfg, ep.obs[t], last, h)
            last = one_hot(ep.executed[t], acfg.n_actions)
        hiddens[ep.length] = h
        return hiddens

    def _label_qdiff(self, ep: EpisodeRecord) -> None:
        """Label forecast windows from one episode with imagined damages."""
        pcfg = self.planner_cfg
        attack_cfg = self.config.attack
        rng = self.rngs["planner"]
        t_len = ep.length
        last_valid = t_len - 1 - attack_cfg.t_wp
        if last_valid < 0:
            return
        hiddens = self._episode_hiddens(ep)
        n = self.agent_cfg.n_agents

        for _ in range(self.config.planner.label_anchors):
            tau = int(rng.integers(last_valid + 1))
            anchors = [tau + j for j in range(pcfg.horizon)
                       if tau + j <= last_valid]
            histories, a_states, a_obs, a_hidden, a_last = [], [], [], [], []
            for l in anchors:
                win = PlannerWindow(pcfg)
                for k in range(max(0, l - pcfg.window + 1), l):
                    win.append(ep.states[k], ep.obs[k].reshape(-1),
                               ep.executed[k])
                histories.append(win)
                a_states.append(ep.states[l])
                a_obs.append(ep.obs[l].reshape(-1))
                a_hidden.append(hiddens[l])
                a_last.append(one_hot(ep.executed[l - 1], pcfg.n_actions)
                              if l > 0 else np.zeros((n, pcfg.n_actions)))
            if not histories:
                continue
            if self.config.planner.oracle_labels and hasattr(ep, "oracle_snaps"):
                totals = np.array([plan.oracle_delta_qwp(
                    ep.oracle_snaps[l][0], ep.oracle_snaps[l][1],
                    ep.oracle_snaps[l][2], self.rollout_policy(), attack_cfg,
                    rng) for l in anchors])
            else:
                totals = plan_delta_qwp(histories, np.stack(a_states),
                                        np.stack(a_obs), np.stack(a_hidden),
                                        np.stack(a_last), self.rollout_policy(),
                                        attack_cfg, self.planner_store, pcfg,
                                        rng)
            targets = np.zeros(pcfg.horizon)
            tmask = np.zeros(pcfg.horizon)
            targets[:len(anchors)] = totals
            tmask[:len(anchors)] = 1.0
            win_states, win_mask = left_pad_states(
                pcfg, ep.states[max(0, tau - pcfg.window + 1):tau + 1])
            self.qdiff_dataset.append({"states": win_states, "mask": win_mask,
                                       "targets": targets, "tmask": tmask})

    def _qdiff_batch(self) -> dict | None:
        b = self.config.planner.batch_windows
        if len(self.qdiff_dataset) < b:
            return None
        rng = self.rngs["planner"]
        idx = rng.integers(len(self.qdiff_dataset), size=b)
        samples = [self.qdiff_dataset[i] for i in idx]
        return {"states": np.stack([s["states"] for s in samples]),
                "mask": np.stack([s["mask"] for s in samples]),
                "targets": np.stack([s["targets"] for s in samples]),
                "target_mask": np.stack([s["tmask"] for s in samples])}

    # ----- orchestration --------------------------------------------------

    def save(self, name: str) -> str:
        path = os.path.join(self.out_dir, name)
        save_checkpoint(path, {"policy": self.policy_store,
                               "planner": self.planner_store,
                               "qdiff": self.qdiff_store},
                        meta=_checkpoint_meta(self.config,
                                              self.step_offset + self.env_steps,
                                              self.method))
        return path

    def run(self) -> dict:
        tr = self.config.train
        next_checkpoint = tr.checkpoint_interval
        trace_every = 100
        while self.env_steps < tr.total_steps:
            phase = self._phase()
            attacking = phase == "adversarial" and self.config.attack.k_wp > 0
            trace = attacking and (self.episodes % trace_every == 0)
            episode = self.run_episode(attacking, trace=trace)
            self.buffer.add(episode)
            losses = self.update(episode)
            self.return_window.append(episode.episode_return)
            if self.episodes % tr.log_interval == 0:
                self.metrics.write(
                    "train_episode", phase=phase, episode=self.episodes,
                    env_step=self.env_steps, ep_return=episode.episode_return,
                    mean_return_100=float(np.mean(self.return_window)),
                    attacked_steps=episode.attacked_steps,
                    epsilon=epsilon_schedule(
                        self.step_offset + self.env_steps,
                        tr.epsilon_start, tr.epsilon_end, tr.epsilon_anneal),
                    td_loss=losses["td"], planning_loss=losses["planning"],
                    qdiff_loss=losses["qdiff"])
            for entry in episode.attack_log:
                self.metrics.write("attack", phase=phase,
                                   episode=self.episodes,
                                   env_step=self.env_steps, **entry)
            if self.env_steps >= next_checkpoint:
                self.save(f"step_{self.env_steps:09d}.wlf")
                next_checkpoint += tr.checkpoint_interval
        final = self.save("final.wlf")
        self.metrics.flush()
        self.metrics.close()
        return {"checkpoint": final,
                "metrics": os.path.join(self.out_dir, "metrics.jsonl")}


def train(config: RunConfig, seed: int, out_dir, run_id: str | None = None,
          method: str | None = None, init_checkpoint=None,
          cell: str | None = None) -> dict:
    trainer = Trainer(config, seed, out_dir, run_id=run_id, method=method,
                      init_checkpoint=init_checkpoint, cell=cell)
    return trainer.run()


class EvalError(RuntimeError):
    pass


def _rebuild_from_meta(meta: dict):
    spec = ScenarioSpec(**meta["scenario"])
    agent_cfg = AgentNetConfig(obs_dim=spec.obs_dim, n_agents=spec.n_predators,
                               n_actions=spec.n_actions)
    mixer_cfg = MixerConfig(kind=meta["mixer"]["kind"], state_dim=spec.state_dim,
                            n_agents=spec.n_predators,
                            embed=meta["mixer"]["embed"],
                            hypernet_embed=meta["mixer"]["hypernet_embed"])
    attack_cfg = AttackConfig(**meta["attack"])
    planner_cfg = PlannerConfig(state_dim=spec.state_dim,
                                n_agents=spec.n_predators,
                                n_actions=spec.n_actions, **meta["planner"])
    return spec, agent_cfg, mixer_cfg, attack_cfg, planner_cfg


def _template_stores(spec, agent_cfg, mixer_cfg, planner_cfg):
    rng = np.random.default_rng(0)
    policy = ParamStore()
    build_agent_params(policy, agent_cfg, rng)
    build_mixer_params(policy, mixer_cfg, rng)
    planner_store = ParamStore()
    build_planning_params(planner_store, planner_cfg, rng)
    qdiff_store = ParamStore()
    build_qdiff_params(qdiff_store, planner_cfg, rng)
    return {"policy": policy, "planner": planner_store, "qdiff": qdiff_store}


def evaluate(checkpoint_path, attacker: str, episodes: int, k: int, seed: int,
             out_dir=None, epsilon: float = 0.0,
             attack_overrides: dict | None = None,
             trace_stepprobs: bool = False, cell: str | None = None,
             attacker_checkpoint=None) -> dict:
    """Greedy-policy rollouts under one attacker with a unified budget K.

    Environment streams are keyed only by (seed, episode index), so runs
    with different attackers see identical worlds and prey; the attacker
    draws from its own stream. The attacker's selectors and forecaster run
    off the checkpoint under evaluation unless ``attacker_checkpoint`` names
    a foreign one, in which case that checkpoint's networks drive every
    attack decision while the evaluated policy acts.
    """
    if attacker not in ("natural", "random", "wolfpack"):
        raise EvalError(f"unknown attacker {attacker!r}")
    stores, meta = load_checkpoint(checkpoint_path)
    spec, agent_cfg, mixer_cfg, attack_cfg, planner_cfg = _rebuild_from_meta(meta)
    check_compatible(stores, _template_stores(spec, agent_cfg, mixer_cfg,
                                              planner_cfg))
    attack_stores = stores
    if attacker_checkpoint is not None:
        attack_stores, attack_meta = load_checkpoint(attacker_checkpoint)
        a_spec, a_agent, a_mixer, attack_cfg, planner_cfg = _rebuild_from_meta(
            attack_meta)
        if a_spec.state_dim != spec.state_dim or a_spec.obs_dim != spec.obs_dim:
            raise EvalError("attacker checkpoint scenario does not match")
        check_compatible(attack_stores,
                         _template_stores(a_spec, a_agent, a_mixer, planner_cfg))
        mixer_cfg_att = a_mixer
    else:
        mixer_cfg_att = mixer_cfg
    overrides = dict(attack_overrides or {})
    if attacker == "wolfpack":
        width = int(overrides.get("t_wp", attack_cfg.t_wp)) + 1
        if k % width != 0:
            raise EvalError(f"budget k={k} is not a whole number of "
                            f"{width}-step windows")
        overrides["k_wp"] = k // width
        attack_cfg = dataclasses.replace(attack_cfg, **overrides)
        attack_cfg.validate(spec.n_predators)
    policy_store = stores["policy"]
    attack_policy_store = attack_stores["policy"]
    qdiff_store = attack_stores["qdiff"]
    mixer_fn = make_mixer_fn(attack_policy_store, mixer_cfg_att)
    mixer_grad_fn = make_mixer_grad_fn(attack_policy_store, mixer_cfg_att)

    writer = None
    if out_dir is not None:
        os.makedirs(str(out_dir), exist_ok=True)
        writer = MetricsWriter(
            os.path.join(str(out_dir), f"eval_{attacker}_seed{seed}.jsonl"),
            run_id=f"eval-{attacker}-seed{seed}", seed=seed,
            method=meta.get("method", "unknown"), cell=cell)

    returns = np.empty(episodes)
    attacked_counts = np.empty(episodes, dtype=np.int64)
    for e in range(episodes):
        env_rng = np.random.SeedSequence([seed, e, 0])
        env_seed = int(np.random.default_rng(env_rng).integers(2 ** 62))
        attacker_rng = np.random.default_rng(np.random.SeedSequence([seed, e, 1]))
        explore_rng = np.random.default_rng(np.random.SeedSequence([seed, e, 2]))
        planner_rng = np.random.default_rng(np.random.SeedSequence([seed, e, 3]))
        ep_return, n_attacked = _eval_episode(
            spec, agent_cfg, attack_cfg, planner_cfg, policy_store,
            attack_policy_store, qdiff_store, mixer_fn, mixer_grad_fn,
            attacker, k, env_seed, attacker_rng, explore_rng, planner_rng,
            epsilon, writer, e, trace_stepprobs)
        returns[e] = ep_return
        attacked_counts[e] = n_attacked
        if writer is not None:
            writer.write("eval_episode", attacker=attacker, episode=e,
                         ep_return=float(ep_return),
                         attacked_steps=int(n_attacked), k=k)

    summary = {
        "attacker": attacker,
        "episodes": episodes,
        "k": k,
        "seed": seed,
        "mean_return": float(returns.mean()),
        "std_return": float(returns.std()),
        "mean_return_last_100": float(returns[-100:].mean()),
        "mean_attacked_steps": float(attacked_counts.mean()),
        "max_attacked_steps": int(attacked_counts.max()),
        "method": meta.get("method", "unknown"),
    }
    if attacked_counts.max() > k:
        raise EvalError("budget audit failed: attacked steps exceeded K")
    if writer is not None:
        writer.write("eval_summary", **summary)
        writer.close()
    return summary


def _eval_episode(spec, agent_cfg, attack_cfg, planner_cfg, policy_store,
                  attack_policy_store, qdiff_store, mixer_fn, mixer_grad_fn,
                  attacker, k, env_seed, attacker_rng, explore_rng,
                  planner_rng, epsilon, writer, episode_idx, trace):
    n, n_actions = spec.n_predators, spec.n_actions
    world = PPWorld(spec, seed=env_seed)
    hidden = np.zeros((n, agent_cfg.hidden))
    last_onehot = np.zeros((n, n_actions))
    foreign = attack_policy_store is not policy_store
    attacker_hidden = np.zeros((n, agent_cfg.hidden)) if foreign else None
    schedule = None
    random_attacker = None
    random_starts = None
    state_tail: deque = deque(maxlen=planner_cfg.window)

    if attacker == "wolfpack" and attack_cfg.k_wp > 0:
        schedule = AttackSchedule.fresh(attack_cfg)
        if attack_cfg.step_mode == "random":
            random_starts = set(random_step_select(
                attacker_rng, attack_cfg.k_wp, spec.episode_limit,
                attack_cfg.t_wp))
    elif attacker == "random":
        random_attacker = RandomAttacker(spec.episode_limit, k, attacker_rng,
                                         n, n_actions)

    ep_return = 0.0
    for t in range(spec.episode_limit):
        obs = world.observations()
        svec = world.state_vector()
        q, hidden_next = policy_q(policy_store, agent_cfg, obs, last_onehot,
                                  hidden)
        if epsilon > 0.0:
            acts = np.array([select_action(q[i], epsilon, explore_rng)
                             for i in range(n)], dtype=np.int64)
        else:
            acts = np.argmax(q, axis=-1).astype(np.int64)

        exec_acts = acts
        q_attack = q
        if foreign:
            q_attack, attacker_hidden = policy_q(
                attack_policy_store, agent_cfg, obs, last_onehot,
                attacker_hidden)
        if schedule is not None:
            if attack_cfg.step_mode == "planner":
                state_tail.append(svec)
                ws, wm = left_pad_states(planner_cfg, np.stack(state_tail))
                forecast = qdiff_predict(qdiff_store, planner_cfg, ws, wm)
                p = attack_probability(forecast, planner_cfg.temperature)
                fire = False
                if schedule.window is None:
                    eligible = atk.window_fits(t, attack_cfg, spec.episode_limit)
                    fire = ((eligible and sample_init(p, planner_rng, schedule))
                            or atk.must_fire(t, schedule, attack_cfg,
                                             spec.episode_limit))
                if trace and writer is not None:
                    writer.write("stepprob", episode=episode_idx, step=t,
                                 forecast=[float(x) for x in forecast],
                                 p_attack=p, fired=bool(fire))
            else:
                fire = t in random_starts
            exec_acts = atk.wolfpack_act(t, svec, acts, q_attack, obs,
                                         schedule, attack_cfg, fire,
                                         attacker_rng, mixer_fn, mixer_grad_fn)
        elif random_attacker is not None:
            exec_acts = random_attacker.act(t, acts)

        reward, _ = world.step(exec_acts)
        ep_return += reward
        last_onehot = one_hot(exec_acts, n_actions)
        hidden = hidden_next

    if schedule is not None and attack_cfg.budget_mode == "scheduled":
        attacked_steps = len(schedule.attacked_log)
    elif schedule is not None:
        attacked_steps = len({e["step"] for e in schedule.attacked_log})
    elif random_attacker is not None:
        attacked_steps = len(random_attacker.attacked_log)
    else:
        attacked_steps = 0
    if writer is not None and schedule is not None:
        for entry in schedule.attacked_log:
            writer.write("attack", episode=episode_idx, **entry)
    return ep_return, attacked_steps


def sweep(config: RunConfig, grid: dict, out_dir) -> dict:
    """Train and evaluate one run per grid cell per seed.

    Grid keys: m, T, k_wp, t_wp, init_mode, followup_mode, step_mode. Cells
    that cannot run on the scenario (m too large) are skipped with a reason.
    """
    known = {"m", "T", "k_wp", "t_wp", "init_mode", "followup_mode", "step_mode"}
    unknown = set(grid) - known
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")
    out_dir = str(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    keys = sorted(grid)
    cells = []
    results = {"cells": [], "skipped": []}
    for values in itertools.product(*(grid[k] for k in keys)):
        cells.append(dict(zip(keys, values)))
    for cell in cells:
        cell_id = ",".join(f"{k}={cell[k]}" for k in keys)
        attack_kwargs = {k: v for k, v in cell.items() if k != "T"}
        attack_cfg = dataclasses.replace(config.attack, **attack_kwargs)
        try:
            attack_cfg.validate(config.scenario.n_predators)
            if config.scenario.episode_limit < attack_cfg.total_budget:
                raise atk.AttackConfigError("episode too short for the budget")
        except atk.AttackConfigError as exc:
            results["skipped"].append({"cell": cell_id, "reason": str(exc)})
            continue
        planner_settings = config.planner
        if "T" in cell:
            planner_settings = dataclasses.replace(planner_settings,
                                                   temperature=cell["T"])
        cell_config = dataclasses.replace(config, attack=attack_cfg,
                                          planner=planner_settings)
        for seed in config.seeds:
            cell_dir = os.path.join(out_dir, cell_id.replace(",", "_"),
                                    f"seed{seed}")
            artifacts = train(cell_config, seed, cell_dir, cell=cell_id)
            evals = {}
            for attacker in cell_config.eval.attackers:
                evals[attacker] = evaluate(
                    artifacts["checkpoint"], attacker,
                    cell_config.eval.episodes, cell_config.eval.k, seed,
                    out_dir=cell_dir, epsilon=cell_config.eval.epsilon,
                    cell=cell_id)
            results["cells"].append({"cell": cell_id, "seed": seed,
                                     "artifacts": artifacts, "evals": evals})
    with open(os.path.join(out_dir, "sweep_summary.json"), "w",
              encoding="utf-8") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
    return results
