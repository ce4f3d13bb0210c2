"""Recurrent per-agent Q-networks, value-decomposition mixers, and TD training.

Agents share one network (FC -> ReLU -> GRU -> FC head) conditioned on the
local observation, the previous executed action one-hot, and an agent-id
one-hot. The additive mixer sums per-agent values; the monotonic mixer
passes them through a two-layer mixing net whose weights are absolute-valued
hypernetwork outputs of the global state, which keeps dQtot/dQi >= 0 and the
joint argmax consistent with the per-agent argmaxes.

Training replays whole episodes with zero-initialized hiddens. The target
value is r + gamma * Qtot_target(s', a*) with a* the per-agent online argmax
(double-Q, default) or the target network's own maximizer; episode ends
bootstrap to zero. Target parameters track the online ones by EMA.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tape, Tensor
from .nn import Binder, ParamStore


@dataclass(frozen=True)
class AgentNetConfig:
    obs_dim: int
    n_agents: int
    n_actions: int = 5
    hidden: int = 64
    last_action: bool = True
    agent_id: bool = True
    q_bound: float = 1e6

    @property
    def input_dim(self) -> int:
        width = self.obs_dim
        if self.last_action:
            width += self.n_actions
        if self.agent_id:
            width += self.n_agents
        return width


@dataclass(frozen=True)
class MixerConfig:
    kind: str
    state_dim: int
    n_agents: int
    embed: int = 32
    hypernet_embed: int = 64

    def __post_init__(self):
        if self.kind not in ("vdn", "qmix"):
            raise ValueError(f"unknown mixer kind {self.kind!r}")


def build_agent_params(store: ParamStore, cfg: AgentNetConfig, rng,
                       prefix: str = "agent") -> None:
    nn.add_dense_params(store, rng, f"{prefix}.fc_in", cfg.input_dim, cfg.hidden)
    nn.add_gru_params(store, rng, f"{prefix}.gru", cfg.hidden, cfg.hidden)
    nn.add_dense_params(store, rng, f"{prefix}.head", cfg.hidden, cfg.n_actions)


def build_mixer_params(store: ParamStore, cfg: MixerConfig, rng,
                       prefix: str = "mixer") -> None:
    if cfg.kind == "vdn":
        return
    s, e, he, n = cfg.state_dim, cfg.embed, cfg.hypernet_embed, cfg.n_agents
    nn.add_dense_params(store, rng, f"{prefix}.w1_hyper.0", s, he)
    nn.add_dense_params(store, rng, f"{prefix}.w1_hyper.1", he, n * e)
    nn.add_dense_params(store, rng, f"{prefix}.b1_hyper", s, e)
    nn.add_dense_params(store, rng, f"{prefix}.w2_hyper.0", s, he)
    nn.add_dense_params(store, rng, f"{prefix}.w2_hyper.1", he, e)
    nn.add_dense_params(store, rng, f"{prefix}.v.0", s, e)
    nn.add_dense_params(store, rng, f"{prefix}.v.1", e, 1)


def agent_q(tape, binder: Binder, cfg: AgentNetConfig, obs, last_action_onehot,
            agent_onehot, hidden: Tensor, prefix: str = "agent"):
    """One step of the shared agent net; returns (q, next hidden).

    Row-batched: all array arguments share leading shape (rows,).
    """
    parts = [obs if isinstance(obs, Tensor) else Tensor(obs)]
    if cfg.last_action:
        parts.append(last_action_onehot if isinstance(last_action_onehot, Tensor)
                     else Tensor(last_action_onehot))
    if cfg.agent_id:
        parts.append(agent_onehot if isinstance(agent_onehot, Tensor)
                     else Tensor(agent_onehot))
    x = parts[0] if len(parts) == 1 else ad.concat_last(tape, parts)
    if x.data.shape[-1] != cfg.input_dim:
        raise ValueError(
            f"agent input width {x.data.shape[-1]} != expected {cfg.input_dim}"
        )
    h1 = nn.dense(tape, x, binder.get(f"{prefix}.fc_in.w"),
                  binder.get(f"{prefix}.fc_in.b"), activation="relu")
    h2 = nn.gru_step(tape, h1, hidden, binder, f"{prefix}.gru")
    q = nn.dense(tape, h2, binder.get(f"{prefix}.head.w"),
                 binder.get(f"{prefix}.head.b"))
    peak = float(np.abs(q.data).max()) if q.data.size else 0.0
    if not np.isfinite(peak) or peak > cfg.q_bound:
        raise FloatingPointError(
            f"action values out of sanity bounds (|q| up to {peak:.3g})")
    return q, h2


def mix_vdn(q_taken):
    """Additive decomposition: plain-array fast path."""
    return np.asarray(q_taken, dtype=np.float64).sum(axis=-1)


def mixer_forward(tape, binder: Binder | None, cfg: MixerConfig, q_taken: Tensor,
                  state: Tensor, prefix: str = "mixer") -> Tensor:
    """Joint value from per-agent taken values; q_taken (B, n), state (B, s)."""
    if cfg.kind == "vdn":
        return ad.sum_last(tape, q_taken)
    b = q_taken.data.shape[0]
    w1 = ad.abs_(tape, nn.dense(tape, ad.relu(tape, ad.linear(
        tape, state, binder.get(f"{prefix}.w1_hyper.0.w"),
        binder.get(f"{prefix}.w1_hyper.0.b"))),
        binder.get(f"{prefix}.w1_hyper.1.w"), binder.get(f"{prefix}.w1_hyper.1.b")))
    w1 = ad.reshape(tape, w1, (b, cfg.n_agents, cfg.embed))
    b1 = ad.linear(tape, state, binder.get(f"{prefix}.b1_hyper.w"),
                   binder.get(f"{prefix}.b1_hyper.b"))
    qrow = ad.reshape(tape, q_taken, (b, 1, cfg.n_agents))
    hidden = ad.elu(tape, ad.add(tape, ad.bmm(tape, qrow, w1),
                                 ad.reshape(tape, b1, (b, 1, cfg.embed))))
    w2 = ad.abs_(tape, nn.dense(tape, ad.relu(tape, ad.linear(
        tape, state, binder.get(f"{prefix}.w2_hyper.0.w"),
        binder.get(f"{prefix}.w2_hyper.0.b"))),
        binder.get(f"{prefix}.w2_hyper.1.w"), binder.get(f"{prefix}.w2_hyper.1.b")))
    w2 = ad.reshape(tape, w2, (b, cfg.embed, 1))
    v = nn.dense(tape, ad.relu(tape, ad.linear(
        tape, state, binder.get(f"{prefix}.v.0.w"), binder.get(f"{prefix}.v.0.b"))),
        binder.get(f"{prefix}.v.1.w"), binder.get(f"{prefix}.v.1.b"))
    y = ad.add(tape, ad.reshape(tape, ad.bmm(tape, hidden, w2), (b, 1)), v)
    return ad.reshape(tape, y, (b,))


def make_mixer_fn(store: ParamStore, cfg: MixerConfig, prefix: str = "mixer"):
    """Plain callable Qtot(q_taken, state) -> floats, no gradients."""
    def fn(q_taken, state):
        q = np.atleast_2d(np.asarray(q_taken, dtype=np.float64))
        if cfg.kind == "vdn":
            out = q.sum(axis=-1)
        else:
            s = np.asarray(state, dtype=np.float64)
            s = np.broadcast_to(s, (q.shape[0], cfg.state_dim)) if s.ndim == 1 else s
            binder = Binder(store, None)
            out = mixer_forward(None, binder, cfg, Tensor(q), Tensor(s.copy()),
                                prefix).data
        return out[0] if np.ndim(q_taken) == 1 else out
    return fn


def make_mixer_grad_fn(store: ParamStore, cfg: MixerConfig, prefix: str = "mixer"):
    """Callable returning dQtot/dq_taken, row-wise; same shapes as inputs."""
    def fn(q_taken, state):
        q = np.atleast_2d(np.asarray(q_taken, dtype=np.float64))
        if cfg.kind == "vdn":
            grad = np.ones_like(q)
        else:
            s = np.asarray(state, dtype=np.float64)
            s = np.broadcast_to(s, (q.shape[0], cfg.state_dim)) if s.ndim == 1 else s
            tape = Tape()
            leaf = Tensor(q.copy())
            binder = Binder(store, tape)
            out = mixer_forward(tape, binder, cfg, leaf, Tensor(s.copy()), prefix)
            tape.backward(ad.sum_all(tape, out))
            grad = leaf.grad
        return grad[0] if np.ndim(q_taken) == 1 else grad
    return fn


def select_action(q, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over one action-value vector; greedy ties go low."""
    q = np.asarray(q)
    if q.size == 0:
        raise ValueError("empty action-value vector")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def epsilon_schedule(step: int, start: float = 1.0, end: float = 0.05,
                     anneal_time: int = 50000) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    if step >= anneal_time:
        return end
    return start + (end - start) * (step / anneal_time)


def ema_update(target: ParamStore, online: ParamStore, rate: float) -> None:
    """target <- (1-rate)*target + rate*online, elementwise."""
    t_names, o_names = target.names(), online.names()
    if t_names != o_names:
        raise ValueError("target/online parameter names differ")
    for name in t_names:
        t = target.value(name)
        o = online.value(name)
        if t.shape != o.shape:
            raise ValueError(f"shape mismatch for {name}")
        t *= 1.0 - rate
        t += rate * o


def one_hot(indices, width: int) -> np.ndarray:
    return np.eye(width)[np.asarray(indices, dtype=np.int64)]


def policy_q(store: ParamStore, cfg: AgentNetConfig, obs, last_action_onehot,
             hidden: np.ndarray, prefix: str = "agent"):
    """Gradient-free per-agent Q for acting; rows are agents.

    Returns (q (n, n_actions), next hidden (n, hidden)).
    """
    binder = Binder(store, None)
    ids = np.eye(cfg.n_agents)
    q, h = agent_q(None, binder, cfg, np.asarray(obs, dtype=np.float64),
                   last_action_onehot, ids, Tensor(hidden), prefix)
    return q.data, h.data


def _unroll(tape, store: ParamStore, cfg: AgentNetConfig, obs, exec_onehot):
    """Roll the shared agent net over a whole batch of episodes.

    obs: (B, T+1, n, o); exec_onehot: (B, T, n, A). Returns the binder and
    the list of per-step q tensors for t = 0..T-1, each shaped (B*n, A).
    """
    b, t1, n, o = obs.shape
    t_len = t1 - 1
    rows = b * n
    binder = Binder(store, tape)
    ids = np.tile(np.eye(n), (b, 1))
    hidden = Tensor(np.zeros((rows, cfg.hidden)))
    qs = []
    zero_last = np.zeros((rows, cfg.n_actions))
    for t in range(t_len):
        obs_t = obs[:, t].reshape(rows, o)
        last_t = zero_last if t == 0 else exec_onehot[:, t - 1].reshape(
            rows, cfg.n_actions)
        q, hidden = agent_q(tape, binder, cfg, obs_t, last_t, ids, hidden)
        qs.append(q)
    return binder, qs


def td_loss(batch: dict, online: ParamStore, target: ParamStore,
            agent_cfg: AgentNetConfig, mixer_cfg: MixerConfig,
            gamma: float = 0.99, double_q: bool = True):
    """TD loss over a batch of full episodes; grads land in ``online``.

    Returns (loss value, tape). The executed (possibly attacked) actions are
    the taken actions both for the prediction and for the recurrent
    conditioning; episode ends contribute a pure-reward target.
    """
    obs = batch["obs"]
    states = batch["states"]
    executed = batch["executed"]
    rewards = batch["rewards"]
    b, t1, n, _ = obs.shape
    t_len = t1 - 1
    if t_len < 1 or b < 1:
        raise ValueError("td_loss needs a non-empty batch of episodes")
    rows = b * n

    exec_onehot = one_hot(executed, agent_cfg.n_actions)
    tape = Tape()
    binder, qs = _unroll(tape, online, agent_cfg, obs, exec_onehot)
    _, qs_target = _unroll(None, target, agent_cfg, obs, exec_onehot)

    q_stack = ad.stack_first(tape, qs)
    exec_idx = np.ascontiguousarray(executed.transpose(1, 0, 2)).reshape(t_len, rows)
    q_taken = ad.gather_last(tape, q_stack, exec_idx)
    q_taken = ad.reshape(tape, q_taken, (t_len * b, n))
    states_flat = np.ascontiguousarray(
        states[:, :t_len].transpose(1, 0, 2)).reshape(t_len * b, -1)
    qtot = mixer_forward(tape, binder, mixer_cfg, q_taken, Tensor(states_flat))

    # Bootstrapped targets, computed without any taping.
    y = np.ascontiguousarray(rewards.T).copy()
    if t_len > 1:
        online_next = np.stack([qs[t].data for t in range(1, t_len)])
        target_next = np.stack([qt.data for qt in qs_target[1:t_len]])
        a_star = np.argmax(online_next if double_q else target_next, axis=-1)
        q_next = np.take_along_axis(target_next, a_star[..., None], axis=-1)[..., 0]
        q_next = q_next.reshape((t_len - 1) * b, n)
        s_next = np.ascontiguousarray(
            states[:, 1:t_len].transpose(1, 0, 2)).reshape((t_len - 1) * b, -1)
        target_binder = Binder(target, None)
        tot_next = mixer_forward(None, target_binder, mixer_cfg, Tensor(q_next),
                                 Tensor(s_next)).data
        y[:t_len - 1] += gamma * tot_next.reshape(t_len - 1, b)

    loss = ad.mse(tape, qtot, Tensor(y.reshape(t_len * b)))
    tape.backward(loss)
    binder.flush_grads()
    return float(loss.data), tape
