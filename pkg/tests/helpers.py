"""Shared test fixtures: additive mixer closures and the identity toy world."""

import numpy as np

from wolfpack.learner import one_hot
from wolfpack.optim import RmsProp
from wolfpack.planner import planning_loss


def vdn_fn(q_taken, state):
    q = np.atleast_2d(np.asarray(q_taken, dtype=np.float64))
    out = q.sum(axis=-1)
    return out[0] if np.ndim(q_taken) == 1 else out


def vdn_grad(q_taken, state):
    return np.ones_like(np.asarray(q_taken, dtype=np.float64))


class IdentityWorld:
    """Deterministic toy: the state never changes, reward is zero."""

    def __init__(self, state, n_agents, obs_dim):
        self._state = np.asarray(state, dtype=np.float64)
        self.n_agents = n_agents
        self.obs_dim = obs_dim

    def clone(self):
        return IdentityWorld(self._state.copy(), self.n_agents, self.obs_dim)

    def observations(self):
        return self._state.reshape(self.n_agents, self.obs_dim)

    def state_vector(self):
        return self._state

    def step(self, actions):
        return 0.0, False


def train_identity_planner(cfg, store, c_state, tol=1e-8):
    """Fit the dynamics model to a constant-state world, to high precision.

    Staged learning-rate decay pushes the one-step MSE orders of magnitude
    below the 1e-6 premise. Returns the final loss.
    """
    rng = np.random.default_rng(99)
    other = [n for n in store.names() if not n.startswith("planner.")]
    b = 32
    loss = np.inf
    for lr, iters in ((3e-3, 2000), (5e-4, 2000), (1e-4, 2000), (2e-5, 2000)):
        opt = RmsProp(store, lr=lr)
        for _ in range(iters):
            lengths = rng.integers(1, cfg.window + 1, size=b)
            states = np.zeros((b, cfg.window, cfg.state_dim))
            acts = np.zeros((b, cfg.window, cfg.n_agents * 5))
            mask = np.zeros((b, cfg.window), dtype=bool)
            for row, k in enumerate(lengths):
                states[row, cfg.window - k:] = c_state
                draw = rng.integers(5, size=(k, cfg.n_agents))
                acts[row, cfg.window - k:] = one_hot(draw, 5).reshape(k, -1)
                mask[row, cfg.window - k:] = True
            batch = {"states": states, "actions": acts, "mask": mask,
                     "target_state": np.tile(c_state, (b, 1)),
                     "target_obs": np.tile(c_state, (b, 1))}
            store.zero_grads()
            loss, _ = planning_loss(store, cfg, batch)
            for name in other:
                store.grad(name)[...] = 0.0
            opt.step(store)
            if loss < tol:
                return loss
    return loss
