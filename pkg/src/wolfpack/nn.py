"""Parameter storage and the network building blocks used across the package.

A :class:`ParamStore` owns named float64 arrays with paired gradient buffers;
it is the unit of checkpointing, EMA targeting and optimizer stepping. A
:class:`Binder` exposes store entries as tape leaves, caching one leaf per
name so weights shared across time steps accumulate gradients into a single
tensor, flushed back into the store after backward.

Blocks: ``dense`` (affine + activation), ``gru_step`` (standard gated
recurrent cell), and ``attention_block`` (masked single-head scaled
dot-product attention with a position-wise feed-forward, both residual).
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor


class ParamStore:
    """Named, shaped float64 parameter arrays with paired gradient buffers."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._values:
            raise ValueError(f"duplicate parameter name: {name}")
        arr = np.asarray(value, dtype=np.float64)
        self._values[name] = arr
        self._grads[name] = np.zeros_like(arr)

    def names(self) -> list[str]:
        return list(self._values)

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def set_value(self, name: str, value: np.ndarray) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._values[name].shape:
            raise ValueError(
                f"shape mismatch for {name}: {arr.shape} != {self._values[name].shape}"
            )
        self._values[name] = arr
        if self._grads[name].shape != arr.shape:
            self._grads[name] = np.zeros_like(arr)

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def accumulate_grad(self, name: str, g: np.ndarray) -> None:
        self._grads[name] += g

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, v in self._values.items():
            out.add(name, v.copy())
        return out

    def n_params(self) -> int:
        return sum(v.size for v in self._values.values())

    def check_finite(self) -> None:
        for name, v in self._values.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite values in parameter {name}")

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)


class Binder:
    """Per-tape view of a ParamStore; one cached leaf tensor per name."""

    def __init__(self, store: ParamStore, tape: Tape | None):
        self.store = store
        self.tape = tape
        self._leaves: dict[str, Tensor] = {}

    def get(self, name: str) -> Tensor:
        leaf = self._leaves.get(name)
        if leaf is None:
            leaf = Tensor(self.store.value(name))
            self._leaves[name] = leaf
        return leaf

    def flush_grads(self) -> None:
        """Accumulate leaf gradients into the store's grad buffers."""
        for name, leaf in self._leaves.items():
            if leaf.grad is not None:
                self.store.accumulate_grad(name, leaf.grad)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def add_dense_params(store: ParamStore, rng, prefix: str, n_in: int, n_out: int) -> None:
    store.add(prefix + ".w", uniform_init(rng, (n_in, n_out), n_in))
    store.add(prefix + ".b", uniform_init(rng, (n_out,), n_in))


def add_gru_params(store: ParamStore, rng, prefix: str, n_in: int, hidden: int) -> None:
    # Gate order along the 3H axis: reset, update, candidate.
    store.add(prefix + ".wx", uniform_init(rng, (n_in, 3 * hidden), hidden))
    store.add(prefix + ".wh", uniform_init(rng, (hidden, 3 * hidden), hidden))
    store.add(prefix + ".bx", uniform_init(rng, (3 * hidden,), hidden))
    store.add(prefix + ".bh", uniform_init(rng, (3 * hidden,), hidden))


def add_attention_params(store: ParamStore, rng, prefix: str, embed: int,
                         ff_hidden: int) -> None:
    for head in ("wq", "wk", "wv", "wo"):
        store.add(f"{prefix}.{head}", uniform_init(rng, (embed, embed), embed))
    store.add(prefix + ".bo", uniform_init(rng, (embed,), embed))
    store.add(prefix + ".ff1.w", uniform_init(rng, (embed, ff_hidden), embed))
    store.add(prefix + ".ff1.b", uniform_init(rng, (ff_hidden,), embed))
    store.add(prefix + ".ff2.w", uniform_init(rng, (ff_hidden, embed), ff_hidden))
    store.add(prefix + ".ff2.b", uniform_init(rng, (embed,), ff_hidden))


_ACTIVATIONS = {
    "none": lambda tape, x: x,
    "relu": ad.relu,
    "elu": ad.elu,
    "tanh": ad.tanh,
}


def dense(tape, x: Tensor, w: Tensor, b: Tensor | None, activation: str = "none") -> Tensor:
    """Affine map plus activation; x: (..., n_in), w: (n_in, n_out)."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(
            f"dense shape mismatch: input {x.data.shape} vs weights {w.data.shape}"
        )
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation: {activation}")
    return _ACTIVATIONS[activation](tape, ad.linear(tape, x, w, b))


def gru_step(tape, x: Tensor, h: Tensor, binder: Binder, prefix: str) -> Tensor:
    """One recurrent cell update; returns the next hidden state in (-1, 1).

    Fused into a single tape node (recurrent unrolls record hundreds of
    these); the backward applies the analytic gate derivatives and
    accumulates into x, h and the four weight leaves.
    """
    wx = binder.get(prefix + ".wx")
    wh = binder.get(prefix + ".wh")
    bx = binder.get(prefix + ".bx")
    bh = binder.get(prefix + ".bh")
    hidden = h.data.shape[-1]
    if x.data.shape[:-1] != h.data.shape[:-1] or wx.data.shape[-1] != 3 * hidden:
        raise ValueError("gru_step shape mismatch")

    gx = x.data @ wx.data + bx.data
    gh = h.data @ wh.data + bh.data
    with np.errstate(over="ignore"):
        r = 1.0 / (1.0 + np.exp(-(gx[..., :hidden] + gh[..., :hidden])))
        z = 1.0 / (1.0 + np.exp(-(gx[..., hidden:2 * hidden]
                                  + gh[..., hidden:2 * hidden])))
    hn = gh[..., 2 * hidden:]
    n = np.tanh(gx[..., 2 * hidden:] + r * hn)
    out = Tensor((1.0 - z) * n + z * h.data)

    if tape is not None:
        def fn(g, x=x, h=h, wx=wx, wh=wh, bx=bx, bh=bh, r=r, z=z, n=n, hn=hn,
               out=out):
            dz = g * (h.data - n) * z * (1.0 - z)
            dn = g * (1.0 - z) * (1.0 - n * n)
            dr = dn * hn * r * (1.0 - r)
            d_gx = np.concatenate([dr, dz, dn], axis=-1)
            d_gh = np.concatenate([dr, dz, dn * r], axis=-1)
            ad._acc_own(x, d_gx @ wx.data.T)
            ad._acc_own(h, d_gh @ wh.data.T + g * z)
            x2 = x.data.reshape(-1, x.data.shape[-1])
            h2 = h.data.reshape(-1, h.data.shape[-1])
            gx2 = d_gx.reshape(-1, d_gx.shape[-1])
            gh2 = d_gh.reshape(-1, d_gh.shape[-1])
            ad._acc_own(wx, x2.T @ gx2)
            ad._acc_own(wh, h2.T @ gh2)
            ad._acc_own(bx, gx2.sum(axis=0))
            ad._acc_own(bh, gh2.sum(axis=0))
        tape.add_node(out, fn)
    return out


def attention_block(tape, seq: Tensor, binder: Binder, prefix: str,
                    causal: bool = True, key_mask: np.ndarray | None = None) -> Tensor:
    """Single-head attention decoder block over (B, T, d) or (T, d) input.

    ``key_mask`` flags valid positions (True = real token); invalid keys are
    never attended to, except that every query may attend to itself so fully
    padded rows stay well defined. Output positions line up with inputs.
    """
    squeeze = seq.data.ndim == 2
    if squeeze:
        seq = ad.reshape(tape, seq, (1,) + seq.data.shape)
    b, t, d = seq.data.shape
    if t == 0:
        raise ValueError("attention_block requires at least one position")

    q = ad.linear(tape, seq, binder.get(prefix + ".wq"), None)
    k = ad.linear(tape, seq, binder.get(prefix + ".wk"), None)
    v = ad.linear(tape, seq, binder.get(prefix + ".wv"), None)
    scores = ad.affine_const(tape, ad.bmm(tape, q, ad.transpose_last(tape, k)),
                             1.0 / math.sqrt(d))

    mask = np.zeros((b, t, t))
    if causal:
        mask += np.where(np.triu(np.ones((t, t)), k=1) > 0, -1e30, 0.0)
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (b, t):
            raise ValueError(f"key_mask shape {key_mask.shape} != {(b, t)}")
        bad = ~key_mask[:, None, :] & ~np.eye(t, dtype=bool)[None, :, :]
        mask = mask + np.where(bad, -1e30, 0.0)
    weights = ad.softmax_last(tape, ad.add_const(tape, scores, mask))

    attended = ad.linear(tape, ad.bmm(tape, weights, v),
                         binder.get(prefix + ".wo"), binder.get(prefix + ".bo"))
    x = ad.add(tape, seq, attended)
    ff = ad.linear(tape,
                   ad.relu(tape, ad.linear(tape, x, binder.get(prefix + ".ff1.w"),
                                           binder.get(prefix + ".ff1.b"))),
                   binder.get(prefix + ".ff2.w"), binder.get(prefix + ".ff2.b"))
    out = ad.add(tape, x, ff)
    if squeeze:
        out = ad.reshape(tape, out, (t, d))
    return out


def softmax(x: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Stable softmax over the last axis of a plain array."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax input must be finite")
    z = x / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) for strictly positive probability vectors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float(np.sum(p * (np.log(p) - np.log(q))))
