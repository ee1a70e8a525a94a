"""Small dense networks with hand-rolled reverse- and forward-mode derivatives.

Everything is float64 numpy. Networks are plain dataclasses (no framework):
a stack of affine layers with SiLU or ReLU on hidden layers and a linear
output head. Besides the usual forward/backward pair, the module provides a
forward-mode directional derivative (`jvp`) and the reverse sweep through it
(`jvp_backward`), which is what lets a training loss depend on input
gradients of the network (Lie derivatives) while still yielding exact weight
gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_ACTIVATIONS = ("silu", "relu")


def silu(u: np.ndarray) -> np.ndarray:
    return u * expit(u)


def silu_d(u: np.ndarray) -> np.ndarray:
    s = expit(u)
    return s * (1.0 + u * (1.0 - s))


def silu_dd(u: np.ndarray) -> np.ndarray:
    s = expit(u)
    return s * (1.0 - s) * (2.0 + u * (1.0 - 2.0 * s))


def relu(u: np.ndarray) -> np.ndarray:
    return np.maximum(u, 0.0)


def relu_d(u: np.ndarray) -> np.ndarray:
    # Subgradient 0 at the kink.
    return (u > 0.0).astype(np.float64)


@dataclass
class Mlp:
    """Fully connected net: dims[0] inputs, dims[-1] linear outputs.

    weights[l] has shape (dims[l+1], dims[l]); biases[l] has shape (dims[l+1],).
    """

    dims: tuple[int, ...]
    activation: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """Flat list of parameter arrays, weights and biases interleaved."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_mlp(dims: tuple[int, ...] | list[int], activation: str, seed) -> Mlp:
    """He-uniform init for ReLU, Xavier-uniform for SiLU; zero biases.

    `seed` may be an int or a numpy Generator; results are deterministic per
    seed, layers drawn input-to-output.
    """
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    if len(dims) < 2:
        raise ValueError("an Mlp needs at least input and output dims")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if activation == "relu":
            bound = np.sqrt(6.0 / fan_in)
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(tuple(int(d) for d in dims), activation, weights, biases)


def _act(mlp: Mlp):
    if mlp.activation == "silu":
        return silu, silu_d, silu_dd
    return relu, relu_d, None


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre: list[np.ndarray]          # S_l per layer
    post: list[np.ndarray]         # A_l per layer (post[-1] is the output)
    tangent_inputs: np.ndarray | None = None   # U
    tangents: list[np.ndarray] | None = None   # Tau_l per layer (pre-activation tangents)
    tangents_post: list[np.ndarray] | None = None  # T_l per layer


def forward(mlp: Mlp, Z: np.ndarray, want_cache: bool = False):
    """Batch forward pass. Z is (B, d_in); returns (B, d_out) or (out, cache)."""
    act, _, _ = _act(mlp)
    a = Z
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = []
    last = mlp.n_layers - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        s = a @ w.T + b
        a = s if l == last else act(s)
        if want_cache:
            pre.append(s)
            post.append(a)
    if want_cache:
        return a, ForwardCache(Z, pre, post)
    return a


def backward(mlp: Mlp, cache: ForwardCache, d_out: np.ndarray):
    """Reverse sweep. Returns (weight grads, bias grads, input grads)."""
    _, act_d, _ = _act(mlp)
    n = mlp.n_layers
    dW = [None] * n
    db = [None] * n
    g = d_out
    for l in range(n - 1, -1, -1):
        if l != n - 1:
            g = g * act_d(cache.pre[l])
        a_prev = cache.inputs if l == 0 else cache.post[l - 1]
        dW[l] = g.T @ a_prev
        db[l] = g.sum(axis=0)
        g = g @ mlp.weights[l]
    return dW, db, g


def forward_jvp(mlp: Mlp, Z: np.ndarray, U: np.ndarray, want_cache: bool = False):
    """Forward pass carrying an input tangent U alongside the values.

    Returns (outputs, directional derivatives) where the second array is
    J_phi(z) @ u per batch row; with cache when requested.
    """
    act, act_d, _ = _act(mlp)
    a = Z
    t = U
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = []
    taus: list[np.ndarray] = []
    ts: list[np.ndarray] = []
    last = mlp.n_layers - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        s = a @ w.T + b
        tau = t @ w.T
        if l == last:
            a, t = s, tau
        else:
            a, t = act(s), act_d(s) * tau
        if want_cache:
            pre.append(s)
            post.append(a)
            taus.append(tau)
            ts.append(t)
    if want_cache:
        return a, t, ForwardCache(Z, pre, post, U, taus, ts)
    return a, t


def jvp_backward(mlp: Mlp, cache: ForwardCache, d_out: np.ndarray | None,
                 d_jvp: np.ndarray | None):
    """Reverse sweep through forward_jvp.

    d_out is the upstream on the plain outputs, d_jvp the upstream on the
    directional derivatives; either may be None. Returns (weight grads,
    bias grads, input grads, tangent grads). The bias grads see only the
    d_out path: tangents never touch biases.
    """
    _, act_d, act_dd = _act(mlp)
    if cache.tangents is None:
        raise ValueError("cache was built without tangents; use forward_jvp")
    n = mlp.n_layers
    B = cache.inputs.shape[0]
    zero_p = d_out is None
    zero_r = d_jvp is None
    p = np.zeros((B, mlp.dims[-1])) if zero_p else d_out
    r = np.zeros((B, mlp.dims[-1])) if zero_r else d_jvp
    dW = [None] * n
    db = [None] * n
    for l in range(n - 1, -1, -1):
        if l == n - 1:
            ds = p
            dtau = r
        else:
            sd = act_d(cache.pre[l])
            dtau = r * sd
            ds = p * sd
            if act_dd is not None:
                ds = ds + r * cache.tangents[l] * act_dd(cache.pre[l])
        a_prev = cache.inputs if l == 0 else cache.post[l - 1]
        t_prev = cache.tangent_inputs if l == 0 else cache.tangents_post[l - 1]
        dW[l] = ds.T @ a_prev + dtau.T @ t_prev
        db[l] = ds.sum(axis=0)
        p = ds @ mlp.weights[l]
        r = dtau @ mlp.weights[l]
    return dW, db, p, r


def adam_init(params: list[np.ndarray]) -> "AdamState":
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        step=0,
    )


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0


def adam_step(state: AdamState, params: list[np.ndarray],
              grads: list[np.ndarray], lr: float) -> None:
    """One Adam update, in place on `params`."""
    state.step += 1
    t = state.step
    b1c = 1.0 - ADAM_BETA1 ** t
    b2c = 1.0 - ADAM_BETA2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(g)
        p -= lr * (m / b1c) / (np.sqrt(v / b2c) + ADAM_EPS)


def step_decay_lr(base_lr: float, epoch: int, factor: float, interval: int) -> float:
    """Step schedule: lr * factor**floor(epoch/interval). Exact at boundaries."""
    if interval <= 0:
        return base_lr
    return base_lr * factor ** (epoch // interval)


def mlp_to_dict(mlp: Mlp) -> dict:
    return {
        "dims": list(mlp.dims),
        "activation": mlp.activation,
        "weights": [w.tolist() for w in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
    }


def mlp_from_dict(d: dict) -> Mlp:
    dims = tuple(int(x) for x in d["dims"])
    activation = d["activation"]
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    weights = [np.asarray(w, dtype=np.float64) for w in d["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
    if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
        raise ValueError("layer count does not match dims")
    for l, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
            raise ValueError(f"layer {l} has shape {w.shape}, expected {(dims[l + 1], dims[l])}")
    return Mlp(dims, activation, weights, biases)
