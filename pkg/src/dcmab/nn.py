"""Small fully-connected networks with hand-written backprop.

Inputs are row batches of shape ``(batch, in_dim)``; parameter gradients are
summed over the batch. ``backward`` also returns the gradient with respect to
the input, which the actor update needs to pull dQ/da out of a critic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class MlpParams:
    specs: List[LayerSpec]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    init: str = "uniform_fan_in"

    def __post_init__(self):
        for a, b in zip(self.specs, self.specs[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer chain mismatch: {a.out_dim} -> {b.in_dim}")
        for s, w, b in zip(self.specs, self.weights, self.biases):
            if w.shape != (s.out_dim, s.in_dim) or b.shape != (s.out_dim,):
                raise ValueError("parameter shape does not match layer spec")

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "MlpParams":
        return MlpParams(list(self.specs), [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.init)


def chain(dims: Sequence[int], hidden: str = "relu", output: str = "linear") -> List[LayerSpec]:
    """Layer specs for ``dims[0] -> ... -> dims[-1]``."""
    acts = [hidden] * (len(dims) - 2) + [output]
    return [LayerSpec(i, o, a) for i, o, a in zip(dims[:-1], dims[1:], acts)]


def init_params(specs: Sequence[LayerSpec], rng: np.random.Generator) -> MlpParams:
    """Uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for weights and biases."""
    weights, biases = [], []
    for s in specs:
        bound = 1.0 / np.sqrt(s.in_dim)
        weights.append(rng.uniform(-bound, bound, (s.out_dim, s.in_dim)))
        biases.append(rng.uniform(-bound, bound, s.out_dim))
    return MlpParams(list(specs), weights, biases)


def zeros_like_params(specs: Sequence[LayerSpec]) -> MlpParams:
    return MlpParams(list(specs), [np.zeros((s.out_dim, s.in_dim)) for s in specs],
                     [np.zeros(s.out_dim) for s in specs])


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z, out, kind):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "tanh":
        return 1.0 - out ** 2
    return np.ones_like(z)


def forward(params: MlpParams, x) -> Tuple[np.ndarray, list]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.in_dim:
        raise ValueError(f"input dim {h.shape[1]} != {params.in_dim}")
    cache = []
    for s, w, b in zip(params.specs, params.weights, params.biases):
        z = h @ w.T + b
        out = _activate(z, s.activation)
        cache.append((h, z, out))
        h = out
    cache.append(single)
    return (h[0] if single else h), cache


def backward(params: MlpParams, cache, grad_out) -> Tuple[List[np.ndarray], np.ndarray]:
    """Returns ``(grads, grad_input)``; ``grads`` follows ``params.arrays()`` order."""
    single = cache[-1]
    layers = cache[:-1]
    if len(layers) != len(params.specs):
        raise ValueError("cache does not come from this network")
    g = np.asarray(grad_out, dtype=float)
    g = g[None, :] if single else g
    if g.shape != layers[-1][2].shape:
        raise ValueError(f"output gradient shape {g.shape} != {layers[-1][2].shape}")
    grads: List[np.ndarray] = [None] * (2 * len(layers))
    for k in range(len(layers) - 1, -1, -1):
        h, z, out = layers[k]
        dz = g * _activation_grad(z, out, params.specs[k].activation)
        grads[2 * k] = dz.T @ h
        grads[2 * k + 1] = dz.sum(axis=0)
        g = dz @ params.weights[k]
    return grads, (g[0] if single else g)


class SplitInputNet:
    """Critic layout: the state enters the first layer, extra inputs join at the first hidden layer.

    ``q = head([trunk(state), extra])``. The head's input is ordered
    ``[trunk activations, extra]``.
    """

    def __init__(self, trunk: MlpParams, head: MlpParams):
        if head.in_dim <= trunk.out_dim:
            raise ValueError("head must take the trunk output plus at least one extra input")
        self.trunk = trunk
        self.head = head

    @classmethod
    def build(cls, state_dim, extra_dim, hidden=(100, 100), rng=None):
        rng = np.random.default_rng() if rng is None else rng
        trunk = init_params(chain([state_dim, hidden[0]], output="relu"), rng)
        head = init_params(chain([hidden[0] + extra_dim, *hidden[1:], 1]), rng)
        return cls(trunk, head)

    @property
    def extra_dim(self) -> int:
        return self.head.in_dim - self.trunk.out_dim

    def arrays(self) -> List[np.ndarray]:
        return self.trunk.arrays() + self.head.arrays()

    def copy(self) -> "SplitInputNet":
        return SplitInputNet(self.trunk.copy(), self.head.copy())

    def forward(self, state, extra):
        h, c1 = forward(self.trunk, state)
        joined = np.concatenate([h, np.asarray(extra, dtype=float)], axis=-1)
        q, c2 = forward(self.head, joined)
        return q, (c1, c2)

    def backward(self, cache, grad_out):
        c1, c2 = cache
        g_head, g_joined = backward(self.head, c2, grad_out)
        k = self.trunk.out_dim
        g_trunk, g_state = backward(self.trunk, c1, g_joined[..., :k])
        return g_trunk + g_head, g_state, g_joined[..., k:]


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 0.0  # global-norm clip, 0 disables


@dataclass
class Optimizer:
    """Adam, or plain SGD with ``kind='sgd'``. Updates arrays in place."""
    config: OptimizerConfig
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, arrays: List[np.ndarray], grads: List[np.ndarray], ascend: bool = False) -> float:
        cfg = self.config
        sign = 1.0 if ascend else -1.0
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        scale = 1.0
        if cfg.grad_clip > 0 and norm > cfg.grad_clip:
            scale = cfg.grad_clip / norm
        if cfg.kind == "sgd":
            for a, g in zip(arrays, grads):
                a += sign * cfg.lr * scale * g
            return norm
        if cfg.kind != "adam":
            raise ValueError(f"unknown optimizer {cfg.kind!r}")
        if not self.m:
            self.m = [np.zeros_like(a) for a in arrays]
            self.v = [np.zeros_like(a) for a in arrays]
        self.t += 1
        c1 = 1.0 - cfg.beta1 ** self.t
        c2 = 1.0 - cfg.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            g = g * scale
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            a += sign * cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        return norm


def optimizer_step(arrays, grads, optimizer: Optimizer, ascend=False) -> float:
    return optimizer.step(arrays, grads, ascend)


def soft_update(target_arrays: List[np.ndarray], source_arrays: List[np.ndarray], tau: float):
    """Polyak averaging ``target <- tau * source + (1 - tau) * target``, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must be in [0, 1]")
    for t, s in zip(target_arrays, source_arrays):
        t *= 1.0 - tau
        t += tau * s
    return target_arrays


# --- persistence: one JSON header line, then raw little-endian float64 values ---

def save_arrays(path, arrays: Sequence[np.ndarray], header: dict) -> None:
    header = dict(header, shapes=[list(a.shape) for a in arrays])
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_arrays(path) -> Tuple[dict, List[np.ndarray]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        flat = np.frombuffer(fh.read(), dtype="<f8")
    arrays, pos = [], 0
    for shape in header["shapes"]:
        size = int(np.prod(shape))
        arrays.append(flat[pos:pos + size].reshape(shape).copy())
        pos += size
    if pos != flat.size:
        raise ValueError(f"{path}: {flat.size - pos} trailing values")
    return header, arrays


def save_params(path, params: MlpParams, seed=None) -> None:
    specs = [[s.in_dim, s.out_dim, s.activation] for s in params.specs]
    save_arrays(path, params.arrays(), {"layers": specs, "init": params.init, "seed": seed})


def load_params(path) -> MlpParams:
    header, arrays = load_arrays(path)
    specs = [LayerSpec(*s) for s in header["layers"]]
    return MlpParams(specs, arrays[0::2], arrays[1::2], header.get("init", "uniform_fan_in"))


def copy_into(dst: List[np.ndarray], src: List[np.ndarray]) -> None:
    for d, s in zip(dst, src):
        d[...] = s
