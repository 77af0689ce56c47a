"""Dense feed-forward Q-network with exact backpropagation and centered RMSProp.

Everything here is a pure function of its inputs and runs in 64-bit floats.
Hidden layers are rectified, the output layer is linear. A batched forward
pass is bit-identical to running each row separately, which the executor
relies on to prove lockstep batched inference equivalent to per-state
inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import kernels as K

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

PARAMS_MAGIC = b"PQNET1\x00\x00"


@dataclass
class Parameters:
    """Layered weights and biases; weight k has shape (out_k, in_k)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)


@dataclass
class Gradients:
    """Loss gradient, shaped exactly like Parameters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class OptConfig:
    """Centered-RMSProp constants."""

    learning_rate: float = 2.5e-4
    rho: float = 0.95
    kappa: float = 0.01

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")


@dataclass
class OptState:
    """Per-parameter first (m) and second (v) moment accumulators."""

    m_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_weights: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: Parameters) -> "OptState":
        return cls(
            m_weights=[np.zeros_like(w) for w in params.weights],
            m_biases=[np.zeros_like(b) for b in params.biases],
            v_weights=[np.zeros_like(w) for w in params.weights],
            v_biases=[np.zeros_like(b) for b in params.biases],
        )


def init_network(layer_sizes: list[int], seed: int) -> Parameters:
    """Seeded uniform init in +-sqrt(6/(fan_in+fan_out)); biases zero.

    The same (layer_sizes, seed) pair always yields bit-identical weights.
    """
    if len(layer_sizes) < 2:
        raise ValueError("a network needs at least 2 layer sizes")
    if any(s <= 0 for s in layer_sizes):
        raise ValueError("all layer sizes must be positive")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return Parameters(weights, biases)


def _check_states(params: Parameters, states: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[np.newaxis, :]
    if states.ndim != 2 or states.shape[1] != params.input_dim:
        raise ValueError(
            f"state batch has shape {states.shape}, expected (n, {params.input_dim})"
        )
    return np.ascontiguousarray(states)


def forward(params: Parameters, states: np.ndarray) -> np.ndarray:
    """Q-values for a batch of states, one row per state."""
    x = _check_states(params, states)
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = K.affine_rows(w, b, x)
        if k < last:
            x = K.relu(x)
    return x


def gradient(
    params: Parameters,
    states: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
) -> Gradients:
    """Exact gradient of the mean half-squared TD error over the batch.

    Targets are treated as constants; only the chosen action's output unit
    receives direct error signal.
    """
    x = _check_states(params, states)
    n = x.shape[0]
    actions = np.ascontiguousarray(actions, dtype=np.int64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    if actions.shape != (n,) or targets.shape != (n,):
        raise ValueError("states, actions and targets must have matching batch sizes")
    if actions.size and (actions.min() < 0 or actions.max() >= params.output_dim):
        raise ValueError("action index out of range")

    last = params.n_layers - 1
    activations = [x]
    preacts = []
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        pre = K.affine_rows(w, b, activations[-1])
        preacts.append(pre)
        activations.append(K.relu(pre) if k < last else pre)

    delta = K.output_delta(activations[-1], actions, targets)
    grads_w: list[np.ndarray] = [np.empty(0)] * params.n_layers
    grads_b: list[np.ndarray] = [np.empty(0)] * params.n_layers
    for k in range(last, -1, -1):
        grads_w[k] = K.weight_grad(delta, activations[k])
        grads_b[k] = K.bias_grad(delta)
        if k > 0:
            delta = K.hidden_delta(delta, params.weights[k], preacts[k - 1])
    return Gradients(grads_w, grads_b)


def rmsprop_step(
    opt: OptState, cfg: OptConfig, params: Parameters, grad: Gradients
) -> tuple[Parameters, OptState]:
    """One centered-RMSProp update; returns fresh Parameters and OptState.

    Elementwise: m <- rho*m + (1-rho)*g, v <- rho*v + (1-rho)*g^2,
    theta <- theta - lr * g / sqrt(v - m^2 + kappa).
    """
    for g in grad.weights + grad.biases:
        if not np.all(np.isfinite(g)):
            raise ValueError("gradient contains non-finite entries")

    new_w, new_b = [], []
    new_mw, new_mb, new_vw, new_vb = [], [], [], []
    for w, g, m, v in zip(params.weights, grad.weights, opt.m_weights, opt.v_weights):
        p2, m2, v2 = K.rmsprop_flat(
            w.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
            cfg.learning_rate, cfg.rho, cfg.kappa,
        )
        new_w.append(p2.reshape(w.shape))
        new_mw.append(m2.reshape(w.shape))
        new_vw.append(v2.reshape(w.shape))
    for b, g, m, v in zip(params.biases, grad.biases, opt.m_biases, opt.v_biases):
        p2, m2, v2 = K.rmsprop_flat(b, g, m, v, cfg.learning_rate, cfg.rho, cfg.kappa)
        new_b.append(p2)
        new_mb.append(m2)
        new_vb.append(v2)
    return (
        Parameters(new_w, new_b),
        OptState(new_mw, new_mb, new_vw, new_vb, opt.step + 1),
    )


def copy_parameters(source: Parameters) -> Parameters:
    """Deep, independent copy; mutating either side never affects the other."""
    return Parameters(
        [w.copy() for w in source.weights],
        [b.copy() for b in source.biases],
    )


def parameter_bytes(params: Parameters) -> bytes:
    """Little-endian float64 bytes in layer order (weights then bias per layer)."""
    chunks = []
    for w, b in zip(params.weights, params.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(chunks)


def theta_hash(params: Parameters) -> str:
    """64-bit FNV-1a over parameter_bytes, as 16 hex digits."""
    h = FNV_OFFSET
    for byte in parameter_bytes(params):
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


def save_parameters(path, params: Parameters) -> None:
    """Binary parameter file: magic, uint32 layer count, per-layer (out, in)
    uint32 pairs, then little-endian float64 weights and biases in layer order.
    """
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(np.uint32(params.n_layers).tobytes())
        for w in params.weights:
            fh.write(np.asarray(w.shape, dtype="<u4").tobytes())
        fh.write(parameter_bytes(params))


def load_parameters(path) -> Parameters:
    with open(path, "rb") as fh:
        magic = fh.read(len(PARAMS_MAGIC))
        if magic != PARAMS_MAGIC:
            raise ValueError(f"{path}: not a parameter file")
        (n_layers,) = np.frombuffer(fh.read(4), dtype="<u4")
        shapes = [
            tuple(np.frombuffer(fh.read(8), dtype="<u4")) for _ in range(n_layers)
        ]
        weights, biases = [], []
        for out_dim, in_dim in shapes:
            w = np.frombuffer(fh.read(8 * out_dim * in_dim), dtype="<f8")
            weights.append(w.reshape(out_dim, in_dim).copy())
            b = np.frombuffer(fh.read(8 * out_dim), dtype="<f8")
            biases.append(b.copy())
    return Parameters(weights, biases)
