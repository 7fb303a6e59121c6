"""From-scratch numerical core for the three mortality models.

Dense and LSTM layers with exact analytic gradients (backpropagation
through time for the LSTM), a numerically stable sigmoid / binary
cross-entropy pair, Glorot-uniform initialization, inverted dropout on
input features, and the RMSprop update rule. Everything runs in float64
and is deterministic given explicit seeds.

LSTM gate packing is [input | forget | candidate | output] along the last
axis of the fused weight matrices; the forget-gate bias block starts at 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

PROB_EPS = 1e-7

CHECKPOINT_MAGIC = b"EMRB01\n"


def as_rng(seed: int | np.random.Generator) -> np.random.Generator:
    return np.random.default_rng(seed)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Sign-split logistic function; no overflow for any float64 input."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def clamp_probs(p: np.ndarray) -> np.ndarray:
    """Clamp probabilities into [PROB_EPS, 1 - PROB_EPS] for the log path."""
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def bce_loss(
    p: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None
) -> float:
    """Mean binary cross-entropy; probabilities are clamped before the log."""
    p = clamp_probs(np.asarray(p, dtype=float))
    y = np.asarray(y, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: probs {p.shape} vs labels {y.shape}")
    terms = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    if weights is not None:
        terms = terms * weights
    return float(np.mean(terms))


def glorot_uniform(
    fan_in: int, fan_out: int, rng: int | np.random.Generator
) -> np.ndarray:
    """Uniform on [-L, L] with L = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be >= 1")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return as_rng(rng).uniform(-limit, limit, size=(fan_in, fan_out))


MODEL_KINDS = ("lr", "mlp", "rnn")

MLP_DEFAULT_HIDDEN = (256, 256)


@dataclass(frozen=True)
class ModelArch:
    kind: str
    input_width: int
    hidden_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_width < 1:
            raise ValueError("input_width must be >= 1")
        if self.kind == "lr" and self.hidden_sizes:
            raise ValueError("lr is a 0-hidden-layer model")
        if self.kind == "rnn" and not self.hidden_sizes:
            raise ValueError("rnn needs at least one LSTM layer")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be >= 1")


def make_arch(
    kind: str, input_width: int, hidden_sizes: Iterable[int] | None = None
) -> ModelArch:
    """Architecture with the study defaults: LR none, MLP 256x2, RNN WxW."""
    if hidden_sizes is not None:
        hidden = tuple(int(h) for h in hidden_sizes)
    elif kind == "lr":
        hidden = ()
    elif kind == "mlp":
        hidden = MLP_DEFAULT_HIDDEN
    elif kind == "rnn":
        hidden = (input_width, input_width)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return ModelArch(kind=kind, input_width=input_width, hidden_sizes=hidden)


def parameter_count(arch: ModelArch) -> int:
    """Trainable parameter count implied by an architecture."""
    d = arch.input_width
    total = 0
    if arch.kind == "rnn":
        for h in arch.hidden_sizes:
            total += 4 * h * (d + h + 1)  # W (d,4h) + U (h,4h) + b (4h,)
            d = h
    else:
        for h in arch.hidden_sizes:
            total += d * h + h
            d = h
    total += d + 1  # sigmoid output unit
    return total


class MLPModel:
    """Feed-forward classifier over single time-slices; LR when no hiddens."""

    def __init__(self, arch: ModelArch, params: dict[str, np.ndarray]):
        if arch.kind not in ("lr", "mlp"):
            raise ValueError(f"MLPModel cannot hold a {arch.kind!r} architecture")
        self.arch = arch
        self.params = params

    @classmethod
    def initialize(cls, arch: ModelArch, seed: int | np.random.Generator) -> "MLPModel":
        rng = as_rng(seed)
        params: dict[str, np.ndarray] = {}
        d = arch.input_width
        for i, h in enumerate(arch.hidden_sizes):
            params[f"w{i}"] = glorot_uniform(d, h, rng)
            params[f"b{i}"] = np.zeros(h)
            d = h
        params["w_out"] = glorot_uniform(d, 1, rng)
        params["b_out"] = np.zeros(1)
        return cls(arch, params)

    def _forward_cached(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        a = np.asarray(X, dtype=float)
        if a.ndim == 1:
            a = a[None, :]
        activations = [a]
        for i in range(len(self.arch.hidden_sizes)):
            z = a @ self.params[f"w{i}"] + self.params[f"b{i}"]
            a = relu(z)
            activations.append(a)
        logits = (a @ self.params["w_out"] + self.params["b_out"]).ravel()
        return sigmoid(logits), activations

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Raw sigmoid outputs, one per row of X."""
        return self._forward_cached(X)[0]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Clamped probabilities, strictly inside (0, 1)."""
        return clamp_probs(self.forward(X))

    def loss_and_grads(
        self,
        X: np.ndarray,
        y: np.ndarray,
        sample_weights: np.ndarray | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean BCE over the batch and exact gradients for every parameter."""
        p, activations = self._forward_cached(X)
        y = np.asarray(y, dtype=float)
        n = p.shape[0]
        loss = bce_loss(p, y, sample_weights)
        dlogit = (p - y) / n
        if sample_weights is not None:
            dlogit = dlogit * sample_weights
        grads: dict[str, np.ndarray] = {}
        a_last = activations[-1]
        grads["w_out"] = a_last.T @ dlogit[:, None]
        grads["b_out"] = np.array([dlogit.sum()])
        da = dlogit[:, None] @ self.params["w_out"].T
        for i in reversed(range(len(self.arch.hidden_sizes))):
            dz = da * (activations[i + 1] > 0)
            grads[f"w{i}"] = activations[i].T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            da = dz @ self.params[f"w{i}"].T
        return loss, grads


def _split_gates(z: np.ndarray, h: int) -> tuple[np.ndarray, ...]:
    return z[..., :h], z[..., h : 2 * h], z[..., 2 * h : 3 * h], z[..., 3 * h :]


class LSTMModel:
    """Stacked LSTM with a per-timestep sigmoid output unit."""

    def __init__(self, arch: ModelArch, params: dict[str, np.ndarray]):
        if arch.kind != "rnn":
            raise ValueError(f"LSTMModel cannot hold a {arch.kind!r} architecture")
        self.arch = arch
        self.params = params

    @classmethod
    def initialize(cls, arch: ModelArch, seed: int | np.random.Generator) -> "LSTMModel":
        rng = as_rng(seed)
        params: dict[str, np.ndarray] = {}
        d = arch.input_width
        for i, h in enumerate(arch.hidden_sizes):
            params[f"w{i}"] = np.hstack(
                [glorot_uniform(d, h, rng) for _ in range(4)]
            )
            params[f"u{i}"] = np.hstack(
                [glorot_uniform(h, h, rng) for _ in range(4)]
            )
            bias = np.zeros(4 * h)
            bias[h : 2 * h] = 1.0  # forget gate starts open
            params[f"b{i}"] = bias
            d = h
        params["w_out"] = glorot_uniform(d, 1, rng)
        params["b_out"] = np.zeros(1)
        return cls(arch, params)

    def _forward_cached(self, X: np.ndarray) -> tuple[np.ndarray, dict]:
        """X is (batch, time, features); returns per-step probs (batch, time)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 3:
            raise ValueError(f"expected (batch, time, features), got shape {X.shape}")
        B, T, _ = X.shape
        layer_input = np.swapaxes(X, 0, 1)  # (T, B, d)
        layers = []
        for li, h in enumerate(self.arch.hidden_sizes):
            W = self.params[f"w{li}"]
            U = self.params[f"u{li}"]
            b = self.params[f"b{li}"]
            I = np.empty((T, B, h))
            F = np.empty((T, B, h))
            G = np.empty((T, B, h))
            O = np.empty((T, B, h))
            C = np.empty((T, B, h))
            TC = np.empty((T, B, h))
            H = np.empty((T, B, h))
            h_prev = np.zeros((B, h))
            c_prev = np.zeros((B, h))
            for t in range(T):
                z = layer_input[t] @ W + h_prev @ U + b
                zi, zf, zg, zo = _split_gates(z, h)
                I[t] = sigmoid(zi)
                F[t] = sigmoid(zf)
                G[t] = np.tanh(zg)
                O[t] = sigmoid(zo)
                C[t] = F[t] * c_prev + I[t] * G[t]
                TC[t] = np.tanh(C[t])
                H[t] = O[t] * TC[t]
                h_prev = H[t]
                c_prev = C[t]
            layers.append(
                {"x": layer_input, "I": I, "F": F, "G": G, "O": O, "C": C,
                 "TC": TC, "H": H}
            )
            layer_input = H
        logits = layer_input @ self.params["w_out"] + self.params["b_out"]  # (T,B,1)
        probs = sigmoid(logits[..., 0]).T  # (B, T)
        cache = {"layers": layers, "top": layer_input, "shape": (B, T)}
        return probs, cache

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Raw per-timestep sigmoid outputs, shape (batch, time)."""
        return self._forward_cached(X)[0]

    def predict_sequence(self, X: np.ndarray) -> np.ndarray:
        """Clamped per-timestep probabilities for one (time, features) matrix."""
        probs = self.forward(np.asarray(X, dtype=float)[None, :, :])
        return clamp_probs(probs[0])

    def loss_and_grads(
        self,
        X: np.ndarray,
        y: np.ndarray,
        mask: np.ndarray | None = None,
        sample_weights: np.ndarray | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Per-sequence mean BCE over valid timesteps, averaged over the batch.

        ``mask`` is (batch, time) with 1 on real rows and 0 on padding;
        the label of each sequence is replicated across its timesteps.
        """
        probs, cache = self._forward_cached(X)
        B, T = cache["shape"]
        y = np.asarray(y, dtype=float)
        if mask is None:
            mask = np.ones((B, T))
        else:
            mask = np.asarray(mask, dtype=float)
        steps = mask.sum(axis=1)
        if np.any(steps < 1):
            raise ValueError("every sequence needs at least one unmasked timestep")
        y_rep = np.broadcast_to(y[:, None], (B, T))
        p = clamp_probs(probs)
        terms = -(y_rep * np.log(p) + (1.0 - y_rep) * np.log1p(-p)) * mask
        per_seq = terms.sum(axis=1) / steps
        if sample_weights is not None:
            per_seq = per_seq * sample_weights
        loss = float(per_seq.mean())

        dlogit = mask * (probs - y_rep) / steps[:, None] / B  # (B, T)
        if sample_weights is not None:
            dlogit = dlogit * np.asarray(sample_weights, dtype=float)[:, None]
        dlogit_t = dlogit.T[:, :, None]  # (T, B, 1)

        grads: dict[str, np.ndarray] = {}
        top = cache["top"]  # (T, B, h_top)
        w_out = self.params["w_out"]
        grads["w_out"] = np.einsum("tbh,tbo->ho", top, dlogit_t)
        grads["b_out"] = np.array([dlogit_t.sum()])
        dh_above = dlogit_t @ w_out.T  # (T, B, h_top)

        for li in reversed(range(len(self.arch.hidden_sizes))):
            layer = cache["layers"][li]
            W = self.params[f"w{li}"]
            U = self.params[f"u{li}"]
            h = self.arch.hidden_sizes[li]
            x = layer["x"]
            I, F, G, O = layer["I"], layer["F"], layer["G"], layer["O"]
            C, TC = layer["C"], layer["TC"]
            dW = np.zeros_like(W)
            dU = np.zeros_like(U)
            db = np.zeros(4 * h)
            dx = np.empty_like(x)
            dh_rec = np.zeros((B, h))
            dc = np.zeros((B, h))
            H = layer["H"]
            for t in reversed(range(T)):
                dh = dh_above[t] + dh_rec
                do = dh * TC[t]
                dc = dc + dh * O[t] * (1.0 - TC[t] ** 2)
                c_prev = C[t - 1] if t > 0 else np.zeros((B, h))
                df = dc * c_prev
                di = dc * G[t]
                dg = dc * I[t]
                dz = np.concatenate(
                    [
                        di * I[t] * (1.0 - I[t]),
                        df * F[t] * (1.0 - F[t]),
                        dg * (1.0 - G[t] ** 2),
                        do * O[t] * (1.0 - O[t]),
                    ],
                    axis=1,
                )
                h_prev = H[t - 1] if t > 0 else np.zeros((B, h))
                dW += x[t].T @ dz
                dU += h_prev.T @ dz
                db += dz.sum(axis=0)
                dx[t] = dz @ W.T
                dh_rec = dz @ U.T
                dc = dc * F[t]
            grads[f"w{li}"] = dW
            grads[f"u{li}"] = dU
            grads[f"b{li}"] = db
            dh_above = dx
        # Reorder to declaration order so checkpoints and optimizers align.
        grads = {name: grads[name] for name in self.params}
        return loss, grads


Model = MLPModel | LSTMModel


def build_model(arch: ModelArch, seed: int | np.random.Generator) -> Model:
    if arch.kind == "rnn":
        return LSTMModel.initialize(arch, seed)
    return MLPModel.initialize(arch, seed)


def snapshot_params(params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: value.copy() for name, value in params.items()}


@dataclass
class RMSPropState:
    """Running mean of squared gradients plus the current learning rate."""

    caches: dict[str, np.ndarray]
    learning_rate: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8

    @classmethod
    def for_params(
        cls,
        params: Mapping[str, np.ndarray],
        learning_rate: float = 1e-3,
        rho: float = 0.9,
        eps: float = 1e-8,
    ) -> "RMSPropState":
        if learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        caches = {name: np.zeros_like(value) for name, value in params.items()}
        return cls(caches=caches, learning_rate=learning_rate, rho=rho, eps=eps)


def rmsprop_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: RMSPropState,
) -> tuple[dict[str, np.ndarray], RMSPropState]:
    """In-place RMSprop update: cache <- rho*cache + (1-rho)*g^2."""
    for name, g in grads.items():
        cache = state.caches[name]
        cache *= state.rho
        cache += (1.0 - state.rho) * g * g
        params[name] -= state.learning_rate * g / (np.sqrt(cache) + state.eps)
    return params, state


def sequence_dropout(
    X: np.ndarray,
    rate: float,
    rng: int | np.random.Generator,
    mode: str = "train",
    per_timestep: bool = False,
) -> np.ndarray:
    """Inverted dropout on input features.

    For (batch, time, features) input the default mask is one draw per
    (sample, feature) shared across all timesteps, zeroing whole feature
    trajectories; ``per_timestep`` switches to i.i.d. per-cell masking.
    2-D (batch, features) input masks each row independently. Inference
    mode is the identity.
    """
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown dropout mode {mode!r}")
    if mode == "infer" or rate == 0.0:
        return X
    X = np.asarray(X, dtype=float)
    gen = as_rng(rng)
    if X.ndim == 3:
        shape = X.shape if per_timestep else (X.shape[0], 1, X.shape[2])
    elif X.ndim == 2:
        shape = X.shape
    else:
        raise ValueError(f"expected 2-D or 3-D input, got shape {X.shape}")
    keep = gen.random(shape) >= rate
    return X * keep / (1.0 - rate)


def save_model(model: Model, path: str | Path) -> None:
    """Checkpoint: magic, JSON header, then float64 buffers in order."""
    header = {
        "kind": model.arch.kind,
        "input_width": model.arch.input_width,
        "hidden_sizes": list(model.arch.hidden_sizes),
        "params": [[name, list(value.shape)] for name, value in model.params.items()],
    }
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        handle.write(b"\n")
        for value in model.params.values():
            handle.write(np.ascontiguousarray(value, dtype=np.float64).tobytes())


def load_model(path: str | Path) -> Model:
    """Bit-exact inverse of save_model."""
    with open(path, "rb") as handle:
        magic = handle.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        header = json.loads(handle.readline().decode("utf-8"))
        params: dict[str, np.ndarray] = {}
        for name, shape in header["params"]:
            size = int(np.prod(shape)) if shape else 1
            buffer = handle.read(size * 8)
            if len(buffer) != size * 8:
                raise ValueError(f"{path}: truncated checkpoint at {name!r}")
            params[name] = np.frombuffer(buffer, dtype=np.float64).reshape(shape).copy()
    arch = ModelArch(
        kind=header["kind"],
        input_width=int(header["input_width"]),
        hidden_sizes=tuple(int(h) for h in header["hidden_sizes"]),
    )
    if arch.kind == "rnn":
        return LSTMModel(arch, params)
    return MLPModel(arch, params)


def finite_difference_gradients(
    loss_fn: Callable[[], float],
    params: Mapping[str, np.ndarray],
    step: float = 1e-4,
) -> dict[str, np.ndarray]:
    """Central-difference gradients of loss_fn w.r.t. every parameter entry.

    Used by the `check` subcommand; the test suite carries its own copy so
    the two routes stay independent.
    """
    grads = {}
    for name, value in params.items():
        grad = np.zeros_like(value)
        flat = value.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = loss_fn()
            flat[i] = original - step
            down = loss_fn()
            flat[i] = original
            gflat[i] = (up - down) / (2.0 * step)
        grads[name] = grad
    return grads
