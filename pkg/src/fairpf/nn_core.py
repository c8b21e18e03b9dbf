"""Small feed-forward networks with hand-written backprop and Adam.

Everything here is plain numpy in float64.  A model is a list of weight
matrices and bias vectors; the group bit ``a`` is appended to ``x`` as one
extra input column when the architecture asks for it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

SCORE_EPS = 1e-7
CHECKPOINT_FORMAT = "fairpf-mlp"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Input or parameter shapes do not match the architecture."""


class NumericError(ArithmeticError):
    """A non-finite value appeared during a forward or backward pass."""


@dataclass(frozen=True)
class MlpArchitecture:
    """Fully connected ReLU network with a single sigmoid output.

    ``input_dim`` counts the features of ``x`` only.  When ``group_input`` is
    set the first layer has one more input column holding the group bit.
    """

    input_dim: int
    hidden_sizes: tuple[int, ...]
    output_dim: int = 1
    group_input: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.output_dim != 1:
            raise ValueError("output_dim is fixed at 1")
        if not self.hidden_sizes:
            raise ValueError("hidden_sizes must be non-empty")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_sizes):
            raise ValueError(f"all layer sizes must be >= 1, got {self}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every layer as actually allocated."""
        dims = [self.input_dim + int(self.group_input), *self.hidden_sizes, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def tag(self) -> str:
        return "x".join(str(h) for h in self.hidden_sizes)


@dataclass(frozen=True)
class ParamCount:
    n_params: int
    n_params_with_bias: int


def param_count(arch: MlpArchitecture) -> ParamCount:
    """Count parameters the way model sizes are usually quoted.

    ``n_params`` is the weight-only count over ``input_dim -> hidden -> 1``
    (the group column and biases are not counted), e.g. 20->[80,80]->1 gives
    8080.  ``n_params_with_bias`` adds the bias vectors.
    """
    dims = [arch.input_dim, *arch.hidden_sizes, arch.output_dim]
    weights = sum(a * b for a, b in zip(dims[:-1], dims[1:]))
    biases = sum(dims[1:])
    return ParamCount(weights, weights + biases)


@dataclass
class MlpModel:
    architecture: MlpArchitecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    init_seed: int = 0

    def __post_init__(self):
        shapes = self.architecture.layer_shapes
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ShapeError(f"expected {len(shapes)} layers, got {len(self.weights)} weights / {len(self.biases)} biases")
        for i, ((fan_in, fan_out), w, b) in enumerate(zip(shapes, self.weights, self.biases)):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ShapeError(f"layer {i}: expected W{(fan_in, fan_out)} b{(fan_out,)}, got W{w.shape} b{b.shape}")

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in the fixed order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(
            self.architecture,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.init_seed,
        )

    def __call__(self, X, A=None) -> np.ndarray:
        return forward(self, X, A)


def init_model(arch: MlpArchitecture, seed: int) -> MlpModel:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_shapes:
        weights.append(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return MlpModel(arch, weights, biases, int(seed))


def zero_model(arch: MlpArchitecture) -> MlpModel:
    return MlpModel(
        arch,
        [np.zeros(s) for s in arch.layer_shapes],
        [np.zeros(s[1]) for s in arch.layer_shapes],
    )


def _inputs(model: MlpModel, X, A) -> np.ndarray:
    arch = model.architecture
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise ShapeError(f"expected x with {arch.input_dim} features, got shape {X.shape}")
    if not arch.group_input:
        return X
    if A is None:
        raise ShapeError("architecture takes the group bit as input but a was not given")
    A = np.asarray(A, dtype=np.float64).reshape(-1)
    if A.shape[0] == 1 and X.shape[0] > 1:
        A = np.broadcast_to(A, (X.shape[0],))
    if A.shape[0] != X.shape[0]:
        raise ShapeError(f"x has {X.shape[0]} rows but a has {A.shape[0]}")
    return np.column_stack([X, A])


def _forward_cache(model: MlpModel, H: np.ndarray):
    """Run the network, keeping every layer's input for the backward pass."""
    acts = [H]
    n_layers = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        Z = H @ w + b
        if not np.all(np.isfinite(Z)):
            raise NumericError(f"non-finite pre-activation in layer {i}")
        if i < n_layers - 1:
            H = np.maximum(Z, 0.0)
            acts.append(H)
    return acts, Z[:, 0]


def logits(model: MlpModel, X, A=None) -> np.ndarray:
    _, z = _forward_cache(model, _inputs(model, X, A))
    return z


def forward(model: MlpModel, X, A=None) -> np.ndarray:
    """Scores f(x, a) in [1e-7, 1 - 1e-7], one per row of ``X``."""
    return np.clip(expit(logits(model, X, A)), SCORE_EPS, 1.0 - SCORE_EPS)


@dataclass(frozen=True)
class ScalarizedLoss:
    """BCE + lam * |mean f over A=1 - mean f over A=0|, computed per batch."""

    lam: float = 0.0
    dp_estimator: str = "per_batch"

    def __post_init__(self):
        if not np.isfinite(self.lam):
            raise ValueError("lambda must be finite")
        if self.dp_estimator != "per_batch":
            raise ValueError(f"unsupported dp estimator {self.dp_estimator!r}")


def batch_loss(scores: np.ndarray, A: np.ndarray, Y: np.ndarray, loss: ScalarizedLoss) -> float:
    """Scalarized loss of already-computed (clamped) scores."""
    bce = -np.mean(Y * np.log(scores) + (1.0 - Y) * np.log(1.0 - scores))
    g1, g0 = A == 1, A == 0
    if loss.lam == 0.0 or not g1.any() or not g0.any():
        return float(bce)
    return float(bce + loss.lam * abs(scores[g1].mean() - scores[g0].mean()))


def backward(model: MlpModel, X, A, Y, loss: ScalarizedLoss) -> tuple[float, list[np.ndarray]]:
    """Loss value and exact gradients, in the order of ``model.parameters()``.

    The DP term is dropped when the batch holds only one group.  Where the
    score is clamped the derivative is zero, matching the clamped forward.
    """
    A = np.asarray(A, dtype=np.float64).reshape(-1)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    if A.shape[0] == 0:
        raise ShapeError("empty batch")
    acts, z = _forward_cache(model, _inputs(model, X, A))
    f = expit(z)
    s = np.clip(f, SCORE_EPS, 1.0 - SCORE_EPS)
    n = s.shape[0]
    value = batch_loss(s, A, Y, loss)

    # d loss / d z, written out so the clamp mask is explicit
    unclamped = (f > SCORE_EPS) & (f < 1.0 - SCORE_EPS)
    dz = (f - Y) / n
    g1, g0 = A == 1, A == 0
    n1, n0 = int(g1.sum()), int(g0.sum())
    if loss.lam != 0.0 and n1 and n0:
        diff = s[g1].mean() - s[g0].mean()
        ddp = np.where(g1, 1.0 / n1, -1.0 / n0) * np.sign(diff)
        dz = dz + loss.lam * ddp * f * (1.0 - f)
    dz = np.where(unclamped, dz, 0.0)

    grads_w: list[np.ndarray] = []
    grads_b: list[np.ndarray] = []
    delta = dz[:, None]
    for i in range(len(model.weights) - 1, -1, -1):
        gw = acts[i].T @ delta
        gb = delta.sum(axis=0)
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericError(f"non-finite gradient in layer {i}")
        grads_w.append(gw)
        grads_b.append(gb)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    grads = []
    for gw, gb in zip(reversed(grads_w), reversed(grads_b)):
        grads.extend((gw, gb))
    return value, grads


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_model(cls, model: MlpModel, **hyper) -> "AdamState":
        params = model.parameters()
        return cls(
            **hyper,
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
        )


def adam_step(model: MlpModel, grads: list[np.ndarray], state: AdamState) -> tuple[MlpModel, AdamState]:
    """One bias-corrected Adam update, applied in place; returns (model, state)."""
    params = model.parameters()
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    if len(grads) != len(params):
        raise ShapeError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return model, state


def save_checkpoint(model: MlpModel, path) -> None:
    """Write a versioned JSON checkpoint with explicit layer shapes."""
    arch = model.architecture
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": {
            "input_dim": arch.input_dim,
            "hidden_sizes": list(arch.hidden_sizes),
            "output_dim": arch.output_dim,
            "group_input": arch.group_input,
        },
        "init_seed": model.init_seed,
        "layers": [
            {"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(model.weights, model.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_checkpoint(path) -> MlpModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint")
    a = doc["architecture"]
    arch = MlpArchitecture(a["input_dim"], tuple(a["hidden_sizes"]), a["output_dim"], a["group_input"])
    weights = [np.asarray(layer["weight"], dtype=np.float64).reshape(layer["shape"]) for layer in doc["layers"]]
    biases = [np.asarray(layer["bias"], dtype=np.float64) for layer in doc["layers"]]
    return MlpModel(arch, weights, biases, doc["init_seed"])
