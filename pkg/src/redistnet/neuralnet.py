"""Small fully connected ReLU networks in plain numpy.

Weights are stored as (fan_in, fan_out) matrices and inputs as row batches,
so a layer is ``x @ W + b``.  Everything runs in float64.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1
_ACTIVATIONS = ("identity", "sigmoid")


class DivergenceError(FloatingPointError):
    """Non-finite loss, gradient or parameter during training."""


class CheckpointError(ValueError):
    pass


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "identity"

    def __post_init__(self):
        if self.output_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} do not match")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k}: input size {w.shape[0]} does not chain")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
        )


def init_xavier(layer_sizes, output_activation: str = "identity", rng=None, bias_std: float = 0.01) -> MlpParams:
    """Xavier-normal weights, Normal(0, bias_std^2) biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {layer_sizes!r}")
    rng = np.random.default_rng() if rng is None else rng
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        biases.append(rng.normal(0.0, bias_std, size=fan_out))
    return MlpParams(weights, biases, output_activation)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class Trace:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each layer
    output: np.ndarray
    squeeze: bool = False


def forward(params: MlpParams, x) -> tuple[np.ndarray, Trace]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.shape[1] != params.layer_sizes[0]:
        raise ValueError(f"input has {a.shape[1]} features, network expects {params.layer_sizes[0]}")
    inputs, pre = [], []
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0) if k < last else z
    if params.output_activation == "sigmoid":
        a = _sigmoid(a)
    out = a[0] if squeeze else a
    return out, Trace(inputs, pre, a, squeeze)


def predict(params: MlpParams, x) -> np.ndarray:
    return forward(params, x)[0]


def backward(params: MlpParams, trace: Trace, grad_output):
    """Reverse pass.

    Returns ``(grad_weights, grad_biases, grad_input)`` for the scalar
    ``sum(output * grad_output)``.  ReLU uses subgradient 0 at the origin.
    """
    g = np.asarray(grad_output, dtype=np.float64)
    if trace.squeeze:
        g = g[None, :]
    if g.shape != trace.output.shape or len(trace.pre) != len(params.weights):
        raise ValueError("trace does not match this network or gradient shape")
    if params.output_activation == "sigmoid":
        g = g * trace.output * (1.0 - trace.output)
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        if k < len(params.weights) - 1:
            g = g * (trace.pre[k] > 0)
        gw[k] = trace.inputs[k].T @ g
        gb[k] = g.sum(axis=0)
        g = g @ params.weights[k].T
    return gw, gb, (g[0] if trace.squeeze else g)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    decay: float = 0.98
    decay_every: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, **kw) -> "AdamState":
        arrs = params.arrays()
        return cls([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs], **kw)

    def learning_rate(self) -> float:
        return self.lr * self.decay ** (self.step // self.decay_every)


def adam_step(params: MlpParams, grad_weights, grad_biases, state: AdamState):
    """One bias-corrected Adam update, in place.  Returns (params, state)."""
    grads = [*grad_weights, *grad_biases]
    if len(grads) != len(state.m):
        raise ValueError("gradient list does not match optimizer state")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient at optimizer step {state.step}")
    lr = state.learning_rate()
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params.arrays(), grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# -- checkpoints --------------------------------------------------------------
#
# A checkpoint is an .npz archive (readable by np.load) holding arrays
# W0..Wk, b0..bk and a JSON string "meta".  Members carry a fixed timestamp so
# identical parameters always produce identical bytes.

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def _write_member(zf: zipfile.ZipFile, name: str, array: np.ndarray) -> None:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.require(array, requirements='C'), allow_pickle=False)
    info = zipfile.ZipInfo(name + ".npy", date_time=_FIXED_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, buf.getvalue())


def save_checkpoint(path, params: MlpParams, meta: dict | None = None) -> Path:
    path = Path(path)
    meta = dict(meta or {})
    meta["format_version"] = CHECKPOINT_VERSION
    meta["layer_sizes"] = list(params.layer_sizes)
    meta["output_activation"] = params.output_activation
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        for k, (w, b) in enumerate(zip(params.weights, params.biases)):
            _write_member(zf, f"W{k}", w)
            _write_member(zf, f"b{k}", b)
        _write_member(zf, "meta", np.array(json.dumps(meta, sort_keys=True)))
    return path


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "meta" not in arrays:
        raise CheckpointError(f"{path}: missing metadata")
    try:
        meta = json.loads(str(arrays["meta"].reshape(-1)[0]))
    except (IndexError, ValueError) as exc:
        raise CheckpointError(f"{path}: unreadable metadata ({exc})") from exc
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version!r} (expected {CHECKPOINT_VERSION})")
    sizes = meta.get("layer_sizes")
    nlayers = len(sizes) - 1 if sizes else 0
    try:
        weights = [arrays[f"W{k}"] for k in range(nlayers)]
        biases = [arrays[f"b{k}"] for k in range(nlayers)]
        params = MlpParams(weights, biases, meta.get("output_activation", "identity"))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt parameter arrays ({exc})") from exc
    if list(params.layer_sizes) != list(sizes):
        raise CheckpointError(f"{path}: stored shapes {params.layer_sizes} disagree with metadata {sizes}")
    _validate_input_dim(path, params, meta)
    return params, meta


def _validate_input_dim(path, params: MlpParams, meta: dict) -> None:
    if meta.get("role", "model") != "model" or "features" not in meta or "n" not in meta:
        return
    from .features import output_dim

    expected = output_dim(meta["features"], int(meta["n"]), int(meta.get("top_k", 1)))
    if params.layer_sizes[0] != expected:
        raise CheckpointError(
            f"{path}: input dimension {params.layer_sizes[0]} does not fit features="
            f"{meta['features']} with n={meta['n']} (expected {expected})"
        )


# -- gradient verification ----------------------------------------------------


def _rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def gradient_check(params: MlpParams, x: np.ndarray, grad_output: np.ndarray, step: float = 1e-5) -> float:
    """Max relative error of backward() against central differences.

    Covers every weight, bias and input coordinate of the scalar
    ``sum(forward(x) * grad_output)``.
    """
    x = np.asarray(x, dtype=np.float64)
    gout = np.asarray(grad_output, dtype=np.float64)

    def objective(p, xx):
        return float(np.sum(predict(p, xx) * gout))

    _, trace = forward(params, x)
    gw, gb, gx = backward(params, trace, gout)
    worst = 0.0
    for arr, grad in zip(params.arrays(), [*gw, *gb]):
        numeric = np.empty_like(arr)
        flat = arr.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + step
            up = objective(params, x)
            flat[j] = keep - step
            down = objective(params, x)
            flat[j] = keep
            numeric.reshape(-1)[j] = (up - down) / (2 * step)
        worst = max(worst, _rel_err(grad, numeric))
    numeric_x = np.empty_like(x)
    for j in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        numeric_x[j] = (objective(params, xp) - objective(params, xm)) / (2 * step)
    return max(worst, _rel_err(gx, numeric_x))


def random_gradient_suite(nets: int, inputs: int, seed: int) -> float:
    """Worst relative error over random small networks (ReLU hidden layers)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(nets):
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(1, 7))] + [int(rng.integers(2, 9)) for _ in range(depth)] + [int(rng.integers(1, 4))]
        act = "sigmoid" if rng.random() < 0.5 else "identity"
        params = init_xavier(sizes, act, rng, bias_std=0.1)
        x = rng.normal(size=(inputs, sizes[0]))
        gout = rng.normal(size=(inputs, sizes[-1]))
        worst = max(worst, gradient_check(params, x, gout))
    return worst
