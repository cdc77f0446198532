"""MLP classifiers and the gradient-penalty training loop.

The trainer minimizes, over minibatch draws,

    mean cross-entropy + lam_grad * mean squared input-gradient norm,

optionally on Mixup-blended batches (per-sample convex combinations with a
reversed-batch partner).  Updates are Adam, followed by a multiplicative
weight decay, followed by an exponential moving average of the parameters;
the averaged weights are what evaluation uses.  All randomness flows from
one seed through named child streams, so runs repeat bit for bit on a
fixed backend.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _accel
from .autodiff import engine as eng
from .autodiff.graph import ComputationGraph, KernelHint

_ACTIVATIONS = ("tanh", "leaky_relu")

CHECKPOINT_MAGIC = b"WDRO"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of a fully connected classifier.

    ``layer_widths`` runs input first, class count last, hidden widths in
    between; ``(2, 32, 32, 4)`` is a two-hidden-layer net for 2-d features
    and 4 classes.
    """

    layer_widths: tuple[int, ...]
    activation: str = "tanh"
    leaky_slope: float = 0.01

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ValueError("need at least input and output widths")
        if any(int(w) != w or w < 1 for w in self.layer_widths):
            raise ValueError(f"widths must be positive integers: {self.layer_widths}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(
                f"activation {self.activation!r} not supported; "
                f"choose from {_ACTIVATIONS}"
            )
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    def param_shapes(self) -> tuple[tuple[int, ...], ...]:
        shapes = []
        for l in range(self.n_layers):
            shapes.append((self.layer_widths[l + 1], self.layer_widths[l]))
            shapes.append((self.layer_widths[l + 1],))
        return tuple(shapes)


def classifier_graph(spec: ModelSpec) -> ComputationGraph:
    """Differentiable cross-entropy loss of the classifier.

    The target slot takes a probability row (one-hot or Mixup-blended).
    The graph carries a kernel hint, so batch evaluation through
    :func:`wdro.objectives.training_objective` runs on the fast backend.
    """
    n_layers = spec.n_layers

    def builder(x, y, params):
        a = x
        for l in range(n_layers):
            w, b = params[2 * l], params[2 * l + 1]
            s = eng.add(eng.matvec(w, a), b)
            if l < n_layers - 1:
                if spec.activation == "tanh":
                    a = eng.tanh(s)
                else:
                    a = eng.leaky_relu(s, spec.leaky_slope)
            else:
                a = s
        return eng.softmax_cross_entropy(a, y)

    hint = KernelHint(
        widths=spec.layer_widths,
        activation=spec.activation,
        leaky_slope=spec.leaky_slope,
    )
    return ComputationGraph(
        x_dim=spec.input_dim,
        y_dim=spec.n_classes,
        param_shapes=spec.param_shapes(),
        builder=builder,
        name=f"mlp-{'-'.join(map(str, spec.layer_widths))}",
        kernel_hint=hint,
    )


def init_params(spec: ModelSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """Uniform weight init with variance balanced across fan-in and fan-out."""
    params = []
    for l in range(spec.n_layers):
        fan_out, fan_in = spec.layer_widths[l + 1], spec.layer_widths[l]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        params.append(np.zeros(fan_out))
    return params


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the training loop.

    ``total_examples`` divided by ``batch_size`` gives the step count
    (remainder dropped).  ``weight_decay`` is the per-step multiplicative
    shrink applied after the Adam update; ``ema_decay`` the averaging
    factor of the evaluation weights.  Mixup draws one Beta coefficient
    per sample and blends with the reversed batch.
    """

    total_examples: int = 50_000
    batch_size: int = 64
    learning_rate: float = 0.002
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lam_grad: float = 0.0
    mixup: bool = False
    mixup_beta: tuple[float, float] = (0.5, 0.5)
    weight_decay: float = 0.02
    ema_decay: float = 0.99
    seed: int = 0
    snapshots: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.total_examples < self.batch_size:
            raise ValueError("need at least one full batch of examples")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must be in [0, 1): {self.ema_decay}")
        if not 0.0 <= self.weight_decay < 1.0:
            raise ValueError(f"weight_decay must be in [0, 1): {self.weight_decay}")
        if self.lam_grad < 0.0:
            raise ValueError(f"lam_grad must be nonnegative: {self.lam_grad}")

    @property
    def n_steps(self) -> int:
        return self.total_examples // self.batch_size


class TrainingDivergence(RuntimeError):
    """Objective became non-finite; carries the offending step index."""

    def __init__(self, step: int, value: float):
        super().__init__(f"objective is {value!r} at step {step}")
        self.step = step
        self.value = value


@dataclass
class TrainHistory:
    """Per-step traces plus parameter snapshots along the run.

    ``mean_penalty`` holds the mean squared input-gradient norm whether or
    not it was penalized (the kernels report it for free), which is what
    the gradient-analysis command plots.  ``gamma_min`` is NaN on steps
    without Mixup.
    """

    objective: np.ndarray
    mean_loss: np.ndarray
    mean_penalty: np.ndarray
    gamma_min: np.ndarray
    snapshots: list[tuple[int, list[np.ndarray]]] = field(default_factory=list)


@dataclass
class TrainResult:
    spec: ModelSpec
    config: TrainConfig
    params: list[np.ndarray]
    ema_params: list[np.ndarray]
    history: TrainHistory

    @property
    def eval_params(self) -> list[np.ndarray]:
        """Weights used for prediction: the exponential moving average."""
        return self.ema_params


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"labels must be 1-d, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels.astype(np.int64)] = 1.0
    return out


def _snapshot_steps(n_steps: int, n_snapshots: int) -> list[int]:
    if n_snapshots <= 0:
        return []
    marks = [int(round(n_steps * (k + 1) / n_snapshots)) for k in range(n_snapshots)]
    marks = sorted({max(1, m) for m in marks})
    return marks


def train(
    features: np.ndarray,
    labels: np.ndarray,
    spec: ModelSpec,
    config: TrainConfig,
) -> TrainResult:
    """Run the training loop and return final, averaged, and traced state.

    ``features`` is (n, input_dim), ``labels`` integer classes.  Three
    independent RNG streams are spawned from ``config.seed``: weight init,
    batch sampling, Mixup coefficients.  Adding Mixup therefore does not
    shift which examples each batch draws.
    """
    features = np.ascontiguousarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != spec.input_dim:
        raise ValueError(
            f"features must be (n, {spec.input_dim}), got {features.shape}"
        )
    if features.shape[0] < 1:
        raise ValueError("empty training set")
    onehot = _one_hot(labels, spec.n_classes)
    if onehot.shape[0] != features.shape[0]:
        raise ValueError(
            f"{features.shape[0]} feature rows but {onehot.shape[0]} labels"
        )

    seed_init, seed_batch, seed_mix = np.random.SeedSequence(config.seed).spawn(3)
    rng_init = np.random.default_rng(seed_init)
    rng_batch = np.random.default_rng(seed_batch)
    rng_mix = np.random.default_rng(seed_mix)

    graph = classifier_graph(spec)
    params = init_params(spec, rng_init)
    ema = [p.copy() for p in params]
    adam_m = [np.zeros_like(p) for p in params]
    adam_v = [np.zeros_like(p) for p in params]

    n = features.shape[0]
    n_steps = config.n_steps
    trace_obj = np.empty(n_steps)
    trace_loss = np.empty(n_steps)
    trace_pen = np.empty(n_steps)
    trace_gamma = np.full(n_steps, np.nan)
    snapshots: list[tuple[int, list[np.ndarray]]] = []
    snap_at = set(_snapshot_steps(n_steps, config.snapshots))

    from .objectives import training_objective

    beta_a, beta_b = config.mixup_beta
    lr = config.learning_rate
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    shrink = 1.0 - config.weight_decay
    ema_d = config.ema_decay

    for step in range(n_steps):
        idx = rng_batch.integers(0, n, size=config.batch_size)
        xb = features[idx]
        yb = onehot[idx]
        if config.mixup:
            gam = rng_mix.beta(beta_a, beta_b, size=config.batch_size)
            trace_gamma[step] = gam.min()
            gcol = gam[:, None]
            xb = gcol * xb + (1.0 - gcol) * xb[::-1]
            yb = gcol * yb + (1.0 - gcol) * yb[::-1]

        obj, mean_loss, mean_pen, grads = training_objective(
            graph, xb, yb, params, config.lam_grad
        )
        if not np.isfinite(obj):
            raise TrainingDivergence(step, obj)
        trace_obj[step] = obj
        trace_loss[step] = mean_loss
        trace_pen[step] = mean_pen

        t = step + 1
        bias1 = 1.0 - b1 ** t
        bias2 = 1.0 - b2 ** t
        for i, g in enumerate(grads):
            adam_m[i] = b1 * adam_m[i] + (1.0 - b1) * g
            adam_v[i] = b2 * adam_v[i] + (1.0 - b2) * (g * g)
            step_dir = (adam_m[i] / bias1) / (np.sqrt(adam_v[i] / bias2) + eps)
            params[i] = (params[i] - lr * step_dir) * shrink
            ema[i] = ema_d * ema[i] + (1.0 - ema_d) * params[i]

        if t in snap_at:
            snapshots.append((t, [p.copy() for p in ema]))

    history = TrainHistory(
        objective=trace_obj,
        mean_loss=trace_loss,
        mean_penalty=trace_pen,
        gamma_min=trace_gamma,
        snapshots=snapshots,
    )
    return TrainResult(
        spec=spec, config=config, params=params, ema_params=ema, history=history
    )


def _hint(spec: ModelSpec) -> KernelHint:
    return KernelHint(
        widths=spec.layer_widths,
        activation=spec.activation,
        leaky_slope=spec.leaky_slope,
    )


def predict_logits(spec: ModelSpec, params: Sequence[np.ndarray], features) -> np.ndarray:
    features = np.ascontiguousarray(features, dtype=np.float64)
    return _accel.forward_logits(list(params), _hint(spec), features)


def predict_labels(spec: ModelSpec, params: Sequence[np.ndarray], features) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(predict_logits(spec, params, features), axis=1)


def evaluate_accuracy(spec, params, features, labels) -> float:
    pred = predict_labels(spec, params, features)
    return float(np.mean(pred == np.asarray(labels)))


def input_gradient_norms(
    spec: ModelSpec,
    params: Sequence[np.ndarray],
    features,
    labels,
    order: float = np.inf,
) -> np.ndarray:
    """Per-sample norm of the loss gradient in the feature coordinates.

    The default sup norm is the natural dual side of per-coordinate
    contamination; pass ``order=2`` for the Euclidean profile.
    """
    features = np.ascontiguousarray(features, dtype=np.float64)
    onehot = _one_hot(np.asarray(labels), spec.n_classes)
    grads = _accel.input_gradients(list(params), _hint(spec), features, onehot)
    if np.isinf(order):
        return np.max(np.abs(grads), axis=1)
    if order == 2:
        return np.sqrt(np.sum(grads * grads, axis=1))
    return np.sum(np.abs(grads) ** order, axis=1) ** (1.0 / order)


def save_checkpoint(
    path,
    spec: ModelSpec,
    params: Sequence[np.ndarray],
    extra: Optional[dict] = None,
) -> None:
    """Write weights in a fixed little-endian binary layout plus a JSON twin.

    Layout: magic ``WDRO``, u32 version, u32 width count, the widths as
    u32, u32 activation code, f64 leaky slope, then per layer the weight
    matrix (row-major f64) followed by the bias vector.  The sidecar
    ``<path>.json`` repeats the architecture and any ``extra`` metadata.
    """
    path = Path(path)
    act_code = _ACTIVATIONS.index(spec.activation)
    header = CHECKPOINT_MAGIC
    header += struct.pack("<II", CHECKPOINT_VERSION, len(spec.layer_widths))
    header += struct.pack(f"<{len(spec.layer_widths)}I", *spec.layer_widths)
    header += struct.pack("<Id", act_code, spec.leaky_slope)

    expected = spec.param_shapes()
    if tuple(np.shape(p) for p in params) != expected:
        raise ValueError(
            f"parameter shapes {[np.shape(p) for p in params]} do not match "
            f"spec shapes {list(expected)}"
        )
    body = b"".join(
        np.ascontiguousarray(p, dtype="<f8").tobytes() for p in params
    )
    path.write_bytes(header + body)

    sidecar = {
        "format": {"magic": CHECKPOINT_MAGIC.decode(), "version": CHECKPOINT_VERSION},
        "layer_widths": list(spec.layer_widths),
        "activation": spec.activation,
        "leaky_slope": spec.leaky_slope,
        "extra": extra or {},
    }
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )


def load_checkpoint(path) -> tuple[ModelSpec, list[np.ndarray], dict]:
    """Inverse of :func:`save_checkpoint`; validates magic, version, length."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(
            f"{path}: bad magic {raw[:4]!r} at byte 0, expected {CHECKPOINT_MAGIC!r}"
        )
    version, n_widths = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    widths = struct.unpack_from(f"<{n_widths}I", raw, offset)
    offset += 4 * n_widths
    act_code, slope = struct.unpack_from("<Id", raw, offset)
    offset += 12
    if act_code >= len(_ACTIVATIONS):
        raise ValueError(f"{path}: unknown activation code {act_code}")
    spec = ModelSpec(
        layer_widths=widths, activation=_ACTIVATIONS[act_code], leaky_slope=slope
    )

    params = []
    for shape in spec.param_shapes():
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(raw):
            raise ValueError(
                f"{path}: truncated at byte {len(raw)}, "
                f"needed {end} for parameter block {shape}"
            )
        block = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        params.append(block.reshape(shape).astype(np.float64))
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(
            f"{path}: {len(raw) - offset} trailing bytes after parameters"
        )

    sidecar_path = Path(str(path) + ".json")
    extra = {}
    if sidecar_path.exists():
        extra = json.loads(sidecar_path.read_text()).get("extra", {})
    return spec, params, extra
