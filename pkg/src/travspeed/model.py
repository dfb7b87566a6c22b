"""Conditional speed model: terrain class and commanded speed in, realized-speed PMF out.

The network is a plain numpy MLP (one-hot class + normalised command ->
64 -> 64 -> ``n_bins`` logits -> softmax) trained on the negative
log-likelihood of the realized-speed bin.  Backpropagation and Adam are
written out by hand so the gradient can be checked against finite
differences.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from travspeed.errors import EmptyCellError, FormatError, ParameterError, TrainingError
from travspeed.risk import SpeedPmf

HIDDEN = (64, 64)
LR_SCHEDULES = ("constant", "linear")
DATASET_HEADER = ("terrain_class", "commanded_speed", "realized_speed")


@dataclass(frozen=True)
class Sample:
    terrain_class: int
    commanded_speed: float
    realized_speed: float


@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.005
    batch_size: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    lr_schedule: str = "linear"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ParameterError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")


@dataclass
class MlpModel:
    """Weights ``W[i]`` have shape ``(fan_in, fan_out)``; inputs are row vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    n_classes: int
    s_max: float = 5.0
    history: list[float] = field(default_factory=list, compare=False)

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ParameterError("need one bias vector per weight matrix")
        dims = self.layer_dims
        if dims[0] != self.n_classes + 1:
            raise ParameterError(f"input width {dims[0]} != n_classes + 1 = {self.n_classes + 1}")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ParameterError(f"layer {i}: bias shape {b.shape} does not match {W.shape}")
            if i and W.shape[0] != self.weights[i - 1].shape[1]:
                raise ParameterError(f"layer {i}: fan-in {W.shape[0]} != previous fan-out")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_bins(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def initialise(
        cls, n_classes: int, n_bins: int = 10, s_max: float = 5.0, seed: int = 0, hidden=HIDDEN
    ) -> MlpModel:
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        dims = [n_classes + 1, *hidden, n_bins]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, n_classes, s_max)

    @classmethod
    def zeros(cls, n_classes: int, n_bins: int = 10, s_max: float = 5.0, hidden=HIDDEN) -> MlpModel:
        dims = [n_classes + 1, *hidden, n_bins]
        return cls(
            [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
            [np.zeros(b) for b in dims[1:]],
            n_classes,
            s_max,
        )

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> MlpModel:
        return MlpModel(
            [W.copy() for W in self.weights], [b.copy() for b in self.biases], self.n_classes, self.s_max,
            list(self.history),
        )


def encode(model: MlpModel, terrain: np.ndarray, commanded: np.ndarray) -> np.ndarray:
    terrain = np.asarray(terrain, dtype=np.int64).reshape(-1)
    commanded = np.asarray(commanded, dtype=np.float64).reshape(-1)
    X = np.zeros((terrain.size, model.n_classes + 1))
    X[np.arange(terrain.size), terrain] = 1.0
    X[:, -1] = commanded / model.s_max
    return X


def speed_bin(speed, n_bins: int, s_max: float):
    """Index of the equal-width bin holding ``speed``; the top edge folds into the last bin."""
    k = np.floor(np.asarray(speed, dtype=np.float64) * n_bins / s_max).astype(np.int64)
    return np.clip(k, 0, n_bins - 1)


def _forward(model: MlpModel, X: np.ndarray):
    acts = [X]
    h = X
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    logits = h @ model.weights[-1] + model.biases[-1]
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    log_probs = z - np.log(e.sum(axis=1, keepdims=True))
    return acts, probs, log_probs


def forward(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Softmax PMFs, one row per input row."""
    return _forward(model, X)[1]


def predict_pmf(model: MlpModel, terrain_class: int, commanded_speed: float) -> SpeedPmf:
    if not 0 <= terrain_class < model.n_classes:
        raise ParameterError(f"terrain class {terrain_class} outside [0, {model.n_classes})")
    if not 0.0 <= commanded_speed <= model.s_max:
        raise ParameterError(f"commanded speed {commanded_speed} outside [0, {model.s_max}]")
    probs = forward(model, encode(model, [terrain_class], [commanded_speed]))[0]
    return SpeedPmf(probs, model.s_max)


def loss_and_grads(model: MlpModel, X: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean NLL of the target bins and its gradient, ordered like :meth:`MlpModel.parameters`."""
    n = X.shape[0]
    acts, probs, log_probs = _forward(model, X)
    loss = -float(log_probs[np.arange(n), y].mean())
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads: list[np.ndarray] = []
    for i in range(len(model.weights) - 1, -1, -1):
        gW = acts[i].T @ delta
        gb = delta.sum(axis=0)
        grads[:0] = [gW, gb]
        if i:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return loss, grads


def _arrays(dataset, model: MlpModel) -> tuple[np.ndarray, np.ndarray]:
    terrain = np.array([s.terrain_class for s in dataset], dtype=np.int64)
    cmd = np.array([s.commanded_speed for s in dataset], dtype=np.float64)
    real = np.array([s.realized_speed for s in dataset], dtype=np.float64)
    if terrain.min() < 0 or terrain.max() >= model.n_classes:
        raise ParameterError("terrain class outside the model's range")
    for name, v in (("commanded", cmd), ("realized", real)):
        if not np.all((v >= 0) & (v <= model.s_max)):
            raise ParameterError(f"{name} speed outside [0, {model.s_max}]")
    return encode(model, terrain, cmd), speed_bin(real, model.n_bins, model.s_max)


def dataset_loss(model: MlpModel, dataset: list[Sample]) -> float:
    X, y = _arrays(dataset, model)
    return loss_and_grads(model, X, y)[0]


def train(
    dataset: list[Sample],
    config: TrainConfig | None = None,
    n_classes: int | None = None,
    n_bins: int = 10,
    s_max: float = 5.0,
) -> MlpModel:
    """Fit the MLP with minibatch Adam.  Epoch-mean losses land in ``model.history``."""
    config = config or TrainConfig()
    if not dataset:
        raise TrainingError("cannot train on an empty dataset")
    if n_classes is None:
        n_classes = max(s.terrain_class for s in dataset) + 1
    model = MlpModel.initialise(n_classes, n_bins, s_max, seed=config.seed)
    X, y = _arrays(dataset, model)
    rng = np.random.default_rng(config.seed + 1)
    # overflow shows up as a non-finite loss, which is reported with context
    with np.errstate(over="ignore", invalid="ignore"):
        _adam_epochs(model, X, y, config, rng)
    return model


def _adam_epochs(model: MlpModel, X: np.ndarray, y: np.ndarray, config: TrainConfig, rng) -> None:
    """Run the Adam epochs in place on ``model``."""
    params = model.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.learning_rate
    t = 0
    n_steps = config.epochs * -(-len(X) // config.batch_size)
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(model, X[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch}, step {t}; "
                    f"max |param| = {max(float(np.abs(p).max()) for p in params):.3g}"
                )
            total += loss * len(idx)
            step_lr = lr * (1.0 - t / n_steps) if config.lr_schedule == "linear" else lr
            t += 1
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= b1
                mi += (1 - b1) * g
                vi *= b2
                vi += (1 - b2) * g * g
                m_hat = mi / (1 - b1**t)
                v_hat = vi / (1 - b2**t)
                p -= step_lr * m_hat / (np.sqrt(v_hat) + eps)
        model.history.append(total / len(X))


def histogram_estimate(
    dataset: list[Sample],
    terrain_class: int,
    cmd_bin: int,
    n_layers: int = 10,
    n_bins: int = 10,
    s_max: float = 5.0,
) -> SpeedPmf:
    """Empirical realized-speed PMF of samples in one (class, commanded-speed layer) cell."""
    counts = np.zeros(n_bins)
    for s in dataset:
        if s.terrain_class != terrain_class:
            continue
        if speed_bin(s.commanded_speed, n_layers, s_max) != cmd_bin:
            continue
        counts[speed_bin(s.realized_speed, n_bins, s_max)] += 1
    if counts.sum() == 0:
        raise EmptyCellError(f"no samples for class {terrain_class}, commanded-speed bin {cmd_bin}")
    return SpeedPmf(counts / counts.sum(), s_max)


def histogram_tv(
    model: MlpModel, dataset: list[Sample], n_layers: int = 10, min_samples: int = 200
) -> dict[tuple[int, int], float]:
    """Total-variation distance to the histogram for every well-populated cell.

    The histogram pools every command inside a layer, so the model is compared
    through its PMF averaged over those same logged commands rather than at
    the layer center.  Returns ``{(class, layer): tv}`` for cells holding at
    least ``min_samples`` samples.
    """
    cls = np.array([s.terrain_class for s in dataset])
    cmd = np.array([s.commanded_speed for s in dataset])
    layer = np.minimum((cmd * n_layers / model.s_max).astype(int), n_layers - 1)
    out = {}
    for c in range(model.n_classes):
        for k in range(n_layers):
            sel = (cls == c) & (layer == k)
            if sel.sum() < min_samples:
                continue
            avg = forward(model, encode(model, cls[sel], cmd[sel])).mean(axis=0)
            hist = histogram_estimate(dataset, c, k, n_layers, model.n_bins, model.s_max)
            out[(c, k)] = 0.5 * float(np.abs(avg - hist.probs).sum())
    return out


def _relu_pattern(model: MlpModel, X: np.ndarray) -> list[np.ndarray]:
    return [a > 0 for a in _forward(model, X)[0][1:]]


def _extended_loss(model: MlpModel, X: np.ndarray, y: np.ndarray):
    """Mean NLL kept in the parameters' own precision (no cast to float)."""
    log_probs = _forward(model, X)[2]
    return -log_probs[np.arange(X.shape[0]), y].mean()


def gradient_check(
    model: MlpModel,
    batch: list[Sample],
    n_params: int = 100,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central differences on random parameters.

    Relative error is ``|a - n| / max(|a| + |n|, 1e-10)``.  The differences
    are taken in extended precision (``np.longdouble``): in float64 the
    rounding error of a loss near 2 divided by ``2 * step`` is ~1e-11, which
    is already 1e-3 relative for the ~1e-8 gradients of barely active units.
    A parameter whose +/- ``step`` perturbation flips any ReLU (a kink inside
    the stencil, where the loss is not differentiable) is replaced by another
    random draw.
    """
    if not batch:
        raise ParameterError("gradient check needs a non-empty batch")
    X, y = _arrays(batch, model)
    _, grads = loss_and_grads(model, X, y)
    wide = model.copy()
    wide.weights = [w.astype(np.longdouble) for w in wide.weights]
    wide.biases = [b.astype(np.longdouble) for b in wide.biases]
    Xw = X.astype(np.longdouble)
    base = _relu_pattern(wide, Xw)
    params = wide.parameters()
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    candidates = rng.permutation(total)
    worst = 0.0
    checked = 0
    for f in candidates:
        if checked >= n_params:
            break
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        j = np.unravel_index(int(f - offsets[i]), params[i].shape)
        orig = params[i][j]
        params[i][j] = orig + step
        up = _extended_loss(wide, Xw, y)
        kink = any((a != b).any() for a, b in zip(_relu_pattern(wide, Xw), base))
        params[i][j] = orig - step
        down = _extended_loss(wide, Xw, y)
        kink = kink or any((a != b).any() for a, b in zip(_relu_pattern(wide, Xw), base))
        params[i][j] = orig
        if kink:
            continue
        # the perturbation actually applied, after rounding orig +/- step
        numeric = float((up - down) / ((orig + step) - (orig - step)))
        analytic = float(grads[i][j])
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-10))
        checked += 1
    return worst


# ------------------------------------------------------------------------ file I/O


def save_model(model: MlpModel, path: str | Path) -> None:
    """JSON manifest: layer dims plus row-major weights (shortest round-trip float repr)."""
    doc = {
        "format": "travspeed-mlp/1",
        "n_classes": model.n_classes,
        "s_max": model.s_max,
        "layer_dims": model.layer_dims,
        "activation": "relu",
        "output": "softmax",
        "layers": [
            {"weights": W.ravel().tolist(), "biases": b.tolist()}
            for W, b in zip(model.weights, model.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc))


def _reject_constant(name: str):
    raise FormatError(f"non-finite value {name} in model file")


def load_model(path: str | Path) -> MlpModel:
    text = Path(path).read_text()
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        dims = [int(d) for d in doc["layer_dims"]]
        layers = doc["layers"]
        n_classes = int(doc["n_classes"])
        s_max = float(doc["s_max"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: missing or malformed header field ({exc})") from exc
    if len(layers) != len(dims) - 1:
        raise FormatError(f"{path}: layer_dims lists {len(dims) - 1} layers, file has {len(layers)}")
    weights, biases = [], []
    for i, (layer, fan_in, fan_out) in enumerate(zip(layers, dims[:-1], dims[1:])):
        for key, size in (("weights", fan_in * fan_out), ("biases", fan_out)):
            values = layer.get(key) if isinstance(layer, dict) else None
            if not isinstance(values, list) or len(values) != size:
                raise FormatError(f"{path}: layers[{i}].{key} should hold {size} numbers")
            arr = np.array(values, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise FormatError(f"{path}: layers[{i}].{key} contains non-finite values")
        weights.append(np.array(layer["weights"], dtype=np.float64).reshape(fan_in, fan_out))
        biases.append(np.array(layer["biases"], dtype=np.float64))
    try:
        return MlpModel(weights, biases, n_classes, s_max)
    except ParameterError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_pmf_table(model: MlpModel, path: str | Path, n_layers: int = 10) -> None:
    """Predicted PMF at every (class, layer center) as CSV: ``class,layer,commanded_speed,p0..``."""
    speeds = (np.arange(n_layers) + 0.5) * model.s_max / n_layers
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class", "layer", "commanded_speed"] + [f"p{i}" for i in range(model.n_bins)])
        for c in range(model.n_classes):
            for k, s in enumerate(speeds):
                probs = predict_pmf(model, c, float(s)).probs
                writer.writerow([c, k, repr(float(s))] + [repr(float(p)) for p in probs])


def save_dataset(samples: list[Sample], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_HEADER)
        for s in samples:
            writer.writerow([s.terrain_class, repr(float(s.commanded_speed)), repr(float(s.realized_speed))])


def load_dataset(path: str | Path) -> list[Sample]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != DATASET_HEADER:
            raise FormatError(f"{path}: line 1: expected header {','.join(DATASET_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                c, cmd, real = row
                out.append(Sample(int(c), float(cmd), float(real)))
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    return out
