"""Dense feedforward networks written directly on numpy.

Two fixed architectures share this machinery:

* regression: 20 -> 150 -> 200 -> 3 (swish, swish, linear), trained with
  mean-absolute error on z-scored targets; predicts (x_c, y_c, m_c).
* classification: 20 -> 150 -> 200 -> (100 || 100), a shared trunk with two
  parallel 100-way softmax blocks over 5 m position bins, trained with
  summed categorical cross entropy; predicts (x_c, y_c) via the
  probability-weighted bin midpoints.

Backpropagation, the Nadam optimizer, and the losses are implemented here;
training is single-threaded and bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field

import numpy as np

from .datagen import Normalizer
from .errors import ConfigError, ShapeError, TrainingError
from .fileio import read_json, write_json
from .seeds import child_rng

REGRESSION_WIDTHS = (20, 150, 200, 3)
CLASSIFICATION_WIDTHS = (20, 150, 200, 200)  # output = two 100-way blocks
N_BINS = 100

LOG_CLAMP = 1e-12  # floor inside cross-entropy logs


def sigmoid(x):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


def swish(x):
    """x * sigmoid(x); smooth, non-monotone below zero, saturating."""
    x = np.asarray(x, dtype=float)
    out = x * sigmoid(x)
    return float(out) if out.ndim == 0 else out


def swish_grad(x):
    s = sigmoid(np.asarray(x, dtype=float))
    return s * (1.0 + x * (1.0 - s))


def softmax(v):
    """Stable softmax along the last axis; entries positive, rows sum to 1."""
    v = np.asarray(v, dtype=float)
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class DenseLayer:
    """Fully connected layer: weights (fan_in, fan_out), biases (fan_out,).

    `softmax_blocks` > 1 splits the output into equal blocks and applies
    softmax to each block independently (used by the two-headed
    classification output).
    """

    weights: np.ndarray
    biases: np.ndarray
    activation: str  # swish | linear | softmax
    softmax_blocks: int = 1


@dataclass
class MlpModel:
    kind: str  # regression3 | classification2x100
    layers: list
    normalizer: Normalizer
    seed: int
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BinGrid:
    """Uniform position bins decoding the classification heads.

    100 bins per coordinate: x over [-500, 0] m, y over [-250, 250] m,
    5 m wide each.
    """

    x_edges: np.ndarray
    y_edges: np.ndarray

    @property
    def x_midpoints(self) -> np.ndarray:
        return 0.5 * (self.x_edges[:-1] + self.x_edges[1:])

    @property
    def y_midpoints(self) -> np.ndarray:
        return 0.5 * (self.y_edges[:-1] + self.y_edges[1:])

    def onehot(self, targets: np.ndarray) -> np.ndarray:
        """(N, >=2) raw targets -> (N, 2, 100) one-hot bin labels."""
        targets = np.atleast_2d(targets)
        out = np.zeros((len(targets), 2, N_BINS))
        for block, edges in enumerate((self.x_edges, self.y_edges)):
            width = edges[1] - edges[0]
            idx = np.clip(((targets[:, block] - edges[0]) / width).astype(int), 0, N_BINS - 1)
            out[np.arange(len(targets)), block, idx] = 1.0
        return out


def default_bin_grid() -> BinGrid:
    return BinGrid(x_edges=np.linspace(-500.0, 0.0, N_BINS + 1),
                   y_edges=np.linspace(-250.0, 250.0, N_BINS + 1))


@dataclass
class TrainConfig:
    epochs: int
    learning_rate: float = 1e-3
    batch_size: int = 128
    loss: str = "mae"  # mae | cce
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")


def _he_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _build_layers(widths, activations, blocks, seed):
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        rng = child_rng(seed, 0, i)
        layers.append(DenseLayer(
            weights=_he_uniform(rng, n_in, n_out),
            biases=np.zeros(n_out),
            activation=activations[i],
            softmax_blocks=blocks[i],
        ))
    return layers


def init_regression_model(seed: int, normalizer: Normalizer) -> MlpModel:
    layers = _build_layers(REGRESSION_WIDTHS, ("swish", "swish", "linear"), (1, 1, 1), seed)
    return MlpModel(kind="regression3", layers=layers, normalizer=normalizer, seed=seed)


def init_classification_model(seed: int, normalizer: Normalizer) -> MlpModel:
    layers = _build_layers(CLASSIFICATION_WIDTHS, ("swish", "swish", "softmax"), (1, 1, 2), seed)
    return MlpModel(kind="classification2x100", layers=layers, normalizer=normalizer, seed=seed)


def _apply_activation(layer: DenseLayer, z: np.ndarray) -> np.ndarray:
    if layer.activation == "swish":
        return z * sigmoid(z)
    if layer.activation == "linear":
        return z
    if layer.activation == "softmax":
        if layer.softmax_blocks == 1:
            return softmax(z)
        blocks = z.reshape(z.shape[0], layer.softmax_blocks, -1)
        return softmax(blocks).reshape(z.shape)
    raise ConfigError(f"unknown activation {layer.activation!r}")


def _forward_cached(layers, x: np.ndarray):
    """Returns (output, caches); caches hold each layer's input and
    pre-activation for backprop."""
    caches = []
    h = x
    for layer in layers:
        z = h @ layer.weights + layer.biases
        caches.append((h, z))
        h = _apply_activation(layer, z)
    return h, caches


def forward(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Evaluate the network on already-normalized features.

    Accepts one feature vector or a batch; returns the raw network output
    (normalized units for regression, block probabilities for
    classification).
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[1] != model.layers[0].weights.shape[0]:
        raise ShapeError(
            f"expected {model.layers[0].weights.shape[0]} features, got {x.shape[1]}"
        )
    out, _ = _forward_cached(model.layers, x)
    return out[0] if np.asarray(features).ndim == 1 else out


def mae_loss(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Mean absolute error over all entries."""
    y, y_hat = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ShapeError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    return float(np.mean(np.abs(y - y_hat)))


def cce_loss(onehots: np.ndarray, probs: np.ndarray) -> float:
    """Categorical cross entropy, averaged over rows and summed over any
    leading class-block axes; probabilities are clamped at 1e-12."""
    onehots, probs = np.asarray(onehots, dtype=float), np.asarray(probs, dtype=float)
    if onehots.shape != probs.shape:
        raise ShapeError(f"shape mismatch {onehots.shape} vs {probs.shape}")
    n = onehots.shape[0] if onehots.ndim > 1 else 1
    return float(-(onehots * np.log(np.maximum(probs, LOG_CLAMP))).sum() / n)


def backward(model: MlpModel, x: np.ndarray, y: np.ndarray, loss: str):
    """Loss value and gradients for one batch.

    `x` is normalized features (B, 20); `y` is z-scored targets (B, 3) for
    MAE or one-hot labels (B, 2, 100) for CCE. Returns
    (loss, [(dW, db), ...]) aligned with model.layers. The MAE subgradient
    at zero residual is taken as 0; the CCE gradient at the softmax inputs
    is probs - onehots.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out, caches = _forward_cached(model.layers, x)
    n = x.shape[0]

    if loss == "mae":
        y = np.asarray(y, dtype=float)
        value = mae_loss(y, out)
        delta = np.sign(out - y) / y.size
    elif loss == "cce":
        probs = out.reshape(n, model.layers[-1].softmax_blocks, -1)
        labels = np.asarray(y, dtype=float)
        value = cce_loss(labels, probs)
        delta = (probs - labels).reshape(n, -1) / n
    else:
        raise ConfigError(f"unknown loss {loss!r}")

    return value, _backprop(model.layers, caches, delta)


def _backprop(layers, caches, delta):
    """Gradients [(dW, db), ...] given the loss gradient at the output.

    For softmax layers `delta` must already be the gradient at the
    pre-softmax logits (softmax is always fused with its loss here).
    """
    grads = [None] * len(layers)
    for i in reversed(range(len(layers))):
        layer = layers[i]
        h_in, z = caches[i]
        if layer.activation == "swish":
            delta = delta * swish_grad(z)
        # linear: delta unchanged.
        grads[i] = (h_in.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = delta @ layer.weights.T
    return grads


@dataclass
class NadamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "NadamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def nadam_step(params, grads, state: NadamState, cfg: TrainConfig):
    """One Nesterov-accelerated adaptive-moment update, in place.

    Uses the constant-momentum form: the bias-corrected first moment is
    evaluated one step ahead (1 - beta1^(t+1)) and combined with the
    bias-corrected current gradient.
    """
    state.t += 1
    t = state.t
    b1, b2 = cfg.beta1, cfg.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** (t + 1))
        g_hat = g / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= cfg.learning_rate * (b1 * m_hat + (1.0 - b1) * g_hat) / (np.sqrt(v_hat) + cfg.eps_opt)
    return params, state


def _model_params(model: MlpModel):
    params = []
    for layer in model.layers:
        params.extend((layer.weights, layer.biases))
    return params


def _prepare_targets(model, dataset, bins):
    if model.kind == "regression3":
        return model.normalizer.apply_targets(dataset.targets)
    return bins.onehot(dataset.targets)


def train(model: MlpModel, train_ds, val_ds, cfg: TrainConfig, bins: BinGrid | None = None):
    """Mini-batch training with per-epoch reshuffling.

    Datasets carry raw features/targets; normalization (and one-hot
    encoding for classification) happens here using the model's fitted
    normalizer. Validation loss is recorded every epoch but never feeds
    back into training. Returns (model, history).
    """
    bins = bins or default_bin_grid()
    loss = "mae" if model.kind == "regression3" else "cce"
    x_train = model.normalizer.apply_features(train_ds.features)
    y_train = _prepare_targets(model, train_ds, bins)
    x_val = model.normalizer.apply_features(val_ds.features)
    y_val = _prepare_targets(model, val_ds, bins)

    params = _model_params(model)
    state = NadamState.for_params(params)
    history = {"train_loss": [], "val_loss": []}
    n = len(x_train)

    for epoch in range(cfg.epochs):
        order = child_rng(cfg.seed, 1, epoch).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            value, grads = backward(model, x_train[idx], y_train[idx], loss)
            if not np.isfinite(value):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            flat = []
            for dw, db in grads:
                flat.extend((dw, db))
            nadam_step(params, flat, state, cfg)
            total += value * len(idx)
        history["train_loss"].append(total / n)

        val_out, _ = _forward_cached(model.layers, x_val)
        if loss == "mae":
            history["val_loss"].append(mae_loss(y_val, val_out))
        else:
            history["val_loss"].append(
                cce_loss(y_val, val_out.reshape(len(x_val), 2, N_BINS)))
    model.meta["train_config"] = {
        "epochs": cfg.epochs, "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size, "loss": loss, "seed": cfg.seed,
    }
    return model, history


def binned_expectation(probs: np.ndarray, midpoints: np.ndarray):
    """Probability-weighted average of bin midpoints along the last axis."""
    probs = np.asarray(probs, dtype=float)
    return probs @ np.asarray(midpoints, dtype=float)


def predict(model: MlpModel, features_raw: np.ndarray):
    """Network prediction from raw (unnormalized) features.

    Regression: (N, 3) in meters/grams. Classification: (N, 2, 100) block
    probabilities.
    """
    x = np.atleast_2d(np.asarray(features_raw, dtype=float))
    out = forward(model, model.normalizer.apply_features(x))
    if model.kind == "regression3":
        return model.normalizer.invert_targets(out)
    return out.reshape(len(x), 2, N_BINS)


def decode_location(probs: np.ndarray, bins: BinGrid | None = None) -> np.ndarray:
    """(N, 2, 100) block probabilities -> (N, 2) expected (x, y) in meters."""
    bins = bins or default_bin_grid()
    probs = np.asarray(probs, dtype=float)
    x = binned_expectation(probs[..., 0, :], bins.x_midpoints)
    y = binned_expectation(probs[..., 1, :], bins.y_midpoints)
    return np.stack([x, y], axis=-1)


def evaluate(model: MlpModel, test_ds, bins: BinGrid | None = None, per_row: bool = False) -> dict:
    """Mean Euclidean location error (m) and, for regression, mass MAE (g)."""
    bins = bins or default_bin_grid()
    if model.kind == "regression3":
        pred = predict(model, test_ds.features)
        loc = pred[:, :2]
        mass_err = np.abs(pred[:, 2] - test_ds.targets[:, 2])
    else:
        loc = decode_location(predict(model, test_ds.features), bins)
        mass_err = None
    loc_err = np.hypot(loc[:, 0] - test_ds.targets[:, 0], loc[:, 1] - test_ds.targets[:, 1])
    report = {
        "mean_location_error_m": float(loc_err.mean()),
        "mass_mae_g": None if mass_err is None else float(mass_err.mean()),
        "n_rows": len(test_ds),
    }
    if per_row:
        report["location_error_m"] = loc_err.tolist()
        if mass_err is not None:
            report["mass_error_g"] = mass_err.tolist()
    return report


def save_model(path, model: MlpModel) -> None:
    """Single-file JSON container: architecture + normalizer header and a
    base64 little-endian float64 parameter block."""
    blob = np.concatenate([p.ravel() for p in _model_params(model)])
    header = {
        "format_version": 1,
        "kind": model.kind,
        "seed": model.seed,
        "layers": [
            {"fan_in": int(l.weights.shape[0]), "fan_out": int(l.weights.shape[1]),
             "activation": l.activation, "softmax_blocks": l.softmax_blocks}
            for l in model.layers
        ],
        "normalizer": model.normalizer.to_dict(),
        "meta": model.meta,
        "params_b64": base64.b64encode(blob.astype("<f8").tobytes()).decode("ascii"),
    }
    write_json(path, header)


def load_model(path) -> MlpModel:
    header = read_json(path)
    if header.get("format_version") != 1:
        raise ConfigError(f"unsupported model format in {path}")
    if header["kind"] not in ("regression3", "classification2x100"):
        raise ConfigError(f"not a deterministic MLP model file: kind={header['kind']!r}")
    blob = np.frombuffer(base64.b64decode(header["params_b64"]), dtype="<f8")
    layers = []
    offset = 0
    for spec in header["layers"]:
        n_in, n_out = spec["fan_in"], spec["fan_out"]
        w = blob[offset:offset + n_in * n_out].reshape(n_in, n_out).copy()
        offset += n_in * n_out
        b = blob[offset:offset + n_out].copy()
        offset += n_out
        layers.append(DenseLayer(weights=w, biases=b, activation=spec["activation"],
                                 softmax_blocks=spec["softmax_blocks"]))
    model = MlpModel(kind=header["kind"], layers=layers,
                     normalizer=Normalizer.from_dict(header["normalizer"]),
                     seed=header["seed"], meta=header.get("meta", {}))
    return model
