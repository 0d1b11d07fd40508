"""Mean-field Gaussian variational Bayesian MLP.

Every weight and bias of the regression architecture (20 -> 150 -> 200 -> 3)
carries an independent Gaussian posterior N(mu_i, sigma_i^2) with
sigma_i = softplus(rho_i) and a standard-normal prior. Training minimizes
the negative evidence lower bound

    sum_batch 0.5 * (y - f_w(x))^2   (unit-variance Gaussian likelihood
                                      on z-scored targets, + constant)
  + (batch_size / n_train) * KL(q || prior)

with reparameterized weights w = mu + sigma * eps, eps ~ N(0, 1), one
weight sample per batch. Prediction samples fresh weights per call, which
is what turns the trained network into a posterior-density generator.
"""

from __future__ import annotations

import base64
import csv
from dataclasses import dataclass, field

import numpy as np

from .datagen import Normalizer, features_from_counts
from .errors import ConfigError, DomainError, TrainingError
from .fileio import fmt, read_json, write_json
from .nn import (
    DenseLayer,
    NadamState,
    TrainConfig,
    _backprop,
    _forward_cached,
    nadam_step,
    sigmoid,
)
from .seeds import child_rng
from .sensing import PhysicsConstants, expected_array_for_scenario
from .transport import GridConfig, Scenario

BNN_WIDTHS = (20, 150, 200, 3)
BNN_ACTIVATIONS = ("swish", "swish", "linear")

INIT_SIGMA = 0.05  # initial posterior std, softplus(rho_init)

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_CHUNK = 64  # rows per block in batched stochastic prediction


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    """rho with softplus(rho) = y, for y > 0."""
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


@dataclass
class VariationalLayer:
    """Posterior means and pre-softplus spreads for one dense layer."""

    w_mu: np.ndarray
    w_rho: np.ndarray
    b_mu: np.ndarray
    b_rho: np.ndarray
    activation: str


@dataclass
class VariationalMlpModel:
    layers: list
    normalizer: Normalizer
    seed: int
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PosteriorSampleSet:
    """Predicted (x_c, y_c, m_c) draws from repeated stochastic evaluation."""

    samples: np.ndarray  # (M, 3)
    tag: str             # epistemic | epistemic+aleatoric
    seed: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != 3 or len(samples) < 1:
            raise DomainError("sample set must be (M, 3) with M >= 1")
        if not np.isfinite(samples).all():
            raise DomainError("sample set contains non-finite entries")
        object.__setattr__(self, "samples", samples)


def init_bnn(seed: int, normalizer: Normalizer) -> VariationalMlpModel:
    """Means initialized like the deterministic net (He-uniform, zero bias);
    spreads start small so early training is dominated by the data fit."""
    rho0 = float(inv_softplus(INIT_SIGMA))
    layers = []
    for i, (n_in, n_out) in enumerate(zip(BNN_WIDTHS[:-1], BNN_WIDTHS[1:])):
        rng = child_rng(seed, 0, i)
        limit = np.sqrt(6.0 / n_in)
        layers.append(VariationalLayer(
            w_mu=rng.uniform(-limit, limit, size=(n_in, n_out)),
            w_rho=np.full((n_in, n_out), rho0),
            b_mu=np.zeros(n_out),
            b_rho=np.full(n_out, rho0),
            activation=BNN_ACTIVATIONS[i],
        ))
    return VariationalMlpModel(layers=layers, normalizer=normalizer, seed=seed)


def draw_eps(model: VariationalMlpModel, rng: np.random.Generator):
    """One standard-normal draw per posterior parameter."""
    return [(rng.standard_normal(l.w_mu.shape), rng.standard_normal(l.b_mu.shape))
            for l in model.layers]


def sample_weights(model: VariationalMlpModel, rng: np.random.Generator | None = None,
                   eps=None):
    """One realized deterministic network, w = mu + softplus(rho) * eps.

    Returns (layers, eps) where `layers` are plain dense layers usable by
    the deterministic forward pass and `eps` records the noise for
    reparameterized gradients. Pass `eps` to reuse a frozen draw.
    """
    if eps is None:
        if rng is None:
            raise ConfigError("sample_weights needs an rng or a frozen eps")
        eps = draw_eps(model, rng)
    realized = []
    for layer, (ew, eb) in zip(model.layers, eps):
        realized.append(DenseLayer(
            weights=layer.w_mu + softplus(layer.w_rho) * ew,
            biases=layer.b_mu + softplus(layer.b_rho) * eb,
            activation=layer.activation,
        ))
    return realized, eps


def kl_to_prior(model: VariationalMlpModel) -> float:
    """KL(q || N(0, 1)) summed over every weight and bias:
    sum 0.5 * (mu^2 + sigma^2 - 1 - ln sigma^2)."""
    total = 0.0
    for layer in model.layers:
        for mu, rho in ((layer.w_mu, layer.w_rho), (layer.b_mu, layer.b_rho)):
            sigma = softplus(rho)
            total += 0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - 2.0 * np.log(sigma))
    return float(total)


def elbo_loss(model: VariationalMlpModel, x: np.ndarray, y: np.ndarray, n_total: int,
              rng: np.random.Generator | None = None, eps=None) -> float:
    """Negative single-sample ELBO estimate for one normalized batch.

    Data term: unit-variance Gaussian negative log-likelihood of the batch
    targets under one sampled realization (summed over the batch). KL term:
    scaled by batch_size / n_total so a full epoch accounts for exactly one
    KL(q || prior).
    """
    value, _ = _elbo_and_grads(model, np.atleast_2d(x), np.atleast_2d(y), n_total,
                               rng=rng, eps=eps, want_grads=False)
    return value


def _elbo_and_grads(model, x, y, n_total, rng=None, eps=None, want_grads=True):
    realized, eps = sample_weights(model, rng=rng, eps=eps)
    out, caches = _forward_cached(realized, x)
    resid = out - y
    nll = 0.5 * np.sum(resid * resid) + resid.size * _HALF_LOG_2PI
    kl_weight = len(x) / n_total
    value = float(nll + kl_weight * kl_to_prior(model))
    if not want_grads:
        return value, None

    data_grads = _backprop(realized, caches, resid)
    grads = []
    for layer, (dw, db), (ew, eb) in zip(model.layers, data_grads, eps):
        for mu, rho, d, e in ((layer.w_mu, layer.w_rho, dw, ew),
                              (layer.b_mu, layer.b_rho, db, eb)):
            sigma = softplus(rho)
            gate = sigmoid(rho)  # d sigma / d rho
            grads.append(d + kl_weight * mu)                                  # d/d mu
            grads.append((d * e + kl_weight * (sigma - 1.0 / sigma)) * gate)  # d/d rho
    return value, grads


def train_bnn(model: VariationalMlpModel, train_ds, val_ds, cfg: TrainConfig):
    """Nadam on (mu, rho) with one reparameterized weight sample per batch.

    Shuffling mirrors the deterministic trainer; the per-batch noise comes
    from its own seeded stream. Validation NLL (per row, fresh weight
    sample per epoch) is logged but never steers training.
    Returns (model, history).
    """
    x_train = model.normalizer.apply_features(train_ds.features)
    y_train = model.normalizer.apply_targets(train_ds.targets)
    x_val = model.normalizer.apply_features(val_ds.features)
    y_val = model.normalizer.apply_targets(val_ds.targets)
    n = len(x_train)

    # grads arrive ordered (w_mu, w_rho, b_mu, b_rho) per layer; params must match
    params = []
    for layer in model.layers:
        params.extend((layer.w_mu, layer.w_rho, layer.b_mu, layer.b_rho))
    state = NadamState.for_params(params)
    rng_eps = child_rng(cfg.seed, 2)
    history = {"train_loss": [], "val_nll": []}

    for epoch in range(cfg.epochs):
        order = child_rng(cfg.seed, 1, epoch).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            value, grads = _elbo_and_grads(model, x_train[idx], y_train[idx], n,
                                           rng=rng_eps)
            if not np.isfinite(value):
                raise TrainingError(f"negative ELBO diverged at epoch {epoch}")
            nadam_step(params, grads, state, cfg)
            total += value
        history["train_loss"].append(total / n)

        realized, _ = sample_weights(model, rng=child_rng(cfg.seed, 3, epoch))
        val_out, _ = _forward_cached(realized, x_val)
        val_nll = 0.5 * np.mean(np.sum((val_out - y_val) ** 2, axis=1)) \
            + y_val.shape[1] * _HALF_LOG_2PI
        history["val_nll"].append(float(val_nll))
    model.meta["train_config"] = {
        "epochs": cfg.epochs, "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size, "loss": "elbo", "seed": cfg.seed,
    }
    return model, history


def predict_stochastic(model: VariationalMlpModel, features_raw: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """One stochastic prediction (x_c m, y_c m, m_c g) for one feature row."""
    realized, _ = sample_weights(model, rng=rng)
    xn = model.normalizer.apply_features(np.atleast_2d(np.asarray(features_raw, dtype=float)))
    out, _ = _forward_cached(realized, xn)
    return model.normalizer.invert_targets(out)[0]


def predict_mean(model: VariationalMlpModel, features_raw: np.ndarray) -> np.ndarray:
    """Deterministic prediction through the posterior means (sigma -> 0)."""
    realized = [DenseLayer(weights=l.w_mu, biases=l.b_mu, activation=l.activation)
                for l in model.layers]
    xn = model.normalizer.apply_features(np.atleast_2d(np.asarray(features_raw, dtype=float)))
    out, _ = _forward_cached(realized, xn)
    return model.normalizer.invert_targets(out)


def predict_stochastic_batch(model: VariationalMlpModel, features_raw: np.ndarray,
                             seed) -> np.ndarray:
    """Independent per-row weight draws, evaluated in fixed-size blocks.

    Row order is deterministic for a given seed regardless of the number
    of rows requested downstream.
    """
    x = np.atleast_2d(np.asarray(features_raw, dtype=float))
    xn = model.normalizer.apply_features(x)
    rng = seed if isinstance(seed, np.random.Generator) else child_rng(seed)
    out = np.empty((len(xn), BNN_WIDTHS[-1]))
    for start in range(0, len(xn), _CHUNK):
        block = xn[start:start + _CHUNK]
        h = block
        for layer in model.layers:
            b = len(block)
            w = layer.w_mu + softplus(layer.w_rho) * rng.standard_normal((b,) + layer.w_mu.shape)
            bias = layer.b_mu + softplus(layer.b_rho) * rng.standard_normal((b,) + layer.b_mu.shape)
            z = np.einsum("bi,bio->bo", h, w) + bias
            h = z * sigmoid(z) if layer.activation == "swish" else z
        out[start:start + len(block)] = h
    return model.normalizer.invert_targets(out)


def evaluate_bnn(model: VariationalMlpModel, test_ds, seed) -> dict:
    """Location/mass accuracy under one fresh weight draw per test row."""
    pred = predict_stochastic_batch(model, test_ds.features, seed)
    loc_err = np.hypot(pred[:, 0] - test_ds.targets[:, 0], pred[:, 1] - test_ds.targets[:, 1])
    return {
        "mean_location_error_m": float(loc_err.mean()),
        "mass_mae_g": float(np.abs(pred[:, 2] - test_ds.targets[:, 2]).mean()),
        "n_rows": len(test_ds),
    }


def epistemic_density(model: VariationalMlpModel, features_raw: np.ndarray, m: int,
                      seed) -> PosteriorSampleSet:
    """M stochastic predictions of the SAME feature row: spread reflects
    only the weight posterior."""
    if m < 1:
        raise ConfigError("sample count must be >= 1")
    features = np.tile(np.asarray(features_raw, dtype=float), (m, 1))
    samples = predict_stochastic_batch(model, features, child_rng(seed, 1))
    return PosteriorSampleSet(samples=samples, tag="epistemic", seed=int(seed))


def combined_density(model: VariationalMlpModel, s: Scenario, layout,
                     pc: PhysicsConstants, m: int, seed,
                     grid_cfg: GridConfig | None = None,
                     resample_measurements: bool = True) -> PosteriorSampleSet:
    """M draws of {fresh Poisson measurement -> features -> stochastic
    prediction}: spread reflects weight posterior plus counting noise.

    The detector means are deterministic for a fixed scenario, so they are
    computed once and the M measurement vectors are sampled around them.
    With `resample_measurements=False` one measurement is drawn and reused,
    which reduces exactly to the epistemic density of that measurement.
    """
    if m < 1:
        raise ConfigError("sample count must be >= 1")
    grid_cfg = grid_cfg or GridConfig()
    means = expected_array_for_scenario(s, layout, pc, grid_cfg)
    rng_meas = child_rng(seed, 0)
    if resample_measurements:
        counts = rng_meas.poisson(means, size=(m, len(means)))
    else:
        counts = np.tile(rng_meas.poisson(means), (m, 1))
    features = features_from_counts(counts, s.u, s.v)
    samples = predict_stochastic_batch(model, features, child_rng(seed, 1))
    return PosteriorSampleSet(samples=samples, tag="epistemic+aleatoric", seed=int(seed))


def write_samples(path, ss: PosteriorSampleSet, meta: dict) -> None:
    """Sample CSV (x_c,y_c,m_c) plus a JSON sidecar with tag and seed."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_c", "y_c", "m_c"])
        for row in ss.samples:
            writer.writerow([fmt(v) for v in row])
    sidecar = dict(meta)
    sidecar.setdefault("format_version", 1)
    sidecar.setdefault("kind", "posterior-samples")
    sidecar["tag"] = ss.tag
    sidecar["seed"] = ss.seed
    sidecar["n_samples"] = len(ss.samples)
    write_json(_sidecar_path(path), sidecar)


def read_samples(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [row for row in reader]
    samples = np.asarray(rows, dtype=float)
    try:
        meta = read_json(_sidecar_path(path))
    except FileNotFoundError:
        meta = {"tag": "epistemic", "seed": -1}
    return PosteriorSampleSet(samples=samples, tag=meta.get("tag", "epistemic"),
                              seed=int(meta.get("seed", -1))), meta


def save_bnn(path, model: VariationalMlpModel) -> None:
    """Same container shape as the deterministic models, kind-tagged, with
    (w_mu, w_rho, b_mu, b_rho) per layer in the parameter block."""
    parts = []
    for layer in model.layers:
        parts.extend((layer.w_mu.ravel(), layer.w_rho.ravel(),
                      layer.b_mu.ravel(), layer.b_rho.ravel()))
    blob = np.concatenate(parts)
    header = {
        "format_version": 1,
        "kind": "bnn-regression3",
        "seed": model.seed,
        "layers": [
            {"fan_in": int(l.w_mu.shape[0]), "fan_out": int(l.w_mu.shape[1]),
             "activation": l.activation}
            for l in model.layers
        ],
        "normalizer": model.normalizer.to_dict(),
        "meta": model.meta,
        "params_b64": base64.b64encode(blob.astype("<f8").tobytes()).decode("ascii"),
    }
    write_json(path, header)


def load_bnn(path) -> VariationalMlpModel:
    header = read_json(path)
    if header.get("format_version") != 1 or header.get("kind") != "bnn-regression3":
        raise ConfigError(f"{path} is not a variational model file")
    blob = np.frombuffer(base64.b64decode(header["params_b64"]), dtype="<f8")
    layers = []
    offset = 0
    for spec in header["layers"]:
        n_in, n_out = spec["fan_in"], spec["fan_out"]
        arrays = []
        for size, shape in ((n_in * n_out, (n_in, n_out)), (n_in * n_out, (n_in, n_out)),
                            (n_out, (n_out,)), (n_out, (n_out,))):
            arrays.append(blob[offset:offset + size].reshape(shape).copy())
            offset += size
        layers.append(VariationalLayer(w_mu=arrays[0], w_rho=arrays[1],
                                       b_mu=arrays[2], b_rho=arrays[3],
                                       activation=spec["activation"]))
    return VariationalMlpModel(layers=layers,
                               normalizer=Normalizer.from_dict(header["normalizer"]),
                               seed=header["seed"], meta=header.get("meta", {}))


def _sidecar_path(path) -> str:
    path = str(path)
    stem = path[:-4] if path.endswith(".csv") else path
    return stem + ".meta.json"
