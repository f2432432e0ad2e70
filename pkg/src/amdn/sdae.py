"""Stacked denoising autoencoders.

Each pipeline (appearance, motion, joint) gets one SDAE: greedy layer-wise
DAE pretraining with a sparsity penalty, then whole-network fine-tuning, then
the bottleneck activations serve as features. All activations are logistic
sigmoids and decoder weights are untied.

Objectives (rows of ``X`` are samples):

* layer pretraining::

      sum_i ||x_i - xhat_i||^2 + lambda_pre (||W||_F^2 + ||W'||_F^2)
          + sparsity_weight * KL(mu || mean_i h_i)

  where ``h = sigmoid(W x~ + b)`` encodes the corrupted input and
  ``xhat = sigmoid(W' h + b')``.

* fine-tuning::

      sum_i ||x_i - xhat_i||^2 + lambda_fine * sum_l (||W_l||_F^2 + ||W'_l||_F^2)

SGD treats each mini-batch as the training set of the objective above and
divides the gradient by the batch size.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, DomainError, FormatError, ShapeError
from .ingest import PatchKind

log = logging.getLogger(__name__)

MODEL_FORMAT = "amdn-sdae"


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class LayerParams:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"layer shapes inconsistent: W {self.W.shape}, b {self.b.shape}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise DomainError("layer parameters must be finite")

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]

    def copy(self):
        return LayerParams(self.W.copy(), self.b.copy())


@dataclass
class SdaeConfig:
    layer_dims: list
    noise_variance: float = 0.0003
    sparsity_target: float = 0.05
    sparsity_weight: float = 0.1
    lambda_pre: float = 1e-4
    lambda_fine: float = 1e-4
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 256
    pretrain_epochs: int = 20
    finetune_epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        dims = self.layer_dims
        if len(dims) < 2 or min(dims) < 1:
            raise DomainError(f"layer_dims needs an input and at least one positive width, got {dims}")
        for a, b in zip(dims[1:], dims[2:]):
            if b != a // 2:
                raise DomainError(f"encoder widths must halve after the first layer, got {dims}")
        if not 0.0 < self.sparsity_target < 1.0:
            raise DomainError(f"sparsity_target must lie in (0, 1), got {self.sparsity_target}")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise DomainError("learning_rate and batch_size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError(f"momentum must lie in [0, 1), got {self.momentum}")
        if min(self.noise_variance, self.sparsity_weight, self.lambda_pre, self.lambda_fine) < 0:
            raise DomainError("noise variance, sparsity weight and penalties must be >= 0")

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1


@dataclass
class SdaeModel:
    kind: PatchKind
    encoder: list
    decoder: list
    config: SdaeConfig
    norm_bounds: tuple = None
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        L = len(self.encoder)
        if len(self.decoder) != L:
            raise ShapeError(f"{L} encoder layers but {len(self.decoder)} decoder layers")
        for l, dec in enumerate(self.decoder):
            enc = self.encoder[L - 1 - l]
            if dec.W.shape != enc.W.shape[::-1]:
                raise ShapeError(f"decoder layer {l} shape {dec.W.shape} does not mirror encoder {enc.W.shape}")

    @property
    def input_dim(self):
        return self.encoder[0].in_dim

    @property
    def bottleneck_dim(self):
        return self.encoder[-1].out_dim

    @property
    def n_layers(self):
        """Layer count of the unrolled network, bottleneck counted once (2L+1)."""
        return 2 * len(self.encoder) + 1

    def layers(self):
        return list(self.encoder) + list(self.decoder)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def encode_layer(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise ShapeError(f"input length {x.shape[-1]} != layer input {params.in_dim}")
    return sigmoid(x @ params.W.T + params.b)


def corrupt(x, noise_variance, rng):
    """Additive zero-mean Gaussian noise; the result is not clipped."""
    if noise_variance < 0:
        raise DomainError(f"noise_variance must be >= 0, got {noise_variance}")
    x = np.asarray(x, dtype=np.float64)
    if noise_variance == 0:
        return x.copy()
    return x + math.sqrt(noise_variance) * rng.standard_normal(x.shape)


def sparsity_penalty(mu, mu_hat):
    """KL divergence between target activation ``mu`` and mean activations
    ``mu_hat``: the cross-entropy penalty minus its constant minimum, so it
    is zero exactly at ``mu_hat == mu``."""
    mu_hat = np.clip(np.asarray(mu_hat, dtype=np.float64), 1e-12, 1 - 1e-12)
    return float(np.sum(mu * np.log(mu / mu_hat) + (1 - mu) * np.log((1 - mu) / (1 - mu_hat))))


def init_layer(in_dim, out_dim, rng):
    r = math.sqrt(6.0 / (in_dim + out_dim))
    return LayerParams(rng.uniform(-r, r, size=(out_dim, in_dim)), np.zeros(out_dim))


# ---------------------------------------------------------------------------
# Layer-wise (DAE) objective
# ---------------------------------------------------------------------------


def dae_objective(enc, dec, X, X_noisy, lam, sparsity_weight, mu):
    H = encode_layer(enc, X_noisy)
    Xh = encode_layer(dec, H)
    obj = float(np.sum((X - Xh) ** 2)) + lam * float(np.sum(enc.W**2) + np.sum(dec.W**2))
    if sparsity_weight:
        obj += sparsity_weight * sparsity_penalty(mu, H.mean(axis=0))
    return obj


def dae_gradients(enc, dec, X, X_noisy, lam, sparsity_weight, mu):
    """Objective value and gradients ``(gW, gb, gW', gb')`` of the layer-wise
    objective on the sample set ``X``."""
    n = X.shape[0]
    H = encode_layer(enc, X_noisy)
    Xh = encode_layer(dec, H)
    R = Xh - X
    obj = float(np.sum(R * R)) + lam * float(np.sum(enc.W**2) + np.sum(dec.W**2))
    dZ2 = 2.0 * R * Xh * (1.0 - Xh)
    gWd = dZ2.T @ H + 2.0 * lam * dec.W
    gbd = dZ2.sum(axis=0)
    dH = dZ2 @ dec.W
    if sparsity_weight:
        mh = np.clip(H.mean(axis=0), 1e-12, 1 - 1e-12)
        obj += sparsity_weight * sparsity_penalty(mu, mh)
        dH = dH + (sparsity_weight / n) * (-mu / mh + (1 - mu) / (1 - mh))
    dZ1 = dH * H * (1.0 - H)
    gWe = dZ1.T @ X_noisy + 2.0 * lam * enc.W
    gbe = dZ1.sum(axis=0)
    return obj, (gWe, gbe, gWd, gbd)


# ---------------------------------------------------------------------------
# Whole-network (fine-tuning) objective
# ---------------------------------------------------------------------------


def _forward(layers, X):
    acts = [X]
    for layer in layers:
        acts.append(sigmoid(acts[-1] @ layer.W.T + layer.b))
    return acts


def finetune_objective(layers, X, lam):
    Xh = _forward(layers, X)[-1]
    return float(np.sum((X - Xh) ** 2)) + lam * sum(float(np.sum(l.W**2)) for l in layers)


def finetune_gradients(layers, X, lam):
    """Objective value and per-layer ``(gW, gb)`` of the reconstruction
    objective of the unrolled encoder+decoder stack."""
    acts = _forward(layers, X)
    R = acts[-1] - X
    obj = float(np.sum(R * R)) + lam * sum(float(np.sum(l.W**2)) for l in layers)
    grads = [None] * len(layers)
    delta = 2.0 * R * acts[-1] * (1.0 - acts[-1])
    for l in range(len(layers) - 1, -1, -1):
        grads[l] = (delta.T @ acts[l] + 2.0 * lam * layers[l].W, delta.sum(axis=0))
        if l:
            delta = (delta @ layers[l].W) * acts[l] * (1.0 - acts[l])
    return obj, grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _check_finite(value, epoch, trace, stage):
    if not math.isfinite(value):
        raise DivergenceError(f"{stage}: objective became non-finite at epoch {epoch}", epoch, trace)


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def pretrain_layer(data, in_dim, out_dim, cfg, rng):
    """Train one denoising autoencoder layer by mini-batch SGD with momentum.

    Parameters
    ----------
    data : ndarray, shape (n, in_dim)
        Clean inputs (patches or the previous layer's activations).
    in_dim, out_dim : int
        Visible and hidden widths.
    cfg : SdaeConfig
        Supplies noise, sparsity, ``lambda_pre``, rate, momentum, batch size
        and ``pretrain_epochs``.
    rng : numpy.random.Generator

    Returns
    -------
    encoder, decoder : LayerParams
    history : list of float
        Objective on the full data set before training and after each epoch,
        measured against one fixed corruption draw.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != in_dim:
        raise ShapeError(f"pretraining data shape {X.shape} does not match in_dim {in_dim}")
    if out_dim < 1:
        raise DomainError(f"out_dim must be >= 1, got {out_dim}")
    if X.shape[0] < cfg.batch_size:
        raise DomainError(f"{X.shape[0]} samples is fewer than batch_size {cfg.batch_size}")
    enc = init_layer(in_dim, out_dim, rng)
    dec = init_layer(out_dim, in_dim, rng)
    params = [enc.W, enc.b, dec.W, dec.b]
    vel = [np.zeros_like(p) for p in params]
    mu, beta, lam = cfg.sparsity_target, cfg.sparsity_weight, cfg.lambda_pre
    X_eval = corrupt(X, cfg.noise_variance, rng)
    history = [dae_objective(enc, dec, X, X_eval, lam, beta, mu)]
    _check_finite(history[0], 0, history, "pretraining")
    for epoch in range(1, cfg.pretrain_epochs + 1):
        for idx in _batches(X.shape[0], cfg.batch_size, rng):
            xb = X[idx]
            _, grads = dae_gradients(enc, dec, xb, corrupt(xb, cfg.noise_variance, rng), lam, beta, mu)
            scale = cfg.learning_rate / len(idx)
            for p, v, g in zip(params, vel, grads):
                v *= cfg.momentum
                v -= scale * g
                p += v
        history.append(dae_objective(enc, dec, X, X_eval, lam, beta, mu))
        _check_finite(history[-1], epoch, history, "pretraining")
    return enc, dec, history


def finetune(layers, X, cfg, rng):
    """Fine-tune the unrolled stack in place; returns the objective history."""
    params = [p for l in layers for p in (l.W, l.b)]
    vel = [np.zeros_like(p) for p in params]
    lam = cfg.lambda_fine
    history = [finetune_objective(layers, X, lam)]
    _check_finite(history[0], 0, history, "fine-tuning")
    for epoch in range(1, cfg.finetune_epochs + 1):
        for idx in _batches(X.shape[0], cfg.batch_size, rng):
            _, grads = finetune_gradients(layers, X[idx], lam)
            flat = [g for pair in grads for g in pair]
            scale = cfg.learning_rate / len(idx)
            for p, v, g in zip(params, vel, flat):
                v *= cfg.momentum
                v -= scale * g
                p += v
        history.append(finetune_objective(layers, X, lam))
        _check_finite(history[-1], epoch, history, "fine-tuning")
    return history


def stack_and_finetune(batch, cfg, rng):
    """Greedy layer-wise pretraining followed by whole-network fine-tuning."""
    X = batch.vectors
    if cfg.layer_dims[0] != batch.dim:
        raise ShapeError(f"layer_dims[0]={cfg.layer_dims[0]} but patches have dim {batch.dim}")
    encoder, decoder = [], []
    pre_hist = []
    h = X
    for l in range(cfg.n_layers):
        enc, dec, hist = pretrain_layer(h, cfg.layer_dims[l], cfg.layer_dims[l + 1], cfg, rng)
        log.info(
            "%s layer %d (%d->%d) pretrain objective %.6g -> %.6g",
            batch.kind.value, l + 1, enc.in_dim, enc.out_dim, hist[0], hist[-1],
        )
        encoder.append(enc)
        decoder.insert(0, dec)
        pre_hist.append(hist)
        h = encode_layer(enc, h)
    layers = encoder + decoder
    fine_hist = finetune(layers, X, cfg, rng)
    log.info("%s fine-tune objective %.6g -> %.6g", batch.kind.value, fine_hist[0], fine_hist[-1])
    return SdaeModel(
        batch.kind,
        encoder,
        decoder,
        cfg,
        norm_bounds=batch.norm_bounds,
        history={"pretrain": pre_hist, "finetune": fine_hist},
    )


def extract_features(model, batch):
    """Bottleneck activations of the clean input, one row per patch."""
    if batch.kind != model.kind:
        raise DomainError(f"batch kind {batch.kind.value} does not match model kind {model.kind.value}")
    return encode(model, batch.vectors)


def encode(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.input_dim:
        raise ShapeError(f"input dim {X.shape[-1]} != model input dim {model.input_dim}")
    h = X
    for layer in model.encoder:
        h = encode_layer(layer, h)
    return h


def reconstruct(model, X):
    return _forward(model.layers(), np.asarray(X, dtype=np.float64))[-1]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------
# JSON document; floats are written with repr() so every value round-trips
# exactly. Weights are row-major flat lists with an explicit shape.


def _layer_to_dict(layer):
    return {"shape": list(layer.W.shape), "W": layer.W.ravel().tolist(), "b": layer.b.tolist()}


def _layer_from_dict(d):
    rows, cols = d["shape"]
    W = np.asarray(d["W"], dtype=np.float64)
    if W.size != rows * cols:
        raise FormatError(f"layer weight count {W.size} != {rows}x{cols}")
    return LayerParams(W.reshape(rows, cols), np.asarray(d["b"], dtype=np.float64))


def model_to_dict(model):
    return {
        "format": MODEL_FORMAT,
        "version": 1,
        "kind": model.kind.value,
        "input_dim": model.input_dim,
        "config": asdict(model.config),
        "motion_norm": [list(b) for b in model.norm_bounds] if model.norm_bounds else None,
        "encoder": [_layer_to_dict(l) for l in model.encoder],
        "decoder": [_layer_to_dict(l) for l in model.decoder],
    }


def model_from_dict(d):
    if d.get("format") != MODEL_FORMAT:
        raise FormatError(f"not an SDAE model document (format={d.get('format')!r})")
    bounds = d.get("motion_norm")
    model = SdaeModel(
        PatchKind(d["kind"]),
        [_layer_from_dict(x) for x in d["encoder"]],
        [_layer_from_dict(x) for x in d["decoder"]],
        SdaeConfig(**d["config"]),
        norm_bounds=tuple(tuple(b) for b in bounds) if bounds else None,
    )
    if model.input_dim != d["input_dim"]:
        raise FormatError(f"input_dim {d['input_dim']} disagrees with first layer {model.input_dim}")
    return model


def save_model(path, model):
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path):
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return model_from_dict(d)
