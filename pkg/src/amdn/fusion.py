"""Unsupervised late fusion of the three per-pipeline anomaly scores.

For each pipeline ``k`` with training features ``S^k`` (feature-dim x N):

1. ``W_s^k`` = top-``d`` eigenvectors of ``S^k S^k'`` (rows).
2. ``c^k = -tr(W_s^k S^k (W_s^k S^k)') / (2 lambda_s)``.
3. ``alpha`` = Euclidean projection of ``c`` onto ``{alpha >= eps, sum = 1}``.

Pipelines whose features carry more energy in their principal subspace get
smaller weights.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, ShapeError
from .linalg import sym_eig

log = logging.getLogger(__name__)

PIPELINES = ("A", "M", "J")
ALPHA_FLOOR = 1e-6
TRACE_NORMS = ("mean", "share", "none")
FORMAT = "amdn-fusion"


@dataclass
class FusionWeights:
    alpha: np.ndarray
    subspace_maps: list
    subspace_dim: int
    lambda_s: float
    costs: np.ndarray = None
    traces: np.ndarray = None
    score_mode: str = "zscore"
    score_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    score_std: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.shape != (3,):
            raise ShapeError(f"alpha must have 3 entries, got {self.alpha.shape}")
        if np.any(self.alpha <= 0) or abs(self.alpha.sum() - 1.0) > 1e-9:
            raise DomainError(f"alpha must be strictly positive and sum to 1, got {self.alpha}")
        if self.score_mode not in ("zscore", "raw"):
            raise DomainError(f"score_mode must be 'zscore' or 'raw', got {self.score_mode!r}")
        self.score_mean = np.asarray(self.score_mean, dtype=np.float64)
        self.score_std = np.asarray(self.score_std, dtype=np.float64)

    def standardize(self, scores):
        """Map raw per-pipeline scores (``(..., 3)``) to the fusion scale."""
        scores = np.asarray(scores, dtype=np.float64)
        if self.score_mode == "raw":
            return scores
        return (scores - self.score_mean) / self.score_std

    def calibrate(self, train_scores):
        """Store per-pipeline mean/stddev of raw training scores (``(n, 3)``)."""
        train_scores = np.asarray(train_scores, dtype=np.float64)
        self.score_mean = train_scores.mean(axis=0)
        std = train_scores.std(axis=0)
        self.score_std = np.where(std > 0, std, 1.0)
        return self

    def fused(self, raw_scores):
        return combine_scores(self, self.standardize(raw_scores))


def learn_subspace(S, d):
    """Top-``d`` eigenvectors (as rows) of ``S S'``, ``S`` being feature-dim x N."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise ShapeError(f"S must be 2-D, got {S.shape}")
    if not 1 <= d <= S.shape[0]:
        raise DomainError(f"d must lie in [1, {S.shape[0]}], got {d}")
    M = S @ S.T
    vals, vecs = sym_eig(M, d)
    tiny = 1e-12 * max(1.0, float(vals[0]))
    if np.any(vals < tiny):
        warnings.warn(f"S S' has rank below d={d}; {int(np.sum(vals < tiny))} near-zero eigenvalues")
    return vecs


def subspace_trace(S, W):
    P = np.asarray(W) @ np.asarray(S)
    return float(np.sum(P * P))


def fusion_costs(features, maps, lambda_s):
    """``c^k = -tr(W^k S^k (W^k S^k)') / (2 lambda_s)`` for each pipeline."""
    if lambda_s <= 0:
        raise DomainError(f"lambda_s must be > 0, got {lambda_s}")
    if len(features) != len(maps):
        raise ShapeError(f"{len(features)} feature matrices but {len(maps)} maps")
    return np.array([-subspace_trace(S, W) / (2.0 * lambda_s) for S, W in zip(features, maps)])


def project_simplex(c, floor=ALPHA_FLOOR):
    """Euclidean projection of ``c`` onto ``{a : a >= floor, sum(a) = 1}``.

    Sort-and-threshold on the shifted problem ``a = floor + p`` with ``p`` on
    the simplex of mass ``1 - n*floor``.
    """
    c = np.asarray(c, dtype=np.float64).ravel()
    n = c.size
    if n == 0:
        raise ShapeError("cannot project an empty vector")
    mass = 1.0 - n * floor
    if mass <= 0:
        raise DomainError(f"floor {floor} too large for {n} components")
    y = c - floor
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - mass
    k = np.arange(1, n + 1)
    rho = np.count_nonzero(u - css / k > 0)
    theta = css[rho - 1] / rho
    return floor + np.maximum(y - theta, 0.0)


def learn_weights(features, d=16, lambda_s=0.1, trace_norm="mean", score_mode="zscore", center=False):
    """Learn the fusion weights from per-pipeline training features.

    Parameters
    ----------
    features : sequence of 3 ndarrays
        Bottleneck features for A, M, J; one sample per row.
    d : int
        Subspace dimension, clipped to each pipeline's feature dim.
    lambda_s : float
        Weight of the ``||alpha||^2`` regulariser.
    trace_norm : {"mean", "share", "none"}
        How the subspace traces are scaled before forming ``c``. ``"none"``
        uses them raw, so ``c`` grows with N. ``"mean"`` divides by the
        sample count and the feature dimension (energy per coordinate per
        sample). ``"share"`` divides the per-sample traces by their sum over
        pipelines.
    center : bool
        Subtract each pipeline's feature mean first, so the trace measures
        spread in the subspace rather than the squared mean.
    """
    if len(features) != 3:
        raise DomainError(f"late fusion needs exactly 3 pipelines, got {len(features)}")
    if trace_norm not in TRACE_NORMS:
        raise DomainError(f"trace_norm must be one of {TRACE_NORMS}, got {trace_norm!r}")
    mats = [np.asarray(f, dtype=np.float64).T for f in features]
    if center:
        mats = [S - S.mean(axis=1, keepdims=True) for S in mats]
    maps = [learn_subspace(S, min(d, S.shape[0])) for S in mats]
    raw = fusion_costs(mats, maps, lambda_s)
    traces = -2.0 * lambda_s * raw
    n = np.array([S.shape[1] for S in mats], dtype=np.float64)
    dims = np.array([S.shape[0] for S in mats], dtype=np.float64)
    if trace_norm == "mean":
        costs = -(traces / (n * dims)) / (2.0 * lambda_s)
    elif trace_norm == "share":
        per_sample = traces / n
        total = per_sample.sum()
        shares = per_sample / total if total > 0 else np.full(3, 1.0 / 3.0)
        costs = -shares / (2.0 * lambda_s)
    else:
        costs = raw
    alpha = project_simplex(costs)
    log.info("fusion traces %s costs %s alpha %s", traces, costs, alpha)
    return FusionWeights(alpha, maps, int(d), float(lambda_s), costs, traces, score_mode)


def combine_scores(weights, scores):
    """``sum_k alpha^k A^k`` over the last axis of ``scores``."""
    alpha = weights.alpha if isinstance(weights, FusionWeights) else np.asarray(weights, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[-1] != 3:
        raise ShapeError(f"expected 3 pipeline scores, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise DomainError("pipeline scores must be finite")
    return scores @ alpha


def format_alpha(alpha):
    return "[" + ", ".join(f"{a:.3f}" for a in alpha) + "]"


def to_dict(w):
    return {
        "format": FORMAT,
        "version": 1,
        "alpha": w.alpha.tolist(),
        "subspace_dim": w.subspace_dim,
        "lambda_s": w.lambda_s,
        "costs": None if w.costs is None else np.asarray(w.costs).tolist(),
        "traces": None if w.traces is None else np.asarray(w.traces).tolist(),
        "score_mode": w.score_mode,
        "score_mean": w.score_mean.tolist(),
        "score_std": w.score_std.tolist(),
        "subspace_maps": [{"shape": list(m.shape), "data": m.ravel().tolist()} for m in w.subspace_maps],
    }


def from_dict(d):
    if d.get("format") != FORMAT:
        raise FormatError(f"not a fusion document (format={d.get('format')!r})")
    maps = [np.asarray(m["data"], dtype=np.float64).reshape(m["shape"]) for m in d["subspace_maps"]]
    return FusionWeights(
        alpha=np.asarray(d["alpha"]),
        subspace_maps=maps,
        subspace_dim=int(d["subspace_dim"]),
        lambda_s=float(d["lambda_s"]),
        costs=None if d["costs"] is None else np.asarray(d["costs"]),
        traces=None if d["traces"] is None else np.asarray(d["traces"]),
        score_mode=d["score_mode"],
        score_mean=np.asarray(d["score_mean"]),
        score_std=np.asarray(d["score_std"]),
    )


def save(path, weights):
    Path(path).write_text(json.dumps(to_dict(weights)))


def load(path):
    try:
        return from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
