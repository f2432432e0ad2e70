"""One-class SVM with an RBF kernel, solved in the dual by SMO.

Dual problem over training features ``s_1..s_N``::

    min_a  1/2 sum_ij a_i a_j k(s_i, s_j)
    s.t.   0 <= a_i <= 1/(nu N),  sum_i a_i = 1

with ``k(a, b) = exp(-||a - b||^2 / (2 sigma^2))``. The anomaly score of a
sample is ``rho - sum_i a_i k(s_i, s)``; positive means outside the
learned support.
"""

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ConvergenceError, DomainError, FormatError, ShapeError
from .ingest import PatchKind

log = logging.getLogger(__name__)

MODEL_FORMAT = "amdn-ocsvm"
DENSE_KERNEL_LIMIT = 20_000


@dataclass
class OcsvmConfig:
    nu: float = 0.1
    rbf_sigma: float = None  # None: median pairwise distance heuristic
    tolerance: float = 1e-6
    max_passes: int = 200
    sigma_sample: int = 1000

    def __post_init__(self):
        if not 0.0 < self.nu <= 1.0:
            raise DomainError(f"nu must lie in (0, 1], got {self.nu}")
        if self.rbf_sigma is not None and not self.rbf_sigma > 0:
            raise DomainError(f"rbf_sigma must be > 0, got {self.rbf_sigma}")
        if self.tolerance <= 0 or self.max_passes < 1:
            raise DomainError("tolerance and max_passes must be positive")


@dataclass
class OcsvmModel:
    support_vectors: np.ndarray
    dual_coeffs: np.ndarray
    rho: float
    sigma: float
    config: OcsvmConfig
    kind: PatchKind = None
    n_train: int = 0
    iterations: int = 0
    objective_trace: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self):
        return self.support_vectors.shape[1]

    @property
    def n_support(self):
        return self.support_vectors.shape[0]


def rbf_kernel(a, b, sigma):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"kernel arguments differ in shape: {a.shape} vs {b.shape}")
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    d = a - b
    return math.exp(-float(d @ d) / (2.0 * sigma * sigma))


def kernel_matrix(A, B, sigma):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"feature dims differ: {A.shape[1]} vs {B.shape[1]}")
    sq = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * sigma * sigma))


def median_sigma(features, rng=None, sample=1000):
    """Median pairwise Euclidean distance over at most ``sample`` points."""
    X = np.asarray(features, dtype=np.float64)
    if len(X) > sample:
        idx = rng.choice(len(X), size=sample, replace=False) if rng is not None else np.arange(sample)
        X = X[np.sort(idx)]
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    iu = np.triu_indices(len(X), k=1)
    med = float(np.sqrt(np.median(np.maximum(d2[iu], 0.0)))) if len(iu[0]) else 0.0
    return med if med > 0 else 1.0


def dual_objective(alpha, K):
    alpha = np.asarray(alpha, dtype=np.float64)
    return 0.5 * float(alpha @ K @ alpha)


def _initial_alpha(n, C):
    alpha = np.zeros(n)
    m = min(int(math.floor(1.0 / C + 1e-9)), n)
    alpha[:m] = C
    if m < n:
        alpha[m] = max(0.0, 1.0 - alpha[:m].sum())
    return alpha


def _smo_on_demand(X, sigma, alpha, C, tol, max_iter):
    # kernel rows recomputed per step; only used above DENSE_KERNEL_LIMIT
    n = len(X)
    G = np.zeros(n)
    for start in range(0, n, 2048):
        rows = kernel_matrix(X[start : start + 2048], X, sigma)
        G[start : start + 2048] = rows @ alpha
    it = 0
    while it < max_iter:
        gi = np.where(alpha < C, G, np.inf)
        gj = np.where(alpha > 0.0, G, -np.inf)
        i, j = int(np.argmin(gi)), int(np.argmax(gj))
        if gj[j] - gi[i] <= tol:
            return alpha, G, it, True
        Ki = kernel_matrix(X[i], X, sigma)[0]
        Kj = kernel_matrix(X[j], X, sigma)[0]
        quad = max(2.0 - 2.0 * Ki[j], 1e-12)
        delta = min((gj[j] - gi[i]) / quad, C - alpha[i], alpha[j])
        if delta == C - alpha[i]:
            alpha[i] = C
            alpha[j] -= delta
        elif delta == alpha[j]:
            alpha[i] += delta
            alpha[j] = 0.0
        else:
            alpha[i] += delta
            alpha[j] -= delta
        G += delta * (Ki - Kj)
        it += 1
    return alpha, G, it, False


def train(features, cfg, kind=None, rng=None, record_objective=False):
    """Fit a one-class SVM on ``features`` (one sample per row).

    Stops when the maximal KKT violation ``max_{a_j>0} G_j - min_{a_i<C} G_i``
    drops to ``cfg.tolerance``, where ``G = K a``. ``rho`` is the mean of
    ``G`` over margin support vectors (``0 < a < C``).
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"features must be 2-D, got {X.shape}")
    n = X.shape[0]
    if n < 2:
        raise DomainError(f"need at least 2 training samples, got {n}")
    sigma = cfg.rbf_sigma if cfg.rbf_sigma is not None else median_sigma(X, rng, cfg.sigma_sample)
    C = 1.0 / (cfg.nu * n)
    alpha0 = _initial_alpha(n, C)
    max_iter = cfg.max_passes * n
    trace = None
    if n <= DENSE_KERNEL_LIMIT:
        K = kernel_matrix(X, X, sigma)
        alpha, G, iters, converged, trace = _kernels.smo_one_class(
            K, alpha0, C, cfg.tolerance, max_iter, record=record_objective
        )
    else:
        alpha, G, iters, converged = _smo_on_demand(X, sigma, alpha0, C, cfg.tolerance, max_iter)
    if not converged:
        raise ConvergenceError(f"SMO did not reach KKT tolerance {cfg.tolerance} in {iters} steps")
    sv = alpha > 0.0
    margin = sv & (alpha < C)
    if np.any(margin):
        rho = float(np.mean(G[margin]))
    else:
        warnings.warn("one-class SVM has no margin support vector; rho taken as min over support vectors")
        rho = float(np.min(G[sv]))
    log.debug("ocsvm %s: n=%d nu=%g sigma=%.4g SVs=%d iters=%d rho=%.6g",
              kind.value if kind else "-", n, cfg.nu, sigma, int(sv.sum()), iters, rho)
    resolved = OcsvmConfig(cfg.nu, sigma, cfg.tolerance, cfg.max_passes, cfg.sigma_sample)
    return OcsvmModel(
        support_vectors=X[sv].copy(),
        dual_coeffs=alpha[sv].copy(),
        rho=rho,
        sigma=float(sigma),
        config=resolved,
        kind=kind,
        n_train=n,
        iterations=int(iters),
        objective_trace=trace if record_objective else None,
    )


def score_batch(model, S, kind=None):
    """Anomaly scores ``rho - sum_i a_i k(sv_i, s)`` for each row of ``S``."""
    if kind is not None and model.kind is not None and kind != model.kind:
        raise DomainError(f"features of kind {kind.value} scored with a {model.kind.value} model")
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if S.shape[1] != model.dim:
        raise ShapeError(f"feature dim {S.shape[1]} != model dim {model.dim}")
    out = np.empty(len(S))
    for start in range(0, len(S), 4096):
        K = kernel_matrix(S[start : start + 4096], model.support_vectors, model.sigma)
        out[start : start + 4096] = model.rho - K @ model.dual_coeffs
    return out


def score(model, s, kind=None):
    return float(score_batch(model, np.asarray(s, dtype=np.float64)[None, :], kind)[0])


def lipschitz_bound(model):
    """Upper bound on |score(s) - score(s')| / ||s - s'||."""
    return float(np.sum(np.abs(model.dual_coeffs))) / model.sigma * math.exp(-0.5)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def model_to_dict(model):
    return {
        "format": MODEL_FORMAT,
        "version": 1,
        "kind": model.kind.value if model.kind else None,
        "config": asdict(model.config),
        "sigma": model.sigma,
        "rho": model.rho,
        "n_train": model.n_train,
        "iterations": model.iterations,
        "sv_shape": list(model.support_vectors.shape),
        "support_vectors": model.support_vectors.ravel().tolist(),
        "dual_coeffs": model.dual_coeffs.tolist(),
    }


def model_from_dict(d):
    if d.get("format") != MODEL_FORMAT:
        raise FormatError(f"not a one-class SVM document (format={d.get('format')!r})")
    rows, cols = d["sv_shape"]
    sv = np.asarray(d["support_vectors"], dtype=np.float64)
    if sv.size != rows * cols:
        raise FormatError("support vector payload does not match sv_shape")
    return OcsvmModel(
        support_vectors=sv.reshape(rows, cols),
        dual_coeffs=np.asarray(d["dual_coeffs"], dtype=np.float64),
        rho=float(d["rho"]),
        sigma=float(d["sigma"]),
        config=OcsvmConfig(**d["config"]),
        kind=PatchKind(d["kind"]) if d.get("kind") else None,
        n_train=int(d["n_train"]),
        iterations=int(d["iterations"]),
    )


def save_model(path, model):
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path):
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
