"""Test-time scoring: patch grid -> three SDAE features -> three one-class
SVM scores -> fused score -> thresholded detections."""

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from . import ocsvm as ocsvm_mod
from . import sdae as sdae_mod
from .errors import DomainError, ShapeError
from .fusion import combine_scores
from .ingest import PatchKind, grid_origins, grid_shape, normalize_channel, write_pgm

log = logging.getLogger(__name__)

KINDS = (PatchKind.APPEARANCE, PatchKind.MOTION, PatchKind.JOINT)


@dataclass
class ScoreMap:
    clip_id: str
    frame_index: int
    grid_rows: int
    grid_cols: int
    stride: int
    patch_size: int
    scores: np.ndarray
    pipeline_scores: np.ndarray = None  # (rows, cols, 3) raw A, M, J scores

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (self.grid_rows, self.grid_cols):
            raise ShapeError(f"score grid {self.scores.shape} != ({self.grid_rows}, {self.grid_cols})")


@dataclass
class DetectionResult:
    score_maps: list
    frame_scores: np.ndarray
    threshold: float
    frame_flags: np.ndarray
    pixel_masks: list


@dataclass
class Models:
    """Everything needed at test time for the three pipelines."""

    sdae: dict
    ocsvm: dict
    fusion: object
    motion_bounds: tuple

    def __post_init__(self):
        for k in KINDS:
            if k not in self.sdae or k not in self.ocsvm:
                raise DomainError(f"missing models for pipeline {k.value}")
            if self.sdae[k].kind != k:
                raise DomainError(f"SDAE registered as {k.value} has kind {self.sdae[k].kind.value}")
            if self.ocsvm[k].kind not in (None, k):
                raise DomainError(f"one-class SVM registered as {k.value} has kind {self.ocsvm[k].kind.value}")


def grid_patches(frame, flow, bounds, origins, size, target):
    """Appearance, motion and joint patch matrices for ``origins``."""
    xs, ys = origins[:, 0], origins[:, 1]
    app = _kernels.warp_patches(np.asarray(frame, dtype=np.float64), xs, ys, size, target, target) / 255.0
    un = normalize_channel(flow.u, *bounds[0])
    vn = normalize_channel(flow.v, *bounds[1])
    mot = np.concatenate(
        [
            _kernels.warp_patches(un, xs, ys, size, target, target),
            _kernels.warp_patches(vn, xs, ys, size, target, target),
        ],
        axis=1,
    )
    return {PatchKind.APPEARANCE: app, PatchKind.MOTION: mot, PatchKind.JOINT: np.concatenate([app, mot], axis=1)}


def pipeline_scores(models, patches):
    """Raw one-class SVM scores, one column per pipeline (A, M, J)."""
    cols = []
    for k in KINDS:
        feats = sdae_mod.encode(models.sdae[k], patches[k])
        cols.append(ocsvm_mod.score_batch(models.ocsvm[k], feats, k))
    return np.stack(cols, axis=1)


def score_frame(frame, flow, models, spec, clip_id="", frame_index=0):
    """Fused anomaly scores on the single-scale test grid of one frame."""
    frame = np.asarray(frame)
    if flow is None:
        raise DomainError(f"frame {frame_index}: no flow field")
    if flow.u.shape != frame.shape:
        raise ShapeError(f"flow shape {flow.u.shape} != frame shape {frame.shape}")
    if len(spec.scales) != 1:
        raise DomainError("test-time scoring uses a single window size")
    size = spec.scales[0]
    h, w = frame.shape
    rows, cols = grid_shape(w, h, size, spec.stride)
    origins = grid_origins(w, h, size, spec.stride)
    patches = grid_patches(frame, flow, models.motion_bounds, origins, size, spec.target_w)
    raw = pipeline_scores(models, patches)
    fused = combine_scores(models.fusion, models.fusion.standardize(raw))
    return ScoreMap(
        clip_id, frame_index, rows, cols, spec.stride, size,
        fused.reshape(rows, cols), raw.reshape(rows, cols, 3),
    )


def score_clip(seq, flows, models, spec):
    maps = []
    for t, frame in enumerate(seq.frames):
        flow = flows[t] if t < len(flows) else None
        if flow is None:
            warnings.warn(f"clip {seq.clip_id}: no flow for frame {t}; frame skipped")
            continue
        maps.append(score_frame(frame, flow, models, spec, seq.clip_id, t))
    return maps


def paint_footprint(mask, sm, r, c):
    y, x = r * sm.stride, c * sm.stride
    mask[y : y + sm.patch_size, x : x + sm.patch_size] = True


def detection_mask(sm, eta, shape):
    mask = np.zeros(shape, dtype=bool)
    for r, c in zip(*np.nonzero(sm.scores > eta)):
        paint_footprint(mask, sm, r, c)
    return mask


def decide(maps, eta, frame_shape=None):
    """Threshold score maps: frame score is the max patch score, a frame is
    flagged when it exceeds ``eta``, and flagged patches are painted into a
    pixel mask of ``frame_shape``."""
    frame_scores = np.array([float(m.scores.max()) for m in maps])
    flags = frame_scores > eta
    masks = None
    if frame_shape is not None:
        masks = [detection_mask(m, eta, frame_shape) for m in maps]
    return DetectionResult(list(maps), frame_scores, float(eta), flags, masks)


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def write_clip_scores(directory, maps, result, masks=False):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "patch_scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "row", "col", "score"])
        for m in maps:
            for r in range(m.grid_rows):
                for c in range(m.grid_cols):
                    w.writerow([m.frame_index, r, c, repr(float(m.scores[r, c]))])
    with open(directory / "pipeline_scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "row", "col", "A", "M", "J"])
        for m in maps:
            for r in range(m.grid_rows):
                for c in range(m.grid_cols):
                    w.writerow([m.frame_index, r, c] + [repr(float(v)) for v in m.pipeline_scores[r, c]])
    with open(directory / "frame_scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "score", "flag"])
        for m, s, f in zip(maps, result.frame_scores, result.frame_flags):
            w.writerow([m.frame_index, repr(float(s)), int(f)])
    if masks and result.pixel_masks is not None:
        mdir = directory / "masks"
        mdir.mkdir(exist_ok=True)
        for m, mask in zip(maps, result.pixel_masks):
            write_pgm(mdir / f"mask_{m.frame_index:06d}.pgm", mask.astype(np.uint8) * 255)


def read_clip_scores(directory, grid_meta):
    """Rebuild ScoreMaps from ``patch_scores.csv`` and ``pipeline_scores.csv``.

    ``grid_meta`` gives ``clip_id``, ``rows``, ``cols``, ``stride`` and
    ``patch_size`` for the clip.
    """
    directory = Path(directory)
    rows, cols = grid_meta["rows"], grid_meta["cols"]
    fused, pipes = {}, {}
    with open(directory / "patch_scores.csv", newline="") as fh:
        for rec in csv.DictReader(fh):
            t = int(rec["frame_index"])
            fused.setdefault(t, np.full((rows, cols), np.nan))[int(rec["row"]), int(rec["col"])] = float(rec["score"])
    pipe_path = directory / "pipeline_scores.csv"
    if pipe_path.is_file():
        with open(pipe_path, newline="") as fh:
            for rec in csv.DictReader(fh):
                t = int(rec["frame_index"])
                arr = pipes.setdefault(t, np.full((rows, cols, 3), np.nan))
                arr[int(rec["row"]), int(rec["col"])] = [float(rec[k]) for k in "AMJ"]
    maps = []
    for t in sorted(fused):
        maps.append(
            ScoreMap(
                grid_meta["clip_id"], t, rows, cols, grid_meta["stride"], grid_meta["patch_size"],
                fused[t], pipes.get(t),
            )
        )
    return maps
