"""Frame/ground-truth loading and patch extraction for the three pipelines.

Dataset layout::

    <root>/<clip_id>/frames/frame_000000.pgm ...
    <root>/<clip_id>/gt/frame_labels.csv          (frame_index,label)
    <root>/<clip_id>/gt/mask_000000.pgm ...       (optional; 0 normal, 255 anomalous)
    <root>/<clip_id>/flow/flow_000000.flo ...     (optional; precomputed flow t -> t+1)

Frames are binary PGM (P5) with maxval 255.
"""

import enum
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import AlignmentError, DomainError, FormatError, LayoutError, ShapeError

FRAME_PATTERN = "frame_{:06d}.pgm"
MASK_PATTERN = "mask_{:06d}.pgm"
LABELS_FILE = "frame_labels.csv"


class PatchKind(enum.Enum):
    APPEARANCE = "A"
    MOTION = "M"
    JOINT = "J"


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path):
    data = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM (maxval 255) is supported, got maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos : pos + width * height]
    if len(payload) != width * height:
        raise FormatError(f"{path}: expected {width * height} pixel bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, img):
    img = np.asarray(img)
    if img.ndim != 2:
        raise ShapeError(f"PGM images are 2-D, got shape {img.shape}")
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8) if img.dtype != np.uint8 else img
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameSequence:
    clip_id: str
    frames: tuple

    def __post_init__(self):
        if len(self.frames) < 2:
            raise DomainError(f"clip {self.clip_id!r}: need at least 2 frames, got {len(self.frames)}")
        shape = self.frames[0].shape
        for i, f in enumerate(self.frames):
            if f.shape != shape or f.ndim != 2:
                raise ShapeError(f"clip {self.clip_id!r}: frame {i} has shape {f.shape}, expected {shape}")

    @property
    def height(self):
        return self.frames[0].shape[0]

    @property
    def width(self):
        return self.frames[0].shape[1]

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class PatchSpec:
    """Sliding-window geometry: ``scales`` are square window sides, ``stride``
    the step between windows, each window warped to ``target_h x target_w``."""

    scales: tuple = (15,)
    stride: int = 15
    target_w: int = 15
    target_h: int = 15
    channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        if self.stride < 1:
            raise DomainError(f"stride must be >= 1, got {self.stride}")
        if not self.scales or min(self.scales) < 1:
            raise DomainError(f"scales must be positive, got {self.scales}")
        if self.channels not in (1, 2, 3):
            raise DomainError(f"channels must be 1, 2 or 3, got {self.channels}")
        if self.target_w < 1 or self.target_h < 1:
            raise DomainError("target size must be positive")

    @property
    def dim(self):
        return self.target_w * self.target_h * self.channels


@dataclass
class PatchBatch:
    kind: PatchKind
    vectors: np.ndarray
    origins: list
    norm_bounds: tuple = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ShapeError(f"patch vectors must be 2-D, got {self.vectors.shape}")
        if len(self.origins) != self.vectors.shape[0]:
            raise ShapeError(f"{len(self.origins)} origins for {self.vectors.shape[0]} patches")

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]


@dataclass
class GroundTruth:
    frame_labels: np.ndarray
    pixel_masks: list = None

    @property
    def has_masks(self):
        return self.pixel_masks is not None


def concat_batches(batches):
    batches = list(batches)
    if not batches:
        raise DomainError("no batches to concatenate")
    kind = batches[0].kind
    if any(b.kind != kind for b in batches):
        raise DomainError("cannot concatenate batches of different kinds")
    vectors = np.concatenate([b.vectors for b in batches], axis=0)
    origins = [o for b in batches for o in b.origins]
    return PatchBatch(kind, vectors, origins, batches[0].norm_bounds)


def subsample(batch, cap, rng):
    """Uniform random subset of exactly ``cap`` rows (order preserved)."""
    n = len(batch)
    if cap is None or n <= cap:
        return batch
    idx = np.sort(rng.choice(n, size=int(cap), replace=False))
    return PatchBatch(batch.kind, batch.vectors[idx], [batch.origins[i] for i in idx], batch.norm_bounds)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _indexed_files(directory, prefix, suffix):
    pat = re.compile(re.escape(prefix) + r"(\d{6})" + re.escape(suffix) + r"$")
    found = {}
    for p in directory.iterdir():
        m = pat.match(p.name)
        if m:
            found[int(m.group(1))] = p
    return found


def load_sequence(path, clip_id=None):
    """Load ``frame_%06d.pgm`` files from ``path`` in index order."""
    path = Path(path)
    if not path.is_dir():
        raise LayoutError(f"{path}: not a directory")
    found = _indexed_files(path, "frame_", ".pgm")
    if not found:
        raise LayoutError(f"{path}: no frame_%06d.pgm files")
    for i in range(max(found) + 1):
        if i not in found:
            raise LayoutError(f"{path}: missing frame index {i}")
    frames = []
    for i in range(len(found)):
        img = read_pgm(found[i])
        if frames and img.shape != frames[0].shape:
            raise FormatError(f"{found[i]}: size {img.shape[::-1]} differs from {frames[0].shape[::-1]}")
        frames.append(img)
    if clip_id is None:
        clip_id = path.parent.name if path.name == "frames" else path.name
    return FrameSequence(clip_id, tuple(frames))


def load_ground_truth(path, n_frames, frame_shape=None):
    path = Path(path)
    labels_path = path / LABELS_FILE
    if not labels_path.is_file():
        raise LayoutError(f"{labels_path}: missing")
    labels = np.full(n_frames, -1, dtype=np.int64)
    for lineno, line in enumerate(labels_path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if lineno == 1 and not parts[0].lstrip("-").isdigit():
            continue  # header
        if len(parts) != 2:
            raise FormatError(f"{labels_path}:{lineno}: expected 'frame_index,label'")
        try:
            idx, lab = int(parts[0]), int(parts[1])
        except ValueError:
            raise FormatError(f"{labels_path}:{lineno}: non-integer field") from None
        if lab not in (0, 1):
            raise FormatError(f"{labels_path}:{lineno}: label {lab} not in {{0,1}}")
        if not 0 <= idx < n_frames:
            raise FormatError(f"{labels_path}:{lineno}: frame index {idx} out of range")
        labels[idx] = lab
    missing = np.flatnonzero(labels < 0)
    if missing.size:
        raise LayoutError(f"{labels_path}: no label for frame {missing[0]}")

    masks = None
    found = _indexed_files(path, "mask_", ".pgm") if path.is_dir() else {}
    if found:
        masks = []
        for i in range(n_frames):
            if i not in found:
                raise LayoutError(f"{path}: missing mask index {i}")
            m = read_pgm(found[i])
            if frame_shape is not None and m.shape != tuple(frame_shape):
                raise FormatError(f"{found[i]}: mask shape {m.shape} != frame shape {tuple(frame_shape)}")
            masks.append(m >= 128)
    return GroundTruth(labels, masks)


def list_clips(root):
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"{root}: dataset root does not exist")
    clips = sorted(p.name for p in root.iterdir() if (p / "frames").is_dir())
    if not clips:
        raise LayoutError(f"{root}: no <clip_id>/frames directories")
    return clips


def load_clip(root, clip_id, with_gt=True):
    clip_dir = Path(root) / clip_id
    seq = load_sequence(clip_dir / "frames", clip_id)
    gt = None
    if with_gt:
        gt = load_ground_truth(clip_dir / "gt", len(seq), (seq.height, seq.width))
    return seq, gt


# ---------------------------------------------------------------------------
# Patch extraction
# ---------------------------------------------------------------------------


def grid_origins(width, height, size, stride):
    """Top-left ``(x, y)`` corners of every ``size`` window at ``stride``, row-major."""
    if size > width or size > height:
        return np.empty((0, 2), dtype=np.int64)
    xs = np.arange(0, width - size + 1, stride)
    ys = np.arange(0, height - size + 1, stride)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def grid_shape(width, height, size, stride):
    if size > width or size > height:
        return 0, 0
    return (height - size) // stride + 1, (width - size) // stride + 1


def extract_appearance_patches(seq, spec, rng=None, sample_cap=None, frame_indices=None):
    """Multi-scale gray patches, bilinearly warped to the target size and
    scaled by 1/255.

    If more than ``sample_cap`` windows exist, exactly ``sample_cap`` are drawn
    uniformly without replacement using ``rng``.
    """
    if spec.channels != 1:
        raise DomainError(f"appearance patches are single-channel, spec has {spec.channels}")
    if min(spec.scales) > min(seq.width, seq.height):
        raise DomainError(
            f"frame {seq.width}x{seq.height} is smaller than the smallest scale {min(spec.scales)}"
        )
    if frame_indices is None:
        frame_indices = range(len(seq))
    frame_indices = list(frame_indices)

    # enumerate candidates as (frame_pos, scale_pos, x, y)
    per_scale = [grid_origins(seq.width, seq.height, s, spec.stride) for s in spec.scales]
    cand = []
    for fi in range(len(frame_indices)):
        for si, org in enumerate(per_scale):
            if len(org):
                block = np.empty((len(org), 4), dtype=np.int64)
                block[:, 0] = fi
                block[:, 1] = si
                block[:, 2:] = org
                cand.append(block)
    cand = np.concatenate(cand, axis=0) if cand else np.empty((0, 4), dtype=np.int64)
    if sample_cap is not None and len(cand) > sample_cap:
        if rng is None:
            raise DomainError("sample_cap requires an rng")
        cand = cand[np.sort(rng.choice(len(cand), size=int(sample_cap), replace=False))]

    vectors = np.empty((len(cand), spec.target_h * spec.target_w))
    for fi in np.unique(cand[:, 0]):
        img = seq.frames[frame_indices[fi]]
        for si in np.unique(cand[cand[:, 0] == fi, 1]):
            sel = np.flatnonzero((cand[:, 0] == fi) & (cand[:, 1] == si))
            vectors[sel] = _kernels.warp_patches(
                img, cand[sel, 2], cand[sel, 3], spec.scales[si], spec.target_w, spec.target_h
            )
    vectors /= 255.0
    origins = [
        (seq.clip_id, frame_indices[f], int(x), int(y), spec.scales[s]) for f, s, x, y in cand
    ]
    return PatchBatch(PatchKind.APPEARANCE, vectors, origins)


def flow_bounds(flows):
    """Per-channel ``((u_min, u_max), (v_min, v_max))`` over a flow corpus."""
    flows = list(flows)
    if not flows:
        raise DomainError("flow_bounds needs at least one flow field")
    u_min = min(float(f.u.min()) for f in flows)
    u_max = max(float(f.u.max()) for f in flows)
    v_min = min(float(f.v.min()) for f in flows)
    v_max = max(float(f.v.max()) for f in flows)
    return (u_min, u_max), (v_min, v_max)


def normalize_channel(values, lo, hi):
    """Linear map of ``[lo, hi]`` onto ``[0, 1]``; values outside the fitted
    range are clipped. A degenerate range maps everything to 0.5."""
    if hi <= lo:
        return np.full(np.shape(values), 0.5)
    return np.clip((np.asarray(values, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def extract_motion_patches(flows, spec, bounds=None, clip_id="", frame_indices=None):
    """Fixed-size two-channel flow patches, channel-planar (all u, then all v).

    ``bounds`` are the corpus-wide per-channel ``(min, max)`` pairs; when
    omitted they are computed from ``flows`` and stored on the batch.
    """
    if spec.channels != 2:
        raise DomainError(f"motion patches are two-channel, spec has {spec.channels}")
    flows = list(flows)
    if frame_indices is None:
        frame_indices = range(len(flows))
    frame_indices = list(frame_indices)
    if bounds is None:
        bounds = flow_bounds(flows)
    for name, (lo, hi) in zip("uv", bounds):
        if hi <= lo:
            warnings.warn(f"flow channel {name} has a degenerate range [{lo}, {hi}]; mapped to 0.5")
    size = spec.scales[0]
    rows = []
    origins = []
    for fi, flow in zip(frame_indices, flows):
        org = grid_origins(flow.width, flow.height, size, spec.stride)
        if not len(org):
            continue
        un = normalize_channel(flow.u, *bounds[0])
        vn = normalize_channel(flow.v, *bounds[1])
        pu = _kernels.warp_patches(un, org[:, 0], org[:, 1], size, spec.target_w, spec.target_h)
        pv = _kernels.warp_patches(vn, org[:, 0], org[:, 1], size, spec.target_w, spec.target_h)
        rows.append(np.concatenate([pu, pv], axis=1))
        origins.extend((clip_id, fi, int(x), int(y), size) for x, y in org)
    vectors = np.concatenate(rows, axis=0) if rows else np.empty((0, spec.dim))
    return PatchBatch(PatchKind.MOTION, vectors, origins, norm_bounds=tuple(tuple(b) for b in bounds))


def fuse_early(app, mot):
    """Pixel-level early fusion: per patch, ``[appearance || motion]``."""
    if app.kind != PatchKind.APPEARANCE or mot.kind != PatchKind.MOTION:
        raise DomainError(f"fuse_early needs (A, M) batches, got ({app.kind.value}, {mot.kind.value})")
    if len(app) != len(mot):
        raise AlignmentError(f"{len(app)} appearance patches vs {len(mot)} motion patches")
    for i, (a, m) in enumerate(zip(app.origins, mot.origins)):
        if a[:4] != m[:4]:
            raise AlignmentError(f"patch {i}: appearance origin {a} != motion origin {m}")
    vectors = np.concatenate([app.vectors, mot.vectors], axis=1)
    return PatchBatch(PatchKind.JOINT, vectors, list(app.origins), mot.norm_bounds)


def split_joint(joint, app_dim):
    """Inverse of :func:`fuse_early`."""
    app = PatchBatch(PatchKind.APPEARANCE, joint.vectors[:, :app_dim], list(joint.origins))
    mot = PatchBatch(PatchKind.MOTION, joint.vectors[:, app_dim:], list(joint.origins), joint.norm_bounds)
    return app, mot
