"""Dense optical flow: an in-repo Horn-Schunck solver and Middlebury ``.flo`` I/O."""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DomainError, FormatError, LayoutError, ShapeError

log = logging.getLogger(__name__)

FLO_MAGIC = 202021.25
FLOW_PATTERN = "flow_{:06d}.flo"


@dataclass
class FlowField:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ShapeError(f"flow channels must be equal 2-D arrays, got {self.u.shape} and {self.v.shape}")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise DomainError("flow contains NaN or Inf")

    @property
    def height(self):
        return self.u.shape[0]

    @property
    def width(self):
        return self.u.shape[1]


def image_derivatives(prev, nxt, wrap=False):
    """Spatial gradients of the two-frame average (central differences) and
    the temporal difference ``next - prev``."""
    f0 = np.asarray(prev, dtype=np.float64)
    f1 = np.asarray(nxt, dtype=np.float64)
    avg = 0.5 * (f0 + f1)
    p = np.pad(avg, 1, mode="wrap" if wrap else "edge")
    Ix = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    Iy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    It = f1 - f0
    return Ix, Iy, It


def horn_schunck(prev, nxt, alpha=1.0, iters=200, wrap=False, return_energy=False):
    """Horn-Schunck flow from ``prev`` to ``nxt``.

    Intensities are used as given (0-255 for 8-bit frames), so ``alpha`` is in
    intensity units. ``wrap=True`` treats the frame as periodic, which makes
    the solver exactly translation-equivariant. With ``return_energy`` the
    per-iteration objective is returned as a second value.
    """
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    if prev.shape != nxt.shape:
        raise ShapeError(f"frame sizes differ: {prev.shape} vs {nxt.shape}")
    if prev.ndim != 2:
        raise ShapeError(f"frames must be 2-D, got {prev.shape}")
    if alpha <= 0:
        raise DomainError(f"alpha must be > 0, got {alpha}")
    if iters < 1:
        raise DomainError(f"iters must be >= 1, got {iters}")
    Ix, Iy, It = image_derivatives(prev, nxt, wrap)
    u, v, energies = _kernels.hs_solve(Ix, Iy, It, alpha, iters, wrap=wrap, record=return_energy)
    flow = FlowField(u, v)
    if return_energy:
        return flow, energies
    return flow


def hs_energy(prev, nxt, flow, alpha=1.0, wrap=False):
    Ix, Iy, It = image_derivatives(prev, nxt, wrap)
    return _kernels.hs_energy(Ix, Iy, It, flow.u, flow.v, alpha, wrap)


def clip_flows(seq, alpha=1.0, iters=200):
    """One flow field per frame: frame t uses (t, t+1); the last frame reuses
    the previous field."""
    flows = [horn_schunck(seq.frames[t], seq.frames[t + 1], alpha, iters) for t in range(len(seq) - 1)]
    log.debug("clip %s: last frame inherits flow of frame %d", seq.clip_id, len(seq) - 2)
    flows.append(flows[-1])
    return flows


# ---------------------------------------------------------------------------
# Middlebury .flo
# ---------------------------------------------------------------------------


def write_flo(path, flow):
    h, w = flow.u.shape
    inter = np.empty((h, w, 2), dtype="<f4")
    inter[..., 0] = flow.u
    inter[..., 1] = flow.v
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(inter.tobytes())


def load_flo(path):
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: truncated .flo header")
    magic, w, h = struct.unpack("<fii", data[:12])
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad .flo magic {magic}")
    if w < 1 or h < 1:
        raise FormatError(f"{path}: invalid .flo size {w}x{h}")
    need = 12 + 8 * w * h
    if len(data) < need:
        raise FormatError(f"{path}: truncated .flo payload ({len(data)} of {need} bytes)")
    arr = np.frombuffer(data, dtype="<f4", count=2 * w * h, offset=12).reshape(h, w, 2)
    return FlowField(arr[..., 0].astype(np.float64), arr[..., 1].astype(np.float64))


def load_flo_dir(path, n_frames):
    """Load ``flow_%06d.flo`` for frames ``0..n_frames-2``; the last frame
    reuses the previous field unless a file for it exists."""
    path = Path(path)
    if not path.is_dir():
        raise LayoutError(f"{path}: flow directory missing")
    flows = []
    for t in range(n_frames - 1):
        p = path / FLOW_PATTERN.format(t)
        if not p.is_file():
            raise LayoutError(f"{path}: missing flow index {t}")
        flows.append(load_flo(p))
    last = path / FLOW_PATTERN.format(n_frames - 1)
    flows.append(load_flo(last) if last.is_file() else flows[-1])
    return flows
