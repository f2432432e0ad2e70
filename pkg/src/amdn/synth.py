"""Seed-deterministic synthetic surveillance scenes in the dataset layout.

Every clip shares one static, smooth background. Normal activity is a few
small dark squares drifting at most one pixel per frame. Anomalous test
frames additionally contain a large bright square that moves 4-6 pixels per
frame and bounces off the borders; it is visible for one contiguous interval
per clip whose length is ``round(anomaly_rate * frames)``.
"""

import logging
from pathlib import Path

import numpy as np

from .errors import DomainError
from .ingest import FRAME_PATTERN, LABELS_FILE, MASK_PATTERN, write_pgm
from .linalg import fork_rng

log = logging.getLogger(__name__)

N_WALKERS = 3
WALKER_SIZE = (4, 7)
WALKER_LEVEL = 45.0
INTRUDER_SIZE = (14, 18)
INTRUDER_LEVEL = 230.0
INTRUDER_SPEED = (4, 6)
NOISE_STD = 2.0


def smooth_background(rng, height, width, lo=110.0, hi=150.0):
    """Low-frequency texture rescaled to ``[lo, hi]``."""
    noise = rng.standard_normal((height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    sigma = max(height, width) / 10.0
    kernel = np.exp(-2.0 * (np.pi * sigma) ** 2 * (fx**2 + fy**2))
    field = np.real(np.fft.ifft2(np.fft.fft2(noise) * kernel))
    field -= field.min()
    field /= max(field.max(), 1e-12)
    return lo + (hi - lo) * field


def _bounce(pos, vel, lo, hi):
    pos = pos + vel
    for axis in range(2):
        if pos[axis] < lo[axis]:
            pos[axis] = 2 * lo[axis] - pos[axis]
            vel[axis] = -vel[axis]
        elif pos[axis] > hi[axis]:
            pos[axis] = 2 * hi[axis] - pos[axis]
            vel[axis] = -vel[axis]
    return pos, vel


def _walkers(rng, n_frames, height, width):
    """Tracks of small dark squares: ``(size, positions (n_frames, 2))``."""
    tracks = []
    for _ in range(N_WALKERS):
        size = int(rng.integers(*WALKER_SIZE))
        hi = np.array([width - size, height - size], dtype=np.int64)
        pos = np.array([rng.integers(0, hi[0] + 1), rng.integers(0, hi[1] + 1)], dtype=np.int64)
        vel = rng.integers(-1, 2, size=2)
        path = np.empty((n_frames, 2), dtype=np.int64)
        for t in range(n_frames):
            path[t] = pos
            if rng.random() < 0.1:
                vel = rng.integers(-1, 2, size=2)
            pos, vel = _bounce(pos, vel, np.zeros(2, dtype=np.int64), hi)
        tracks.append((size, path))
    return tracks


def _intruder(rng, n_frames, height, width, length):
    """Large fast bright square visible on ``[start, start + length)``."""
    size = int(rng.integers(INTRUDER_SIZE[0], INTRUDER_SIZE[1] + 1))
    if size > min(height, width):
        raise DomainError(f"frames {width}x{height} too small for a {size}px anomaly")
    hi = np.array([width - size, height - size], dtype=np.int64)
    start = int(rng.integers(0, n_frames - length + 1))
    speed = rng.integers(INTRUDER_SPEED[0], INTRUDER_SPEED[1] + 1, size=2)
    sign = rng.choice([-1, 1], size=2)
    vel = speed * sign
    pos = np.array([rng.integers(0, hi[0] + 1), rng.integers(0, hi[1] + 1)], dtype=np.int64)
    path = {}
    for t in range(start, start + length):
        path[t] = pos.copy()
        pos, vel = _bounce(pos, vel, np.zeros(2, dtype=np.int64), hi)
    return size, path


def render_clip(background, rng, n_frames, anomaly_frames=0):
    """Frames, per-frame labels and masks for one clip."""
    height, width = background.shape
    walkers = _walkers(rng, n_frames, height, width)
    intruder = _intruder(rng, n_frames, height, width, anomaly_frames) if anomaly_frames else None
    frames, labels, masks = [], [], []
    for t in range(n_frames):
        img = background.copy()
        for size, path in walkers:
            x, y = path[t]
            img[y : y + size, x : x + size] = WALKER_LEVEL
        mask = np.zeros((height, width), dtype=bool)
        if intruder is not None and t in intruder[1]:
            size = intruder[0]
            x, y = intruder[1][t]
            img[y : y + size, x : x + size] = INTRUDER_LEVEL
            mask[y : y + size, x : x + size] = True
        img = img + NOISE_STD * rng.standard_normal(img.shape)
        frames.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
        labels.append(int(mask.any()))
        masks.append(mask)
    return frames, labels, masks


def write_clip(root, clip_id, frames, labels, masks=None):
    clip = Path(root) / clip_id
    (clip / "frames").mkdir(parents=True, exist_ok=True)
    (clip / "gt").mkdir(parents=True, exist_ok=True)
    for t, f in enumerate(frames):
        write_pgm(clip / "frames" / FRAME_PATTERN.format(t), f)
    with open(clip / "gt" / LABELS_FILE, "w") as fh:
        fh.write("frame_index,label\n")
        for t, y in enumerate(labels):
            fh.write(f"{t},{y}\n")
    if masks is not None:
        for t, m in enumerate(masks):
            write_pgm(clip / "gt" / MASK_PATTERN.format(t), m.astype(np.uint8) * 255)


def generate(out, seed, train_clips=4, test_clips=4, frames=40, width=60, height=60, anomaly_rate=0.4):
    """Write ``<out>/train`` (anomaly-free) and ``<out>/test`` (with masks).

    Returns the test-split anomaly prevalence.
    """
    if frames < 2:
        raise DomainError(f"clips need at least 2 frames, got {frames}")
    if not 0.0 <= anomaly_rate <= 1.0:
        raise DomainError(f"anomaly_rate must lie in [0, 1], got {anomaly_rate}")
    out = Path(out)
    background = smooth_background(fork_rng(seed, "synth", "background"), height, width)
    for i in range(train_clips):
        rng = fork_rng(seed, "synth", "train", i)
        f, y, _ = render_clip(background, rng, frames)
        write_clip(out / "train", f"train_{i:03d}", f, y)
    n_anom = int(round(anomaly_rate * frames))
    total = 0
    for i in range(test_clips):
        rng = fork_rng(seed, "synth", "test", i)
        f, y, m = render_clip(background, rng, frames, n_anom)
        write_clip(out / "test", f"test_{i:03d}", f, y, m)
        total += sum(y)
    prevalence = total / (test_clips * frames) if test_clips else 0.0
    log.info("synth: %d train + %d test clips of %d frames, test prevalence %.4f",
             train_clips, test_clips, frames, prevalence)
    return prevalence
