import hashlib

import numpy as np
import pytest

from amdn.errors import DomainError
from amdn.ingest import load_clip
from amdn.pipeline import load_split
from amdn.synth import generate


def digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_byte_identical_across_runs(tmp_path):
    for d in ("a", "b"):
        generate(tmp_path / d, seed=7, train_clips=2, test_clips=2, frames=100, width=40, height=40)
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    generate(tmp_path / "c", seed=8, train_clips=2, test_clips=2, frames=100, width=40, height=40)
    assert digest(tmp_path / "a") != digest(tmp_path / "c")


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    prevalence = generate(root, seed=3, train_clips=3, test_clips=5, frames=50, width=60, height=60, anomaly_rate=0.3)
    return root, prevalence


def test_training_split_is_normal(dataset):
    root, _ = dataset
    clips = load_split(root / "train")
    assert len(clips) == 3
    for _, gt in clips:
        assert not gt.frame_labels.any()
        assert not gt.has_masks


def test_prevalence_close_to_configured(dataset):
    root, prevalence = dataset
    labels = np.concatenate([gt.frame_labels for _, gt in load_split(root / "test")])
    assert abs(labels.mean() - 0.3) <= 0.02
    assert prevalence == pytest.approx(labels.mean())


def test_masks_match_labels(dataset):
    root, _ = dataset
    for seq, gt in load_split(root / "test"):
        assert len(gt.pixel_masks) == len(seq)
        for y, m in zip(gt.frame_labels, gt.pixel_masks):
            assert bool(m.any()) == bool(y)


def test_anomaly_is_large_bright_and_fast(dataset):
    root, _ = dataset
    seq, gt = load_clip(root / "test", "test_000")
    idx = np.flatnonzero(gt.frame_labels)
    centres = []
    for t in idx:
        m = gt.pixel_masks[t]
        assert m.sum() >= 14 * 14
        assert seq.frames[t][m].mean() > 200
        ys, xs = np.nonzero(m)
        centres.append((xs.mean(), ys.mean()))
    steps = np.abs(np.diff(np.array(centres), axis=0)).max(axis=1)
    assert np.median(steps) >= 4


def test_rejects_bad_arguments(tmp_path):
    with pytest.raises(DomainError):
        generate(tmp_path, seed=0, frames=1)
    with pytest.raises(DomainError):
        generate(tmp_path, seed=0, anomaly_rate=1.5)
    with pytest.raises(DomainError):
        generate(tmp_path, seed=0, width=10, height=10)
