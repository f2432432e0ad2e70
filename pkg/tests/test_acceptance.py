"""Acceptance criteria 1 to 10. Each test carries a ``criterion`` marker; the
session summary prints one PASS/FAIL line per criterion."""

import dataclasses
import itertools
import json
import subprocess
import sys
import time

import numpy as np
import pytest
from conftest import textured

from amdn import config, eval as ev, fusion, ocsvm, sdae
from amdn.ingest import PatchSpec, extract_appearance_patches, load_clip
from amdn.linalg import make_rng
from amdn.optflow import horn_schunck
from amdn.synth import generate

STEP = 1e-6


def numeric_grad(f, p):
    g = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + STEP
        hi = f()
        p[idx] = old - STEP
        lo = f()
        p[idx] = old
        g[idx] = (hi - lo) / (2 * STEP)
    return g


def rel_err(a, n, floor=1e-7):
    a, n = np.ravel(a), np.ravel(n)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


@pytest.mark.criterion(1, "analytic gradients match central differences")
def test_gradient_correctness():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        g = np.random.default_rng(seed)
        X = g.random((7, 6))
        # each pretraining layer of a 6 -> 4 -> 2 stack, with the sparsity term
        h = X
        for n_in, n_hid in ((6, 4), (4, 2)):
            enc = sdae.LayerParams(g.standard_normal((n_hid, n_in)), 0.3 * g.standard_normal(n_hid))
            dec = sdae.LayerParams(g.standard_normal((n_in, n_hid)), 0.3 * g.standard_normal(n_in))
            noisy = h + 0.02 * g.standard_normal(h.shape)

            def f():
                return sdae.dae_objective(enc, dec, h, noisy, 1e-3, 0.1, 0.05)

            _, grads = sdae.dae_gradients(enc, dec, h, noisy, 1e-3, 0.1, 0.05)
            for p, gr in zip((enc.W, enc.b, dec.W, dec.b), grads):
                worst = max(worst, rel_err(gr, numeric_grad(f, p)))
            h = sdae.encode_layer(enc, h)
        # the unrolled 6 -> 4 -> 2 -> 4 -> 6 network
        layers = [
            sdae.LayerParams(g.standard_normal(s), 0.2 * g.standard_normal(s[0]))
            for s in ((4, 6), (2, 4), (4, 2), (6, 4))
        ]

        def f():
            return sdae.finetune_objective(layers, X, 1e-3)

        _, grads = sdae.finetune_gradients(layers, X, 1e-3)
        for layer, (gW, gb) in zip(layers, grads):
            worst = max(worst, rel_err(gW, numeric_grad(f, layer.W)), rel_err(gb, numeric_grad(f, layer.b)))
    assert worst <= 1e-5
    assert time.perf_counter() - t0 < 5.0


@pytest.mark.criterion(2, "each pretrained layer halves its objective in 50 epochs")
def test_pretraining_efficacy(tmp_path):
    t0 = time.perf_counter()
    generate(tmp_path, seed=1, train_clips=1, test_clips=1, frames=20)
    seq, _ = load_clip(tmp_path / "train", "train_000", with_gt=False)
    patches = extract_appearance_patches(seq, PatchSpec((15,), 5), rng=make_rng(0), sample_cap=500)
    assert len(patches.vectors) == 500
    cfg = dataclasses.replace(config.sdae_config(config.build(), "A"), pretrain_epochs=50, finetune_epochs=0)
    model = sdae.stack_and_finetune(patches, cfg, make_rng(0))
    for hist in model.history["pretrain"]:
        assert len(hist) == 51
        assert hist[-1] <= 0.5 * hist[0]
    assert time.perf_counter() - t0 < 60.0


@pytest.mark.criterion(3, "one-class SVM nu-property")
def test_ocsvm_nu_property():
    t0 = time.perf_counter()
    X = np.random.default_rng(0).standard_normal((200, 2))
    model = ocsvm.train(X, ocsvm.OcsvmConfig(nu=0.1))
    s = ocsvm.score_batch(model, X)
    assert np.mean(s > 0) <= 0.15
    assert model.n_support / 200 >= 0.09
    C = 1.0 / (0.1 * 200)
    a = model.dual_coeffs
    assert abs(a.sum() - 1.0) <= 1e-9
    assert max(0.0, -a.min(), a.max() - C) <= 1e-9
    assert time.perf_counter() - t0 < 10.0


def grid_min(K, C, step):
    n = len(K)
    ticks = np.round(np.arange(0.0, C + 1e-12, step), 12)
    best = np.inf
    for head in itertools.product(ticks, repeat=n - 1):
        last = 1.0 - sum(head)
        if -1e-12 <= last <= C + 1e-12:
            a = np.array(head + (max(last, 0.0),))
            best = min(best, 0.5 * a @ K @ a)
    return best


@pytest.mark.criterion(4, "one-class SVM dual matches exhaustive grid search")
@pytest.mark.parametrize("n,nu,step", [(3, 0.5, 0.005), (4, 0.5, 0.01), (5, 0.4, 0.05), (6, 0.5, 1 / 30)])
def test_ocsvm_oracle(n, nu, step):
    X = np.random.default_rng(10 + n).standard_normal((n, 2))
    model = ocsvm.train(X, ocsvm.OcsvmConfig(nu=nu, rbf_sigma=0.8, tolerance=1e-10), record_objective=True)
    oracle = grid_min(ocsvm.kernel_matrix(X, X, 0.8), 1.0 / (nu * n), step)
    assert abs(model.objective_trace[-1] - oracle) <= 1e-3


@pytest.mark.criterion(5, "simplex projection against grid brute force")
def test_simplex_projection():
    k = 1000
    i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    keep = i + j <= k
    grid = np.stack([i[keep], j[keep], (k - i - j)[keep]], axis=1) / k
    g = np.random.default_rng(0)
    for _ in range(100):
        c = g.uniform(-2, 2, 3)
        a = fusion.project_simplex(c)
        brute = grid[np.argmin(np.sum((grid - c) ** 2, axis=1))]
        assert np.max(np.abs(a - brute)) <= 2e-3
        assert abs(a.sum() - 1.0) <= 1e-12 and a.min() >= 1e-6


@pytest.mark.criterion(6, "fusion subspace trace identity")
def test_trace_identity():
    g = np.random.default_rng(0)
    for _ in range(20):
        dim = int(g.integers(4, 24))
        S = g.standard_normal((dim, int(g.integers(dim, 3 * dim))))
        vals = np.sort(np.linalg.eigvalsh(S @ S.T))[::-1]
        for d in (1, 4, dim):
            W = fusion.learn_subspace(S, d)
            P = W @ S
            ref = vals[:d].sum()
            assert abs(np.trace(P @ P.T) - ref) <= 1e-8 * ref


@pytest.mark.criterion(7, "Horn-Schunck recovers a 1 px shift; energy non-increasing")
def test_optical_flow():
    f0 = textured((64, 64))
    f1 = np.roll(f0, 1, axis=1)
    flow, energy = horn_schunck(f0, f1, alpha=1.0, iters=200, return_energy=True)
    m = 10
    epe = np.hypot(flow.u[m:-m, m:-m] - 1.0, flow.v[m:-m, m:-m])
    assert epe.mean() <= 0.2
    e = np.asarray(energy)
    assert np.all(np.diff(e) <= 1e-12 * e[:-1])


@pytest.mark.criterion(8, "trapezoid AUC equals pairwise AUC; 40% overlap boundary")
def test_evaluation():
    g = np.random.default_rng(0)
    for _ in range(1000):
        n = int(g.integers(2, 80))
        # coarse scores so that ties occur
        s = np.round(g.standard_normal(n), int(g.integers(0, 3)))
        y = g.integers(0, 2, n)
        y[0], y[1] = 0, 1
        assert abs(ev.frame_roc(s, y).auc - ev.pairwise_auc(s, y)) <= 1e-9
    truth = np.zeros((20, 20), bool)
    truth[:, :10] = True
    det = np.zeros_like(truth)
    det[:8, :10] = True  # exactly 40%
    assert not ev.covers(det, truth)
    det[8, 0] = True
    assert ev.covers(det, truth)


def run_e2e(root):
    """synth -> train -> score -> eval through the CLI with default settings."""
    def cli(*args):
        subprocess.run([sys.executable, "-m", "amdn.cli", *args], cwd=root, check=True,
                       capture_output=True, text=True)

    t0 = time.perf_counter()
    cli("synth", "--out", "data", "--seed", "7")
    cli("train", "--data", "data/train", "--run", "run", "--seed", "7")
    cli("score", "--data", "data/test", "--run", "run", "--seed", "7")
    cli("eval", "--data", "data/test", "--run", "run", "--seed", "7")
    return time.perf_counter() - t0


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    return root, run_e2e(root)


@pytest.mark.slow
@pytest.mark.criterion(9, "synthetic end-to-end detection")
def test_end_to_end(e2e):
    root, seconds = e2e
    summary = json.loads((root / "run" / "eval" / "summary.json").read_text())
    auc = summary["frame"]["auc"]
    assert auc >= 0.90
    for k, single in summary["pipelines"].items():
        assert auc >= single - 0.02, k
    assert seconds <= 15 * 60


@pytest.mark.slow
@pytest.mark.criterion(10, "identical seeds give byte-identical summaries")
def test_determinism(e2e, tmp_path):
    root, _ = e2e
    run_e2e(tmp_path)
    first = (root / "run" / "eval" / "summary.json").read_bytes()
    assert (tmp_path / "run" / "eval" / "summary.json").read_bytes() == first
