import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amdn.errors import DivergenceError, DomainError, ShapeError
from amdn.ingest import PatchBatch, PatchKind
from amdn.linalg import make_rng
from amdn.sdae import (
    LayerParams,
    SdaeConfig,
    SdaeModel,
    corrupt,
    dae_gradients,
    dae_objective,
    encode_layer,
    extract_features,
    finetune_gradients,
    finetune_objective,
    init_layer,
    load_model,
    pretrain_layer,
    save_model,
    sparsity_penalty,
    stack_and_finetune,
)

FD_STEP = 1e-6


def max_rel_err(analytic, numeric, floor=1e-7):
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def central_diff(f, p):
    g = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + FD_STEP
        hi = f()
        p[idx] = old - FD_STEP
        lo = f()
        p[idx] = old
        g[idx] = (hi - lo) / (2 * FD_STEP)
    return g


def batch(X, kind=PatchKind.APPEARANCE):
    return PatchBatch(kind, X, [("c", i, 0, 0, 1) for i in range(len(X))])


def separable(n=200, dim=20, seed=0):
    """Two well separated clusters of [0, 1] vectors."""
    g = np.random.default_rng(seed)
    centres = g.random((2, dim))
    labels = g.integers(0, 2, n)
    return np.clip(centres[labels] + 0.05 * g.standard_normal((n, dim)), 0, 1)


def test_encode_layer_zero_weights():
    out = encode_layer(LayerParams(np.zeros((3, 4)), np.zeros(3)), np.arange(4.0))
    assert np.all(out == 0.5)


def test_encode_layer_saturation():
    out = encode_layer(LayerParams(np.eye(2), np.zeros(2)), [0.0, 800.0])
    assert out[0] == 0.5 and out[1] == pytest.approx(1.0)


def test_encode_layer_direct_formula(rng):
    W, b, x = rng.standard_normal((3, 2)), rng.standard_normal(3), rng.standard_normal(2)
    ref = [1.0 / (1.0 + np.exp(-(sum(W[i, j] * x[j] for j in range(2)) + b[i]))) for i in range(3)]
    assert np.max(np.abs(encode_layer(LayerParams(W, b), x) - ref)) <= 1e-12


def test_encode_layer_shape_error():
    with pytest.raises(ShapeError):
        encode_layer(LayerParams(np.zeros((2, 3)), np.zeros(2)), np.zeros(4))


def test_corrupt_identity_at_zero_variance():
    x = np.arange(5.0)
    assert np.array_equal(corrupt(x, 0.0, make_rng(0)), x)


def test_corrupt_statistics_and_determinism():
    x = np.full(100_000, 0.3)
    y = corrupt(x, 0.0003, make_rng(4))
    assert abs((y - x).var() / 0.0003 - 1) <= 0.2
    assert np.array_equal(y, corrupt(x, 0.0003, make_rng(4)))
    assert y.max() > 0.3  # unclipped noise in both directions
    assert y.min() < 0.3


def test_init_layer_xavier_range():
    layer = init_layer(30, 10, make_rng(0))
    r = np.sqrt(6 / 40)
    assert np.abs(layer.W).max() <= r and np.all(layer.b == 0)


def test_sparsity_penalty_minimum_at_target():
    mu = 0.05
    grid = np.linspace(0.001, 0.999, 999)
    vals = [sparsity_penalty(mu, np.array([m])) for m in grid]
    assert min(vals) >= 0
    assert grid[int(np.argmin(vals))] == pytest.approx(mu, abs=1e-3)
    assert sparsity_penalty(mu, np.full(4, mu)) == pytest.approx(0.0, abs=1e-15)


@given(st.integers(2, 6), st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**31), st.booleans())
def test_dae_gradient_finite_differences(n_in, n_hid, n, seed, sparse):
    g = np.random.default_rng(seed)
    enc = LayerParams(g.standard_normal((n_hid, n_in)), 0.3 * g.standard_normal(n_hid))
    dec = LayerParams(g.standard_normal((n_in, n_hid)), 0.3 * g.standard_normal(n_in))
    X = g.random((n, n_in))
    Xn = X + 0.05 * g.standard_normal(X.shape)
    lam, beta, mu = 0.01, (0.7 if sparse else 0.0), 0.2

    def f():
        return dae_objective(enc, dec, X, Xn, lam, beta, mu)

    obj, grads = dae_gradients(enc, dec, X, Xn, lam, beta, mu)
    assert obj == pytest.approx(f(), rel=1e-12)
    for p, gr in zip((enc.W, enc.b, dec.W, dec.b), grads):
        assert max_rel_err(gr, central_diff(f, p)) <= 1e-5


def test_finetune_gradient_tiny_net(rng):
    # 6 -> 4 -> 2 -> 4 -> 6
    shapes = [(4, 6), (2, 4), (4, 2), (6, 4)]
    layers = [LayerParams(rng.standard_normal(s), 0.2 * rng.standard_normal(s[0])) for s in shapes]
    X = rng.random((5, 6))

    def f():
        return finetune_objective(layers, X, 1e-3)

    _, grads = finetune_gradients(layers, X, 1e-3)
    for layer, (gW, gb) in zip(layers, grads):
        assert max_rel_err(gW, central_diff(f, layer.W)) <= 1e-5
        assert max_rel_err(gb, central_diff(f, layer.b)) <= 1e-5


def test_pretrain_halves_objective():
    X = separable()
    cfg = SdaeConfig([20, 10], learning_rate=0.1, batch_size=20, pretrain_epochs=50)
    _, _, hist = pretrain_layer(X, 20, 10, cfg, make_rng(0))
    assert len(hist) == 51
    assert hist[-1] <= 0.5 * hist[0]


def test_pretrain_heavy_penalty_shrinks_weights():
    X = separable(100, 8)
    cfg = SdaeConfig([8, 4], lambda_pre=1e6, learning_rate=1e-7, batch_size=10, pretrain_epochs=30)
    enc, dec, _ = pretrain_layer(X, 8, 4, cfg, make_rng(1))
    assert np.abs(enc.W).max() < 1e-3 and np.abs(dec.W).max() < 1e-3
    out = encode_layer(dec, encode_layer(enc, X))
    assert np.ptp(out, axis=0).max() < 1e-3  # reconstruction no longer depends on the input


def test_pretrain_divergence_reports_epoch():
    X = separable(40, 6)
    cfg = SdaeConfig([6, 3], learning_rate=1e200, batch_size=10, pretrain_epochs=3)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
        pretrain_layer(X, 6, 3, cfg, make_rng(0))
    assert info.value.epoch == 1


def test_pretrain_rejects_small_data():
    cfg = SdaeConfig([4, 2], batch_size=10)
    with pytest.raises(DomainError):
        pretrain_layer(np.zeros((5, 4)), 4, 2, cfg, make_rng(0))


def test_config_validation():
    with pytest.raises(DomainError):
        SdaeConfig([225, 256, 100])
    with pytest.raises(DomainError):
        SdaeConfig([10, 4], sparsity_target=1.0)
    SdaeConfig([225, 1024, 512, 256, 128])


@pytest.fixture(scope="module")
def small_model():
    X = separable(300, 12, seed=5)
    cfg = SdaeConfig([12, 8, 4], learning_rate=0.1, batch_size=20, pretrain_epochs=20, finetune_epochs=20)
    return stack_and_finetune(batch(X), cfg, make_rng(2)), X


def test_stack_structure(small_model):
    model, _ = small_model
    assert model.n_layers == 5
    assert [l.W.shape for l in model.encoder] == [(8, 12), (4, 8)]
    assert [l.W.shape for l in model.decoder] == [(8, 4), (12, 8)]
    for l, dec in enumerate(model.decoder):
        assert dec.W.shape == model.encoder[len(model.encoder) - 1 - l].W.shape[::-1]


def test_finetune_does_not_increase_objective(small_model):
    hist = small_model[0].history["finetune"]
    assert hist[-1] <= hist[0]


def test_features_in_open_unit_interval(small_model):
    model, X = small_model
    f = extract_features(model, batch(X))
    assert f.shape == (len(X), 4)
    assert f.min() > 0 and f.max() < 1
    assert np.array_equal(f, extract_features(model, batch(X)))


def test_features_kind_mismatch(small_model):
    model, X = small_model
    with pytest.raises(DomainError):
        extract_features(model, batch(X, PatchKind.MOTION))


def test_zero_weight_model_features():
    enc = [LayerParams(np.zeros((4, 6)), np.zeros(4)), LayerParams(np.zeros((2, 4)), np.zeros(2))]
    dec = [LayerParams(np.zeros((4, 2)), np.zeros(4)), LayerParams(np.zeros((6, 4)), np.zeros(6))]
    m = SdaeModel(PatchKind.APPEARANCE, enc, dec, SdaeConfig([6, 4, 2]))
    assert np.all(extract_features(m, batch(np.random.default_rng(0).random((3, 6)))) == 0.5)


def test_serialization_round_trip(small_model, tmp_path):
    model, X = small_model
    model.norm_bounds = ((-1.5, 2.0), (-0.25, 0.75))
    save_model(tmp_path / "m.json", model)
    loaded = load_model(tmp_path / "m.json")
    assert loaded.norm_bounds == model.norm_bounds
    assert loaded.config == model.config
    assert np.array_equal(extract_features(loaded, batch(X)), extract_features(model, batch(X)))


def test_paper_arch_appearance_dims():
    from amdn import config

    cfg = config.build(paper_arch=True)
    assert config.sdae_config(cfg, "A").layer_dims == [225, 1024, 512, 256, 128]
    assert config.sdae_config(cfg, "J").layer_dims == [675, 2048, 1024, 512, 256]
