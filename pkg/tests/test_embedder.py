import numpy as np
import pytest

from lorafp.embedder.layers import (Conv2d, Dense, GlobalAvgPool, L2Normalize,
                                    ReLU, ResidualBlock)
from lorafp.embedder.model import EmbedderConfig, LayerStack, RffExtractor
from lorafp.embedder.training import (TrainConfig, train, triplet_loss,
                                      triplet_loss_batch)
from lorafp.embedder.weights_io import (load_model, load_weights, save_weights,
                                        weight_file_hash)
from lorafp.errors import ConfigError, ContractError, IntegrityError

TINY = EmbedderConfig(input_shape=(16, 12), stem_filters=4, stage2_filters=6,
                      embedding_dim=8)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


# -- triplet loss -----------------------------------------------------------

def test_triplet_loss_arithmetic_table():
    alpha = 0.1
    a = unit([1, 0, 0, 0])
    # D(a, n) = 0.5  <=>  cos(angle) = 1 - 0.5^2/2
    n = unit([0.875, np.sqrt(1 - 0.875**2), 0, 0])
    assert triplet_loss(a, a, n, alpha) == 0.0

    # D(a, p) = 0.5, D(a, n) = 0.2 -> 0.5 - 0.2 + 0.1 = 0.4
    p = unit([0.875, 0, np.sqrt(1 - 0.875**2), 0])
    n2 = unit([0.98, 0, 0, np.sqrt(1 - 0.98**2)])
    got = triplet_loss(a, p, n2, alpha)
    assert got == pytest.approx(0.4, abs=1e-12)

    assert triplet_loss(a, a, a, alpha) == alpha


def test_triplet_loss_batch_matches_scalar():
    rng = np.random.default_rng(0)
    emb = rng.standard_normal((6, 8))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    trips = np.array([[0, 1, 2], [3, 4, 5], [1, 0, 4]])
    loss, _ = triplet_loss_batch(emb, trips[:, 0], trips[:, 1], trips[:, 2], 0.3)
    want = np.mean([triplet_loss(emb[a], emb[p], emb[n], 0.3) for a, p, n in trips])
    assert loss == pytest.approx(want, rel=1e-12)


def test_inactive_triplets_have_exactly_zero_gradient():
    a = unit([1, 0, 0, 0])
    p = unit([0.9999, 0.01, 0, 0])        # very close positive
    n = unit([0, 1, 0, 0])                # far negative: hinge strictly inactive
    emb = np.stack([a, p, n])
    loss, d_emb = triplet_loss_batch(emb, [0], [1], [2], alpha=0.1)
    assert loss == 0.0
    assert np.all(d_emb == 0.0)


def test_gradient_scaling_linearity():
    model = RffExtractor(TINY, seed=1, dtype=np.float64)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 16, 12))
    emb = model.forward(x)
    _, d_emb = triplet_loss_batch(emb, [0], [1], [2], alpha=1.0)
    model.backward(d_emb)
    g1 = {k: v.copy() for k, v in model.grads().items()}
    model.forward(x)
    model.backward(2.0 * d_emb)
    g2 = model.grads()
    for name in g1:
        assert np.array_equal(2.0 * g1[name], g2[name])


# -- forward contracts -------------------------------------------------------

def test_forward_output_is_unit_norm():
    model = RffExtractor(TINY, seed=3)
    rng = np.random.default_rng(4)
    out = model.forward(rng.standard_normal((5, 16, 12)))
    assert out.shape == (5, 8)
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-6)


def test_forward_zero_input_is_finite_and_deterministic():
    model = RffExtractor(TINY, seed=5)
    out1 = model.forward(np.zeros((1, 16, 12)))
    out2 = model.forward(np.zeros((1, 16, 12)))
    assert np.all(np.isfinite(out1))
    assert np.array_equal(out1, out2)
    # Zero activations + zero biases: the norm floor yields the zero vector.
    assert np.all(out1 == 0.0)


def test_forward_bit_identical_across_instantiations():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 16, 12))
    a = RffExtractor(TINY, seed=7).forward(x)
    b = RffExtractor(TINY, seed=7).forward(x)
    assert np.array_equal(a, b)
    c = RffExtractor(TINY, seed=8).forward(x)
    assert not np.array_equal(a, c)


def test_forward_shape_contract():
    model = RffExtractor(TINY, seed=0)
    with pytest.raises(ContractError):
        model.forward(np.zeros((2, 8, 8)))


def test_width_scale_dimensions():
    cfg = EmbedderConfig(width_scale=8.0)
    assert cfg.eff_stem_filters == 4
    assert cfg.eff_stage2_filters == 8
    assert cfg.eff_embedding_dim == 64
    full = EmbedderConfig()
    assert (full.eff_stem_filters, full.eff_stage2_filters,
            full.eff_embedding_dim) == (32, 64, 512)
    with pytest.raises(ConfigError):
        EmbedderConfig(margin_alpha=0.0)


# -- gradient checks ----------------------------------------------------------

def _loss(model, x, trips, alpha):
    emb = model.forward(x)
    loss, _ = triplet_loss_batch(emb, trips[:, 0], trips[:, 1], trips[:, 2], alpha)
    return loss


def _analytic_grads(model, x, trips, alpha):
    emb = model.forward(x)
    loss, d_emb = triplet_loss_batch(emb, trips[:, 0], trips[:, 1], trips[:, 2], alpha)
    model.backward(d_emb)
    return loss, {k: v.copy() for k, v in model.grads().items()}


def _check_gradients(model, x, trips, alpha, h=1e-6, tol=1e-4):
    _, grads = _analytic_grads(model, x, trips, alpha)
    params = model.params()
    for name, arr in params.items():
        fd = np.zeros_like(arr)
        flat = arr.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _loss(model, x, trips, alpha)
            flat[i] = orig - h
            down = _loss(model, x, trips, alpha)
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * h)
        num = np.linalg.norm(grads[name] - fd)
        den = max(np.linalg.norm(grads[name]), np.linalg.norm(fd), 1e-12)
        assert num / den < tol, f"{name}: rel err {num / den:.2e}"


def test_gradcheck_two_conv_net():
    """Conv, dense, pooling, normalization and hinge, double precision."""
    rng = np.random.default_rng(11)
    model = LayerStack([
        Conv2d("c1", 3, 3, 1, 3, stride=2, rng=rng, dtype=np.float64),
        ReLU(),
        Conv2d("c2", 3, 3, 3, 4, stride=1, rng=rng, dtype=np.float64),
        ReLU(),
        GlobalAvgPool(),
        Dense("fc", 4, 8, rng=rng, dtype=np.float64),
        L2Normalize(),
    ])
    x = rng.standard_normal((6, 12, 10, 1))
    trips = np.array([[0, 1, 2], [3, 4, 5], [1, 0, 4], [2, 5, 3]])
    _check_gradients(model, x, trips, alpha=0.6)


def test_gradcheck_residual_block_with_projection():
    rng = np.random.default_rng(12)
    model = LayerStack([
        Conv2d("stem", 3, 3, 1, 3, stride=1, rng=rng, dtype=np.float64),
        ReLU(),
        ResidualBlock("block", 3, 5, stride=2, rng=rng, dtype=np.float64),
        GlobalAvgPool(),
        Dense("fc", 5, 8, rng=rng, dtype=np.float64),
        L2Normalize(),
    ])
    x = rng.standard_normal((4, 8, 6, 1))
    trips = np.array([[0, 1, 2], [2, 3, 0], [1, 3, 2]])
    _check_gradients(model, x, trips, alpha=0.6)


# -- training -----------------------------------------------------------------

def _toy_dataset(rng, n_per_device=12, separation=3.0):
    base = {
        "devA": rng.standard_normal((16, 12)) * separation,
        "devB": rng.standard_normal((16, 12)) * separation,
    }
    feats, labels = [], []
    for dev, proto in base.items():
        for _ in range(n_per_device):
            feats.append(proto + 0.3 * rng.standard_normal((16, 12)))
            labels.append(dev)
    return np.stack(feats).astype(np.float32), np.array(labels)


def _toy_train_config(seed=0):
    return TrainConfig(batch_size=8, val_fraction=0.25, seed=seed, max_epochs=15,
                       lr_patience_epochs=4, stop_patience_epochs=8,
                       initial_lr=3e-3, n_val_triplets=64)


def test_train_toy_two_devices_converges():
    rng = np.random.default_rng(21)
    feats, labels = _toy_dataset(rng)
    model, history = train(feats, labels, _toy_train_config(), TINY)
    best = min(h["val_loss"] for h in history)
    assert best < TINY.margin_alpha
    # Best-validation bookkeeping is monotone non-increasing.
    bests = [h["best_val"] for h in history]
    assert all(b2 <= b1 for b1, b2 in zip(bests, bests[1:]))


def test_train_deterministic_given_seed():
    rng = np.random.default_rng(22)
    feats, labels = _toy_dataset(rng)
    cfg = _toy_train_config(seed=5)
    m1, h1 = train(feats, labels, cfg, TINY)
    m2, h2 = train(feats, labels, cfg, TINY)
    assert [h["val_loss"] for h in h1] == [h["val_loss"] for h in h2]
    for (n1, p1), (n2, p2) in zip(m1.params().items(), m2.params().items()):
        assert n1 == n2
        assert np.array_equal(p1, p2)


def test_train_semi_hard_mining_variant():
    rng = np.random.default_rng(25)
    feats, labels = _toy_dataset(rng)
    cfg = TrainConfig(batch_size=8, val_fraction=0.25, seed=5, max_epochs=8,
                      lr_patience_epochs=4, stop_patience_epochs=8,
                      initial_lr=3e-3, n_val_triplets=64, semi_hard_mining=True)
    model, history = train(feats, labels, cfg, TINY)
    assert min(h["val_loss"] for h in history) < TINY.margin_alpha
    # Mining changes which triplets drive the updates.
    base_cfg = TrainConfig(batch_size=8, val_fraction=0.25, seed=5, max_epochs=8,
                           lr_patience_epochs=4, stop_patience_epochs=8,
                           initial_lr=3e-3, n_val_triplets=64)
    base_model, _ = train(feats, labels, base_cfg, TINY)
    diffs = [not np.array_equal(p1, p2)
             for p1, p2 in zip(model.params().values(), base_model.params().values())]
    assert any(diffs)


def test_semi_hard_selects_nearest_negative_beyond_positive():
    from lorafp.embedder.training import _semi_hard_triplets
    emb = np.array([
        [0.0, 0.0],   # anchor (dev 0)
        [1.0, 0.0],   # positive (dev 0), d_ap = 1
        [0.5, 0.0],   # dev 1: closer than positive (too easy to skip)
        [1.5, 0.0],   # dev 1: nearest beyond d_ap -> semi-hard pick
        [3.0, 0.0],   # dev 1: farther
    ])
    labels = np.array([0, 0, 1, 1, 1])
    rng = np.random.default_rng(0)
    trips = _semi_hard_triplets(emb, labels, rng)
    anchor0 = trips[trips[:, 0] == 0][0]
    assert anchor0[1] == 1 and anchor0[2] == 3


def test_train_rejects_single_device():
    rng = np.random.default_rng(23)
    feats = rng.standard_normal((10, 16, 12)).astype(np.float32)
    labels = np.array(["only"] * 10)
    with pytest.raises(ContractError):
        train(feats, labels, _toy_train_config(), TINY)


def test_train_rejects_single_sample_device():
    rng = np.random.default_rng(24)
    feats = rng.standard_normal((3, 16, 12)).astype(np.float32)
    labels = np.array(["a", "a", "b"])
    with pytest.raises(ContractError):
        train(feats, labels, _toy_train_config(), TINY)


# -- weight file --------------------------------------------------------------

def test_weights_roundtrip_and_hash(tmp_path):
    model = RffExtractor(TINY, seed=9)
    path = tmp_path / "w.lfpw"
    fingerprint = save_weights(path, model, extra_meta={"note": "test"})
    assert fingerprint == weight_file_hash(path)

    loaded = load_model(path)
    for (n1, p1), (n2, p2) in zip(model.params().items(), loaded.params().items()):
        assert n1 == n2
        assert np.array_equal(p1, p2)

    out = model.forward(np.ones((1, 16, 12)))
    out2 = loaded.forward(np.ones((1, 16, 12)))
    assert np.array_equal(out, out2)

    # Saving the loaded model reproduces the tensor payload bit-exactly.
    path2 = tmp_path / "w2.lfpw"
    save_weights(path2, loaded)
    t1, cfg1, _ = load_weights(path)
    t2, cfg2, _ = load_weights(path2)
    assert cfg1 == cfg2
    for name in t1:
        assert np.array_equal(t1[name], t2[name])


def test_weights_corruption_detected(tmp_path):
    model = RffExtractor(TINY, seed=10)
    path = tmp_path / "w.lfpw"
    save_weights(path, model)
    raw = bytearray(path.read_bytes())

    truncated = tmp_path / "trunc.lfpw"
    truncated.write_bytes(bytes(raw[:-40]))
    with pytest.raises(IntegrityError):
        load_weights(truncated)

    flipped = tmp_path / "flip.lfpw"
    raw[len(raw) // 2] ^= 0xFF
    flipped.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        load_weights(flipped)

    not_weights = tmp_path / "junk.lfpw"
    not_weights.write_bytes(b"hello world, definitely not weights")
    with pytest.raises(IntegrityError):
        load_weights(not_weights)
