"""Tests for the network core: gradients, initializers, training loop."""

import numpy as np
import pytest

from airware.core import FeatureTensor
from airware.errors import DivergenceError, ShapeMismatch
from airware.nn import (
    Conv1D,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GestureNet,
    HyperParams,
    MaxPool1D,
    MaxPool2D,
    ReLU,
    Tanh,
    TrainConfig,
    augment_shift,
    build_network,
    forward,
    init_weights,
    load_model,
    loss_and_grads,
    param_count,
    save_model,
    softmax_cross_entropy,
    train,
)

H = 1e-4


def rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def layer_gradcheck(make_layer, x_shape, seed):
    """Compare analytic and central-difference gradients of sum(out * R)."""
    rng = np.random.default_rng(seed)
    layer = make_layer(rng)
    x = rng.normal(size=x_shape)
    out = layer.forward(x, train=False)
    R = rng.normal(size=out.shape)

    def objective():
        return float((layer.forward(x, train=False) * R).sum())

    layer.forward(x, train=False)
    analytic_in = layer.backward(R)
    worst = 0.0

    num = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        x[i] += H
        up = objective()
        x[i] -= 2 * H
        down = objective()
        x[i] += H
        num[i] = (up - down) / (2 * H)
    worst = max(worst, rel_err(analytic_in, num))

    layer.forward(x, train=False)
    layer.backward(R)
    for p, g in zip(layer.params(), layer.grads()):
        analytic = g.copy()
        num = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            p[i] += H
            up = objective()
            p[i] -= 2 * H
            down = objective()
            p[i] += H
            num[i] = (up - down) / (2 * H)
        worst = max(worst, rel_err(analytic, num))
    return worst


# ---------------------------------------------------------------------------
# initializers

def test_he_normal_variance():
    rng = np.random.default_rng(0)
    w = init_weights("he-normal", (200, 500), rng)
    assert w.var() == pytest.approx(2.0 / 200, rel=0.10)


def test_glorot_uniform_bound():
    rng = np.random.default_rng(1)
    w = init_weights("glorot-uniform", (100, 100), rng)
    bound = np.sqrt(6.0 / 200)
    assert np.max(np.abs(w)) <= bound
    assert np.max(np.abs(w)) > 0.95 * bound


def test_all_initializers_are_zero_mean():
    rng = np.random.default_rng(2)
    for name in ("he-normal", "he-uniform", "glorot-normal",
                 "glorot-uniform", "lecun-normal", "lecun-uniform"):
        w = init_weights(name, (250, 400), rng)
        sigma = w.std()
        assert abs(w.mean()) < 3 * sigma / np.sqrt(w.size)


def test_uniform_variants_match_normal_variance():
    rng = np.random.default_rng(3)
    wn = init_weights("lecun-normal", (300, 300), rng)
    wu = init_weights("lecun-uniform", (300, 300), rng)
    assert wu.var() == pytest.approx(wn.var(), rel=0.10)


def test_conv_shapes_derive_fans():
    rng = np.random.default_rng(4)
    w = init_weights("he-normal", (3, 16, 100000 // (3 * 16)), rng)
    assert w.var() == pytest.approx(2.0 / 48, rel=0.10)


def test_unknown_initializer_rejected():
    with pytest.raises(ValueError):
        init_weights("xavier", (3, 3), np.random.default_rng(0))


# ---------------------------------------------------------------------------
# per-layer gradient checks

def test_conv1d_gradients():
    for seed in range(3):
        err = layer_gradcheck(lambda r: Conv1D(3, 4, 3, "he-normal", r),
                              (2, 7, 3), seed)
        assert err < 1e-4


def test_conv2d_gradients():
    for seed in range(3):
        err = layer_gradcheck(lambda r: Conv2D(2, 3, 2, "glorot-normal", r),
                              (2, 5, 6, 2), seed)
        assert err < 1e-4


def test_dense_gradients():
    for seed in range(3):
        err = layer_gradcheck(lambda r: Dense(5, 4, "lecun-normal", r),
                              (3, 5), seed)
        assert err < 1e-4


def test_pool_gradients():
    for seed in range(3):
        assert layer_gradcheck(lambda r: MaxPool1D(2), (2, 7, 3), seed) < 1e-4
        assert layer_gradcheck(lambda r: MaxPool2D(2), (2, 6, 5, 2), seed) < 1e-4


def test_activation_gradients():
    for seed in range(3):
        assert layer_gradcheck(lambda r: ReLU(), (3, 6), seed) < 1e-4
        assert layer_gradcheck(lambda r: Tanh(), (3, 6), seed) < 1e-4


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 2])
    _, grad = softmax_cross_entropy(logits, labels)
    num = np.zeros_like(logits)
    it = np.nditer(logits, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        logits[i] += H
        up, _ = softmax_cross_entropy(logits, labels)
        logits[i] -= 2 * H
        down, _ = softmax_cross_entropy(logits, labels)
        logits[i] += H
        num[i] = (up - down) / (2 * H)
    assert rel_err(grad, num) < 1e-4


def test_maxpool_routes_gradient_to_argmax_only():
    x = np.array([[[1.0], [5.0], [2.0], [3.0], [9.0], [0.0]]])  # [1, 6, 1]
    pool = MaxPool1D(2)
    out = pool.forward(x)
    assert out.ravel().tolist() == [5.0, 3.0, 9.0]
    grad = pool.backward(np.array([[[10.0], [20.0], [30.0]]]))
    assert grad.ravel().tolist() == [0.0, 10.0, 0.0, 20.0, 30.0, 0.0]


# ---------------------------------------------------------------------------
# whole networks

def tiny_net(seed=7, n_classes=2):
    # smallest two-branch net: one conv+pool per branch over 4 frames
    rng = np.random.default_rng(seed)
    spectro = [Conv1D(3, 4, 2, "he-normal", rng), ReLU(), MaxPool1D(2), Flatten()]
    ir = [Conv1D(2, 2, 2, "he-normal", rng), ReLU(), MaxPool1D(2), Flatten()]
    head = [Dense(4 + 2, n_classes, "he-normal", rng)]
    hp = HyperParams(l2=0.001, dropout_p=0.0)
    return GestureNet("M1", spectro, ir, head, n_classes, hp, (4, 3), (4, 2))


def test_whole_net_gradients_match_finite_differences():
    net = tiny_net()
    rng = np.random.default_rng(11)
    d = rng.normal(size=(3, 4, 3))
    z = rng.normal(size=(3, 4, 2))
    y = np.array([0, 1, 0])
    _, grads = loss_and_grads(net, (d, z), y)
    analytic = [g.copy() for g in grads]
    for p, g in zip(net.params(), analytic):
        num = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            p[i] += H
            up, _ = loss_and_grads(net, (d, z), y)
            p[i] -= 2 * H
            down, _ = loss_and_grads(net, (d, z), y)
            p[i] += H
            num[i] = (up - down) / (2 * H)
        assert rel_err(g, num) < 1e-4


def test_forward_rows_are_probabilities():
    net = build_network("M2", HyperParams(), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    probs = forward(net, (rng.normal(size=(5, 57, 32)), rng.normal(size=(5, 57, 2))))
    assert probs.shape == (5, 21)
    assert np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_zero_weights_give_uniform_output():
    net = build_network("M1", HyperParams(), np.random.default_rng(0))
    for p in net.params():
        p[...] = 0.0
    probs = forward(net, (np.ones((2, 57, 32)), np.ones((2, 57, 2))))
    np.testing.assert_allclose(probs, 1.0 / 21, atol=1e-12)


def test_eval_mode_is_deterministic_for_duplicates():
    net = build_network("M3", HyperParams(dropout_p=0.5), np.random.default_rng(2))
    rng = np.random.default_rng(3)
    d = np.repeat(rng.normal(size=(1, 57, 32)), 2, axis=0)
    z = np.repeat(rng.normal(size=(1, 57, 2)), 2, axis=0)
    probs = forward(net, (d, z), train_mode=False)
    np.testing.assert_array_equal(probs[0], probs[1])


def test_zero_l2_means_plain_cross_entropy():
    net = tiny_net()
    rng = np.random.default_rng(13)
    d, z = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4, 2))
    y = np.array([0, 1])
    with_l2, _ = loss_and_grads(net, (d, z), y)
    object.__setattr__(net.hparams, "l2", 0.0)
    without, _ = loss_and_grads(net, (d, z), y)
    logits = net.forward(d, z)
    plain, _ = softmax_cross_entropy(logits, y)
    assert without == pytest.approx(plain, abs=1e-12)
    assert with_l2 > without


def test_perfect_prediction_drives_loss_to_zero():
    logits = np.array([[30.0, 0.0], [0.0, 30.0]])
    loss, _ = softmax_cross_entropy(logits, np.array([0, 1]))
    assert loss < 1e-9


def test_shape_mismatch_is_reported():
    net = build_network("M1", HyperParams(), np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros((2, 50, 32)), np.zeros((2, 57, 2)))
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros((2, 57, 32)), np.zeros((3, 57, 2)))


def test_every_architecture_builds_and_runs():
    rng = np.random.default_rng(4)
    d, z = rng.normal(size=(2, 57, 32)), rng.normal(size=(2, 57, 2))
    for model_id in ("M1", "M2", "M3", "M4"):
        net = build_network(model_id, HyperParams(n_filters=8), np.random.default_rng(5))
        probs = forward(net, (d, z))
        assert probs.shape == (2, 21)


def test_architecture_shape_table():
    counts = {"M1": (2, 2), "M2": (2, 4), "M3": (3, 4), "M4": (2, 2)}
    for model_id, (n_conv, n_dense) in counts.items():
        net = build_network(model_id, HyperParams(), np.random.default_rng(0))
        spectro_convs = [l for l in net.spectro_branch
                         if isinstance(l, (Conv1D, Conv2D))]
        denses = [l for l in net.dense_head if isinstance(l, Dense)]
        assert len(spectro_convs) == n_conv
        assert len(denses) == n_dense
        ir_convs = [l for l in net.ir_branch if isinstance(l, Conv1D)]
        assert len(ir_convs) == 2
        assert all(l.W.shape[0] == 2 and l.W.shape[2] == 2 for l in ir_convs)


def test_param_count_matches_manual_formula():
    hp = HyperParams(n_filters=8, kernel_size=3, hidden_units=32)
    net = build_network("M1", hp, np.random.default_rng(0))
    # spectro: 57 -> conv(55) pool(27) -> conv(25) pool(12); flat = 12*8
    conv = (3 * 32 * 8 + 8) + (3 * 8 * 8 + 8)
    # ir: 57 -> conv(56) pool(28) -> conv(27) pool(13); flat = 13*2
    ir = (2 * 2 * 2 + 2) * 2
    flat = 12 * 8 + 13 * 2
    head = (flat * 32 + 32) + (32 * 21 + 21)
    assert param_count(net) == conv + ir + flat * 0 + head


def test_dropout_eval_identity_and_train_fraction():
    drop = Dropout(0.3)
    x = np.ones((100, 1000))
    assert drop.forward(x, train=False) is x
    out = drop.forward(x, train=True, rng=np.random.default_rng(6))
    zero_frac = np.mean(out == 0.0)
    assert zero_frac == pytest.approx(0.3, abs=0.02)
    kept = out[out != 0]
    assert kept[0] == pytest.approx(1.0 / 0.7)


def test_train_mode_dropout_requires_rng():
    with pytest.raises(ValueError):
        Dropout(0.5).forward(np.ones((2, 2)), train=True)


# ---------------------------------------------------------------------------
# data expansion

def test_augment_zero_fraction_is_identity():
    rng = np.random.default_rng(7)
    sample = FeatureTensor(rng.normal(size=(57, 32)), rng.normal(size=(57, 2)))
    out = augment_shift(sample, 0.0, rng)
    np.testing.assert_array_equal(out.doppler, sample.doppler)
    np.testing.assert_array_equal(out.ir, sample.ir)


def test_augment_offset_bounded_by_ten_percent():
    rng = np.random.default_rng(8)
    base = FeatureTensor(np.ones((57, 32)), np.ones((57, 2)))
    for _ in range(50):
        out = augment_shift(base, 0.10, rng)
        zero_rows = int(np.sum(np.all(out.doppler == 0.0, axis=1)))
        assert zero_rows <= 5  # floor(0.10 * 57)


def test_augment_streams_shift_independently():
    rng = np.random.default_rng(9)
    base = FeatureTensor(np.ones((57, 32)), np.ones((57, 2)))

    def offset(mat):
        nz = np.flatnonzero(np.any(mat != 0.0, axis=1))
        if nz[0] > 0:
            return nz[0]
        return nz[-1] - (mat.shape[0] - 1)

    differ = sum(offset(out.doppler) != offset(out.ir)
                 for out in (augment_shift(base, 0.10, rng) for _ in range(1000)))
    assert differ > 500


def test_augment_zero_fills_vacated_frames():
    rng = np.random.default_rng(10)
    base = FeatureTensor(np.ones((57, 32)), np.ones((57, 2)))
    for _ in range(20):
        out = augment_shift(base, 0.10, rng)
        total = out.doppler.sum()
        assert total == 32 * (57 - abs(57 - total / 32))  # rows are all-ones or all-zero


# ---------------------------------------------------------------------------
# training loop

def separable_toy(n=60, seed=14):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    d = rng.normal(0.0, 0.3, size=(n, 12, 4))
    d[y == 1, 3:6, :] += 2.0
    z = rng.normal(0.0, 0.3, size=(n, 12, 2))
    return d, z, y


def test_training_fits_a_separable_toy_problem():
    d, z, y = separable_toy()
    hp = HyperParams(l2=0.0, lr_exponent=-2, n_filters=8, kernel_size=2,
                     dropout_p=0.0, hidden_units=32)
    net = build_network("M1", hp, np.random.default_rng(15), n_classes=2,
                        doppler_shape=(12, 4), ir_shape=(12, 2))
    train(net, d, z, y, np.random.default_rng(16),
          TrainConfig(epochs=200, patience=200, augment=False))
    acc = (net.predict(d, z) == y).mean()
    assert acc >= 0.99


def test_training_is_deterministic_under_a_fixed_seed():
    d, z, y = separable_toy(n=40)
    hp = HyperParams(lr_exponent=-2, n_filters=8, kernel_size=2,
                     dropout_p=0.2, hidden_units=32)
    nets = []
    for _ in range(2):
        net = build_network("M1", hp, np.random.default_rng(17), n_classes=2,
                            doppler_shape=(12, 4), ir_shape=(12, 2))
        train(net, d, z, y, np.random.default_rng(18),
              TrainConfig(epochs=5, patience=99))
        nets.append(net)
    for a, b in zip(nets[0].params(), nets[1].params()):
        np.testing.assert_array_equal(a, b)


def test_divergence_error_fires_on_nonfinite_loss():
    d, z, y = separable_toy(n=20)
    hp = HyperParams(lr_exponent=0, n_filters=8, kernel_size=2,
                     dropout_p=0.0, hidden_units=32)
    net = build_network("M1", hp, np.random.default_rng(19), n_classes=2,
                        doppler_shape=(12, 4), ir_shape=(12, 2))
    net.dense_head[-1].W[...] = 1e308  # force overflow on the first batch
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError):
            train(net, d, z, y, np.random.default_rng(20), TrainConfig(epochs=2))


def test_early_stopping_restores_best_parameters():
    d, z, y = separable_toy(n=50)
    hp = HyperParams(l2=0.0, lr_exponent=-1, n_filters=8, kernel_size=2,
                     dropout_p=0.0, hidden_units=32)
    net = build_network("M1", hp, np.random.default_rng(21), n_classes=2,
                        doppler_shape=(12, 4), ir_shape=(12, 2))
    result = train(net, d, z, y, np.random.default_rng(22),
                   TrainConfig(epochs=60, patience=3, augment=False))
    assert result.epochs_run <= 60
    assert result.best_val_loss == min(result.val_losses)


def test_empty_training_set_is_rejected():
    net = tiny_net()
    with pytest.raises(ValueError):
        train(net, np.zeros((0, 4, 3)), np.zeros((0, 4, 2)),
              np.zeros(0, dtype=int), np.random.default_rng(0))


# ---------------------------------------------------------------------------
# serialization

def test_model_roundtrip_preserves_predictions(tmp_path):
    net = build_network("M3", HyperParams(n_filters=8), np.random.default_rng(23))
    rng = np.random.default_rng(24)
    d, z = rng.normal(size=(3, 57, 32)), rng.normal(size=(3, 57, 2))
    before = forward(net, (d, z))
    path = tmp_path / "model.awnn"
    save_model(net, path)
    loaded = load_model(path)
    after = forward(loaded, (d, z))
    assert loaded.model_id == "M3"
    assert loaded.hparams == net.hparams
    np.testing.assert_allclose(before, after, atol=1e-5)


def test_load_rejects_foreign_files(tmp_path):
    path = tmp_path / "bogus.awnn"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError):
        load_model(path)


def test_hyperparams_validate_choices():
    with pytest.raises(ValueError):
        HyperParams(n_filters=12)
    with pytest.raises(ValueError):
        HyperParams(lr_exponent=-7)
    with pytest.raises(ValueError):
        HyperParams(kernel_size=4)
    with pytest.raises(ValueError):
        HyperParams(dropout_p=1.0)
    with pytest.raises(ValueError):
        HyperParams(hidden_units=100)
    with pytest.raises(ValueError):
        HyperParams(initializer="orthogonal")
