import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmgenre import nn
from conftest import layer_gradcheck, numerical_grad, rel_error


def test_affine_identity_and_hand_value():
    assert np.array_equal(nn.affine_forward([[1, 2]], [[1, 0], [0, 1]], [0, 0]), [[1, 2]])
    assert np.array_equal(nn.affine_forward([[1, 1]], [[2], [3]], [1]), [[6]])


def test_affine_matches_triple_loop(rng):
    x, W, b = rng.standard_normal((4, 7)), rng.standard_normal((7, 3)), rng.standard_normal(3)
    ref = np.zeros((4, 3))
    for i in range(4):
        for k in range(3):
            acc = b[k]
            for d in range(7):
                acc += x[i, d] * W[d, k]
            ref[i, k] = acc
    assert np.abs(nn.affine_forward(x, W, b) - ref).max() < 1e-12


def test_affine_shape_error():
    with pytest.raises(nn.ShapeError):
        nn.affine_forward(np.ones((2, 3)), np.ones((4, 2)), np.zeros(2))


def test_mean_pool_examples(rng):
    v = rng.standard_normal(5)
    assert np.allclose(nn.mean_pool_forward(np.stack([v, v, v])), v, atol=1e-15)
    assert np.array_equal(nn.mean_pool_forward([[1, 3], [3, 1]]), [2, 2])
    with pytest.raises(nn.EmptySequenceError):
        nn.mean_pool_forward(np.zeros((0, 3)))


def test_mean_pool_permutation_invariant(rng):
    x = rng.standard_normal((9, 4)) * 10.0 ** rng.integers(-8, 8, size=(9, 4))
    ref = nn.mean_pool_forward(x)
    for _ in range(20):
        assert np.array_equal(nn.mean_pool_forward(x[rng.permutation(9)]), ref)


def test_mean_pool_backward_is_one_over_T(rng):
    x = rng.standard_normal((4, 3))
    _, cache = nn.MeanPool().forward(x)
    g = np.array([1.0, 2.0, -4.0])
    assert np.allclose(nn.MeanPool().backward(g, cache), np.tile(g / 4, (4, 1)))


def test_temporal_conv_averaging_kernel():
    kernel = np.stack([np.eye(1) / 2, np.eye(1) / 2])
    out = nn.temporal_conv_forward(np.array([[2.0], [4.0], [6.0], [8.0]]), kernel, stride=2)
    assert np.array_equal(out, [[3.0], [7.0]])


def test_temporal_conv_shape_rule(rng):
    conv = nn.TemporalConv(3, 2, 2, stride=1, rng=rng)
    assert conv.forward(rng.standard_normal((5, 2)))[0].shape == (3, 2)
    with pytest.raises(nn.SequenceTooShortError):
        conv.forward(rng.standard_normal((2, 2)))


@pytest.mark.parametrize("n,stride,T", [(2, 2, 7), (3, 1, 6), (2, 1, 2), (3, 2, 8)])
def test_temporal_conv_matches_loop(rng, n, stride, T):
    D, E = 3, 4
    x, K, b = rng.standard_normal((T, D)), rng.standard_normal((n, D, E)), rng.standard_normal(E)
    T_out = (T - n) // stride + 1
    ref = np.zeros((T_out, E))
    for t in range(T_out):
        for j in range(n):
            for d in range(D):
                for e in range(E):
                    ref[t, e] += x[t * stride + j, d] * K[j, d, e]
        ref[t] += b
    assert np.abs(nn.temporal_conv_forward(x, K, stride, b) - ref).max() < 1e-12


def test_temporal_conv_order_sensitive(rng):
    kernel = np.array([[[1.0]], [[0.0]]])
    x = np.array([[1.0], [2.0], [3.0]])
    assert not np.allclose(nn.temporal_conv_forward(x, kernel).mean(0),
                           nn.temporal_conv_forward(x[[2, 0, 1]], kernel).mean(0))


def test_lstm_zero_params_give_zero_output(rng):
    layer = nn.LSTM(3, 4, W=np.zeros((7, 16)), b=np.zeros(16))
    assert np.array_equal(layer.forward(rng.standard_normal((5, 3)))[0], np.zeros(4))


def test_lstm_single_step_matches_cell(rng):
    layer = nn.LSTM(3, 2, rng)
    x = rng.standard_normal((1, 3))
    a = np.concatenate([x[0], np.zeros(2)]) @ layer.W.value + layer.b.value
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, o, g = sig(a[:2]), sig(a[2:4]), sig(a[4:6]), np.tanh(a[6:])
    c = i * g
    assert np.allclose(layer.forward(x)[0], o * np.tanh(c), atol=1e-14)


def test_lstm_forget_bias_is_one(rng):
    layer = nn.LSTM(2, 3, rng)
    assert np.array_equal(layer.b.value[3:6], np.ones(3))


def test_bilstm_concatenates_directions(rng):
    layer = nn.BiLSTM(2, 3, rng)
    x = rng.standard_normal((4, 2))
    out = layer.forward(x)[0]
    assert out.shape == (6,)
    assert np.allclose(out[:3], layer.fwd.forward(x)[0])
    assert np.allclose(out[3:], layer.bwd.forward(x)[0])
    assert np.allclose(layer.bwd.forward(x)[0], nn.LSTM(2, 3, W=layer.bwd.W.value, b=layer.bwd.b.value).forward(x[::-1])[0])


GRAD_CASES = {
    "affine": lambda r: (nn.Affine(5, 3, r), r.standard_normal((4, 5))),
    "affine_vec": lambda r: (nn.Affine(6, 2, r), r.standard_normal(6)),
    "conv_bigram_s2": lambda r: (nn.TemporalConv(2, 3, 4, 2, r), r.standard_normal((6, 3))),
    "conv_trigram": lambda r: (nn.TemporalConv(3, 4, 3, 1, r), r.standard_normal((5, 4))),
    "mean_pool": lambda r: (nn.MeanPool(), r.standard_normal((6, 5))),
    "max_pool": lambda r: (nn.MaxPool(), r.standard_normal((6, 5))),
    "lstm": lambda r: (nn.LSTM(4, 5, r), r.standard_normal((3, 4))),
    "lstm_long": lambda r: (nn.LSTM(3, 4, r), r.standard_normal((6, 3))),
    "bilstm": lambda r: (nn.BiLSTM(3, 4, r), r.standard_normal((5, 3))),
    "dropout_eval": lambda r: (nn.Dropout(0.5), r.standard_normal((3, 4))),
    "sigmoid": lambda r: (nn.Sigmoid(), r.standard_normal((3, 4))),
    "softmax": lambda r: (nn.Softmax(), r.standard_normal((3, 4))),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_layer_gradients(name, rng):
    layer, x = GRAD_CASES[name](rng)
    errs = layer_gradcheck(layer, x, rng)
    assert max(errs.values()) < 1e-5, errs


def test_dropout_training_mode_gradient(rng):
    layer = nn.Dropout(0.5)
    x = rng.standard_normal((4, 4))
    y, mask = layer.forward(x, training=True, rng=np.random.default_rng(3))
    R = rng.standard_normal(y.shape)
    assert np.array_equal(layer.backward(R, mask), R * mask)


def test_dropout_identity_in_eval_and_unbiased_in_training(rng):
    layer = nn.Dropout(0.5)
    x = rng.standard_normal(8)
    assert np.array_equal(layer.forward(x)[0], x)
    g = np.random.default_rng(0)
    mean = np.mean([layer.forward(x, True, g)[0] for _ in range(10_000)], axis=0)
    assert np.all(np.abs(mean - x) <= 0.02 * np.abs(x).max())


def test_layer_stack_dimension_check(rng):
    with pytest.raises(nn.ShapeError):
        nn.LayerStack([nn.Affine(3, 4, rng), nn.Affine(5, 2, rng)], input_dim=3)
    stack = nn.LayerStack([nn.TemporalConv(2, 3, 5, 1, rng), nn.MeanPool(), nn.Affine(5, 2, rng)], 3)
    assert stack.out_dim == 2
    errs = layer_gradcheck(stack, rng.standard_normal((4, 3)), rng)
    assert max(errs.values()) < 1e-5


# -- losses -----------------------------------------------------------------


def test_bce_examples():
    loss, _ = nn.weighted_bce_loss(np.zeros((2, 3)), np.zeros((2, 3)), np.ones(3))
    assert math.isclose(loss, math.log(2), rel_tol=1e-15)
    z = np.array([[0.3, -2.0], [4.0, 1.0]])
    y = np.array([[1, 0], [0, 1]])
    assert nn.weighted_bce_loss(z, y, np.ones(2))[0] == nn.weighted_bce_loss(z, y)[0]
    with pytest.raises(ValueError):
        nn.weighted_bce_loss(z, np.array([[2, 0], [0, 1]]))
    with pytest.raises(ValueError):
        nn.weighted_bce_loss(z, y, np.array([1.0, 0.0]))


def test_bce_matches_extended_precision_oracle(rng):
    import mpmath

    mpmath.mp.dps = 40
    z = rng.standard_normal((5, 4)) * 4
    y = rng.integers(0, 2, size=(5, 4))
    cw = rng.uniform(0.5, 3.0, size=4)
    total = mpmath.mpf(0)
    for i in range(5):
        for k in range(4):
            s = 1 / (1 + mpmath.exp(-mpmath.mpf(z[i, k])))
            total += -(cw[k] * y[i, k] * mpmath.log(s) + (1 - y[i, k]) * mpmath.log(1 - s))
    ref = float(total / 20)
    assert abs(nn.weighted_bce_loss(z, y, cw)[0] - ref) < 1e-10


def test_softmax_ce_examples(rng):
    assert math.isclose(nn.softmax_ce_loss(np.zeros((3, 5)), [0, 2, 4])[0], math.log(5), rel_tol=1e-15)
    z = np.zeros((1, 5))
    z[0, 2] = 50.0
    assert nn.softmax_ce_loss(z, [2])[0] < 1e-20
    with pytest.raises(ValueError):
        nn.softmax_ce_loss(np.zeros((1, 5)), [5])


def test_softmax_ce_matches_oracle(rng):
    import mpmath

    mpmath.mp.dps = 40
    z = rng.standard_normal((6, 5)) * 3
    lab = rng.integers(0, 5, size=6)
    total = mpmath.mpf(0)
    for i in range(6):
        den = sum(mpmath.exp(mpmath.mpf(v)) for v in z[i])
        total += -mpmath.log(mpmath.exp(mpmath.mpf(z[i, lab[i]])) / den)
    assert abs(nn.softmax_ce_loss(z, lab)[0] - float(total / 6)) < 1e-10


def test_loss_gradients(rng):
    z = rng.standard_normal((4, 3))
    y = rng.integers(0, 2, size=(4, 3))
    cw = rng.uniform(0.5, 2, size=3)
    _, g = nn.weighted_bce_loss(z, y, cw)
    assert rel_error(g, numerical_grad(lambda: nn.weighted_bce_loss(z, y, cw)[0], z)) < 1e-5
    lab = rng.integers(0, 3, size=4)
    _, g = nn.softmax_ce_loss(z, lab)
    assert rel_error(g, numerical_grad(lambda: nn.softmax_ce_loss(z, lab)[0], z)) < 1e-5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=6), st.integers(0, 2**31 - 1))
def test_bce_non_negative(zs, seed):
    z = np.array(zs)[None, :]
    y = np.random.default_rng(seed).integers(0, 2, size=z.shape)
    assert nn.weighted_bce_loss(z, y)[0] >= 0.0


def test_bce_saturation_approaches_zero_monotonically():
    losses = [nn.weighted_bce_loss(np.array([[m, -m]]), np.array([[1, 0]]))[0] for m in (1, 2, 5, 10, 20)]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-8


# -- optimiser / init / schedule --------------------------------------------


def test_adam_zero_gradient():
    q = nn.Parameter(np.array([1.0, -2.0]))
    nn.adam_step(q, 0.1)
    assert np.array_equal(q.value, [1.0, -2.0])
    assert q.step_count == 1
    p = nn.Parameter(np.array([1.0, -2.0]))
    p.adam_m[:] = 0.5
    p.adam_v[:] = 0.25
    nn.adam_step(p, 0.1)
    assert np.allclose(p.adam_m, 0.45) and np.allclose(p.adam_v, 0.25 * 0.999)


def test_adam_first_step_is_lr_sign():
    p = nn.Parameter(np.zeros(3))
    p.grad[:] = [3.0, -0.2, 1e-3]
    nn.adam_step(p, 0.01)
    assert np.allclose(p.value, [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_scalar_descent():
    p = nn.Parameter(np.zeros(1))
    for _ in range(200):
        p.zero_grad()
        p.grad += 2 * (p.value - 3.0)
        nn.adam_step(p, 0.1)
    assert abs(p.value[0] - 3.0) < 0.1


def test_adam_rejects_non_finite():
    p = nn.Parameter(np.zeros(2), "w")
    p.grad[1] = np.nan
    with pytest.raises(nn.NonFiniteError, match="w"):
        nn.adam_step(p, 0.1)


def test_xavier():
    w = nn.xavier_init((100, 100), 7)
    assert np.abs(w).max() <= math.sqrt(6 / 200)
    assert np.array_equal(w, nn.xavier_init((100, 100), 7))
    big = nn.xavier_init((400, 250), 1)
    assert abs(big.var() / (2 / 650) - 1) < 0.05
    with pytest.raises(ValueError):
        nn.xavier_init((0, 5), 1)


def test_lr_schedule():
    assert nn.lr_schedule(0.01, 0) == 0.01
    assert math.isclose(nn.lr_schedule(0.001, 100), 0.001 / 1.1, rel_tol=1e-15)
    vals = [nn.lr_schedule(0.001, e) for e in range(101)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_one_layer_overfits_single_batch(rng):
    # 128 inputs, the width of a mel frame
    x = rng.standard_normal((8, 128))
    y = rng.integers(0, 2, size=(8, 4))
    layer = nn.Affine(128, 4, rng)
    opt = nn.Adam(layer.params(), lr0=0.01, decay=0.0)
    for _ in range(500):
        opt.zero_grad()
        z, cache = layer.forward(x)
        loss, dz = nn.weighted_bce_loss(z, y)
        layer.backward(dz, cache)
        opt.step()
    assert nn.weighted_bce_loss(layer.forward(x)[0], y)[0] < 1e-3


def test_embedding_lookup_and_scatter_gradient(rng):
    emb = nn.Embedding(6, 3, rng)
    ids = np.array([4, 1, 4, 0])
    y, cache = emb.forward(ids)
    assert np.array_equal(y, emb.E.value[ids])
    R = rng.standard_normal(y.shape)
    emb.E.zero_grad()
    assert emb.backward(R, cache) is None
    num = numerical_grad(lambda: float((emb.forward(ids)[0] * R).sum()), emb.E.value)
    assert rel_error(emb.E.grad, num) < 1e-5
    assert np.array_equal(emb.E.grad[4], R[0] + R[2]) and not emb.E.grad[5].any()


def test_embedding_rejects_bad_ids(rng):
    emb = nn.Embedding(3, 2, rng)
    with pytest.raises(ValueError):
        emb.forward(np.array([0, 3]))
    with pytest.raises(nn.ShapeError):
        emb.forward(np.array([0.0, 1.0]))
    with pytest.raises(nn.EmptySequenceError):
        nn.LayerStack([emb, nn.MeanPool()], 2).forward(np.array([], dtype=np.int64))
