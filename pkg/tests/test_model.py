import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp

from poemlab.errors import NonFiniteGradient
from poemlab.model import (Batch, EnergyModel, SGDNesterov, backward_and_step, cross_entropy, encode, energy,
                           forward, init_model, load_checkpoint, loss_and_grads, ood_score, predict, reg_loss,
                           save_checkpoint, total_loss)

from .oracles import central_diff


def _batch(rng, d=2, K=3, B=4):
    return Batch(rng.standard_normal((B, d)), rng.integers(1, K + 1, size=B), rng.standard_normal((B, d)))


def _model(rng, dims=(2, 16, 16), K=3, **kw):
    m = init_model(dims, K, rng, **kw)
    for b in m.biases:
        b[:] = 0.1 * rng.standard_normal(b.shape)
    return m


def test_zero_weights():
    m = EnergyModel([np.zeros((2, 3))], [np.array([0.5, -1.0, 2.0])], np.zeros((3, 2)))
    phi, logits = forward(m, np.array([1.0, -4.0]))
    np.testing.assert_array_equal(phi, [0.5, 0.0, 2.0])
    np.testing.assert_array_equal(logits, [0.0, 0.0])


def test_identity_wiring():
    m = EnergyModel([np.eye(3)], [np.zeros(3)], np.eye(3))
    x = np.array([0.3, 1.2, 4.0])  # ReLU follows the layer, so use x >= 0
    np.testing.assert_array_equal(forward(m, x)[1], x)


def test_input_jacobian(rng):
    m = _model(rng)
    x = rng.standard_normal(2)
    # analytic Jacobian as a product of masked layer matrices
    h, J = x, np.eye(2)
    for W, b in zip(m.weights, m.biases):
        z = h @ W + b
        J = J @ (W * (z > 0))
        h = np.maximum(z, 0)
    J = J @ m.head
    for k in range(3):
        num = central_diff(lambda v: forward(m, v)[1][k], x)
        assert np.max(np.abs(num - J[:, k])) / max(np.max(np.abs(J[:, k])), 1e-8) < 1e-4


def test_energy_examples():
    assert energy([0.0, 0.0]) == pytest.approx(-math.log(2), abs=1e-15)
    assert energy([2.5]) == -2.5
    assert energy([1.0, 2.0, 3.0]) == pytest.approx(-3.40760596444438, abs=1e-12)
    assert np.isfinite(energy([1000.0, 999.0]))


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_energy_bounds(logits):
    E = energy(logits)
    top = max(logits)
    assert -top - math.log(len(logits)) - 1e-9 <= E <= -top + 1e-9


def test_reg_loss_examples():
    assert reg_loss([-30.0], [-1.0], -25.0, -7.0) == 0.0
    assert reg_loss([-5.0], [], -7.0, -25.0) == 4.0
    assert reg_loss([], [-30.0], -7.0, -25.0) == 25.0


def test_total_loss_cases(rng):
    m = _model(rng, beta=0.0)
    b = _batch(rng)
    assert total_loss(m, b) == pytest.approx(cross_entropy(forward(m, b.id_inputs)[1], b.labels), rel=1e-15)
    assert cross_entropy(np.zeros((5, 4)), [1, 2, 3, 4, 1]) == pytest.approx(math.log(4))


def test_total_loss_compositional_oracle(rng):
    m = _model(rng, m_in=-1.0, m_out=1.0, beta=0.3)
    b = _batch(rng)
    li = forward(m, b.id_inputs)[1]
    lo = forward(m, b.outlier_inputs)[1]
    ce = np.mean([logsumexp(r) - r[y - 1] for r, y in zip(li, b.labels)])
    ei = -logsumexp(li, axis=1)
    eo = -logsumexp(lo, axis=1)
    reg = np.mean(np.maximum(0, ei + 1.0) ** 2) + np.mean(np.maximum(0, 1.0 - eo) ** 2)
    assert total_loss(m, b) == ce + 0.3 * reg
    assert loss_and_grads(m, b)[0] == pytest.approx(total_loss(m, b), rel=1e-14)


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    m = _model(rng, m_in=float(rng.uniform(-3, 0)), m_out=float(rng.uniform(-1, 2)), beta=float(rng.uniform(0, 1)))
    assert total_loss(m, _batch(rng)) >= 0


def grad_rel_error(m, b):
    _, grads = loss_and_grads(m, b)
    worst = 0.0
    for p, g in zip(m.params(), grads):
        def f(v, p=p):
            old = p.copy()
            p[...] = v
            out = total_loss(m, b)
            p[...] = old
            return out
        num = central_diff(f, p.copy())
        worst = max(worst, np.linalg.norm(num - g) / max(np.linalg.norm(num) + np.linalg.norm(g), 1e-8))
    return worst


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    # margins near typical energies so both hinges are active
    m = _model(rng, m_in=-2.0, m_out=0.5, beta=0.5)
    assert grad_rel_error(m, _batch(rng)) < 1e-4


def test_gradients_with_standardized_inputs(rng):
    m = _model(rng, m_in=-2.0, m_out=0.5)
    m.input_shift = np.array([0.3, -1.0])
    m.input_scale = np.array([2.0, 0.5])
    assert grad_rel_error(m, _batch(rng)) < 1e-4


def test_zero_lr_keeps_params(rng):
    m = _model(rng)
    before = [p.copy() for p in m.params()]
    backward_and_step(m, SGDNesterov(m, lr=0.0), _batch(rng))
    assert all(np.array_equal(a, b) for a, b in zip(before, m.params()))


def test_zero_momentum_is_plain_sgd(rng):
    m = _model(rng)
    ref = m.copy()
    b1, b2 = _batch(rng), _batch(rng)
    opt = SGDNesterov(m, lr=0.01, momentum=0.0, weight_decay=1e-4)
    backward_and_step(m, opt, b1)
    backward_and_step(m, opt, b2)
    for b in (b1, b2):
        _, grads = loss_and_grads(ref, b)
        for p, g, decay in zip(ref.params(), grads, ref.decay_mask()):
            p -= 0.01 * (g + (1e-4 * p if decay else 0.0))
    for a, c in zip(m.params(), ref.params()):
        np.testing.assert_allclose(a, c, rtol=1e-13, atol=1e-15)


def test_nesterov_matches_reference_rule():
    # one parameter, constant gradient: v1 = g, p1 = p0 - lr (g + mu v1); v2 = mu v1 + g
    m = EnergyModel([np.zeros((1, 1))], [np.zeros(1)], np.zeros((1, 2)))
    opt = SGDNesterov(m, lr=0.1, momentum=0.9, weight_decay=0.0)
    p = [np.array([1.0])]
    opt.velocity, opt.decay_mask = [np.zeros(1)], [False]
    opt.step(p, [np.array([2.0])])
    assert p[0][0] == pytest.approx(1.0 - 0.1 * (2.0 + 0.9 * 2.0))
    opt.step(p, [np.array([2.0])])
    v2 = 0.9 * 2.0 + 2.0
    assert p[0][0] == pytest.approx(1.0 - 0.1 * 3.8 - 0.1 * (2.0 + 0.9 * v2))


def test_decay_only_on_weights(rng):
    m = _model(rng)
    assert m.decay_mask() == [True, False, True, False, True]


def test_nonfinite_gradient_raises(rng):
    m = _model(rng)
    m.head[0, 0] = np.nan
    with pytest.raises(NonFiniteGradient):
        backward_and_step(m, SGDNesterov(m), _batch(rng))


def test_ood_score(rng):
    m = EnergyModel([np.eye(2)], [np.zeros(2)], np.zeros((2, 2)))
    assert ood_score(m, np.ones(2)) == pytest.approx(math.log(2))
    m2 = _model(rng)
    x = rng.standard_normal((5, 2))
    np.testing.assert_array_equal(ood_score(m2, x), -energy(forward(m2, x)[1]))
    logits = forward(m2, x)[1]
    np.testing.assert_allclose(-energy(logits + 1.7), -energy(logits) + 1.7, rtol=1e-13)


def test_predict_is_one_based_with_low_index_ties():
    m = EnergyModel([np.eye(2)], [np.zeros(2)], np.zeros((2, 3)))
    assert list(predict(m, np.ones((2, 2)))) == [1, 1]


def test_determinism():
    def train(seed):
        rng = np.random.default_rng(seed)
        m = _model(rng)
        opt = SGDNesterov(m, lr=0.01)
        for _ in range(5):
            backward_and_step(m, opt, _batch(rng))
        return m
    a, b = train(3), train(3)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_checkpoint_roundtrip(tmp_path, rng):
    m = _model(rng, m_in=-9.0, m_out=-3.0, beta=0.2)
    m.input_shift = np.array([0.5, -0.25])
    extra = {"queue_phi": rng.standard_normal((4, 17)), "queue_y": rng.standard_normal(4)}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m, extra_arrays=extra, meta={"epoch": 3})
    back, arrays, header = load_checkpoint(path)
    assert all(np.array_equal(p, q) for p, q in zip(m.params(), back.params()))
    assert np.array_equal(back.input_shift, m.input_shift)
    assert (back.m_in, back.m_out, back.beta) == (-9.0, -3.0, 0.2)
    assert np.array_equal(arrays["queue_phi"], extra["queue_phi"])
    assert header["meta"]["epoch"] == 3 and header["schema_version"] == 1
    assert header["dims"] == [2, 16, 16]


def test_encode_shape(rng):
    m = _model(rng)
    assert encode(m, rng.standard_normal((7, 2))).shape == (7, 16)
