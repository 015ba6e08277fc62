import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tensoraug.attention import (RELU, Activation, AttentionParams, HeadParams, causal_mask, mha_forward,
                                 msa_forward, row_softmax, sha_forward, stack_forward)
from tensoraug.errors import ShapeError
from tensoraug.flops import FlopCounter, mha_flops

IDENTITY = Activation("identity")


def random_head(rng, hidden, features, d_attn):
    return HeadParams(*(rng.standard_normal((hidden, features, d_attn)) for _ in range(3)),
                      rng.standard_normal((d_attn, hidden, features)))


def loop_attention(x, head, act, mask=None):
    """Plain-Python transcription of one tensor attention head."""
    L, I, J = x.shape
    A = head.W_Q.shape[2]
    q, k, v = np.zeros((L, A)), np.zeros((L, A)), np.zeros((L, A))
    for l, i, j, a in itertools.product(range(L), range(I), range(J), range(A)):
        q[l, a] += x[l, i, j] * head.W_Q[i, j, a]
        k[l, a] += x[l, i, j] * head.W_K[i, j, a]
        v[l, a] += x[l, i, j] * head.W_V[i, j, a]
    out = np.zeros_like(x)
    for l in range(L):
        keys = [m for m in range(L) if mask is None or mask[l, m]]
        scores = [sum(q[l, a] * k[m, a] for a in range(A)) for m in keys]
        top = max(scores)
        weights = [np.exp(s - top) for s in scores]
        total = sum(weights)
        z = np.zeros(A)
        for w, m in zip(weights, keys):
            z += (w / total) * v[m]
        h = act(z)
        for i, j in itertools.product(range(I), range(J)):
            out[l, i, j] = sum(h[a] * head.W_O[a, i, j] for a in range(A))
    return out


class TestSoftmax:
    def test_zero_row(self):
        np.testing.assert_allclose(row_softmax(np.zeros((1, 4))), [[0.25] * 4])

    def test_large_values(self):
        np.testing.assert_allclose(row_softmax(np.array([[1000.0, 1000.0]])), [[0.5, 0.5]])

    def test_closed_form(self):
        np.testing.assert_allclose(row_softmax(np.array([[0.0, np.log(3.0)]])), [[0.25, 0.75]], rtol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-500, 500), min_size=1, max_size=8))
    def test_rows_sum_to_one(self, row):
        p = row_softmax(np.array([row]))
        assert np.all(p >= 0)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)


class TestActivation:
    def test_parse(self):
        assert Activation.parse("leaky_relu:0.2") == Activation("leaky_relu", 0.2)
        with pytest.raises(ValueError):
            Activation.parse("tanh")

    def test_values_and_derivatives(self):
        z = np.array([-2.0, 0.5])
        np.testing.assert_array_equal(RELU(z), [0.0, 0.5])
        leaky = Activation("leaky_relu", 0.1)
        np.testing.assert_allclose(leaky(z), [-0.2, 0.5])
        np.testing.assert_allclose(leaky.derivative(z), [0.1, 1.0])


class TestSingleHead:
    def test_zero_input(self, rng):
        head = random_head(rng, 2, 3, 2)
        assert not sha_forward(np.zeros((4, 2, 3)), head).any()

    def test_single_position(self, rng):
        x = rng.standard_normal((1, 2, 2))
        head = random_head(rng, 2, 2, 3)
        v = np.einsum("lij,ija->la", x, head.W_V)
        expected = np.einsum("la,aij->lij", RELU(v), head.W_O)
        np.testing.assert_allclose(sha_forward(x, head), expected, atol=1e-14)
        other = HeadParams(head.W_Q * 5, -head.W_K, head.W_V, head.W_O)
        np.testing.assert_allclose(sha_forward(x, other), expected, atol=1e-14)

    def test_loop_oracle_many_instances(self, rng):
        worst = 0.0
        for _ in range(100):
            L, I, J, A = rng.integers(1, 5, size=4)
            x = rng.standard_normal((L, I, J))
            head = random_head(rng, I, J, A)
            act = [IDENTITY, RELU][rng.integers(2)]
            ref = loop_attention(x, head, act)
            worst = max(worst, np.max(np.abs(sha_forward(x, head, act) - ref)) / max(1.0, np.max(np.abs(ref))))
        assert worst <= 1e-12

    def test_loop_oracle_with_mask(self, rng):
        x = rng.standard_normal((5, 2, 3))
        head = random_head(rng, 2, 3, 2)
        mask = causal_mask(5)
        np.testing.assert_allclose(sha_forward(x, head, IDENTITY, mask), loop_attention(x, head, IDENTITY, mask),
                                   atol=1e-12)

    def test_causal_perturbation_every_index(self, rng):
        L = 16
        x = rng.standard_normal((L, 2, 2))
        head = random_head(rng, 2, 2, 3)
        mask = causal_mask(L)
        base = sha_forward(x, head, RELU, mask)
        for t in range(L):
            y = x.copy()
            y[t] += rng.standard_normal((2, 2))
            out = sha_forward(y, head, RELU, mask)
            np.testing.assert_array_equal(out[:t], base[:t])

    def test_permutation_equivariance_without_mask(self, rng):
        x = rng.standard_normal((6, 2, 3))
        head = random_head(rng, 2, 3, 2)
        perm = rng.permutation(6)
        np.testing.assert_allclose(sha_forward(x[perm], head), sha_forward(x, head)[perm], atol=1e-12)

    def test_cross_attention_shapes(self, rng):
        head = random_head(rng, 2, 2, 3)
        out = sha_forward(rng.standard_normal((3, 2, 2)), head, kv=rng.standard_normal((7, 2, 2)))
        assert out.shape == (3, 2, 2)

    def test_batch_matches_loop(self, rng):
        head = random_head(rng, 2, 3, 2)
        xb = rng.standard_normal((4, 5, 2, 3))
        out = sha_forward(xb, head)
        for b in range(4):
            np.testing.assert_allclose(out[b], sha_forward(xb[b], head), atol=1e-14)

    def test_shape_errors(self, rng):
        head = random_head(rng, 2, 3, 2)
        with pytest.raises(ShapeError):
            sha_forward(rng.standard_normal((4, 3, 2)), head)
        with pytest.raises(ShapeError):
            sha_forward(rng.standard_normal((4, 2, 3)), head, mask=causal_mask(3))
        with pytest.raises(ShapeError):
            HeadParams(np.zeros((2, 3, 2)), np.zeros((2, 3, 2)), np.zeros((2, 3, 2)), np.zeros((3, 2, 3)))


class TestMultiHead:
    def test_one_head_is_sha(self, rng):
        head = random_head(rng, 2, 2, 3)
        x = rng.standard_normal((4, 2, 2))
        np.testing.assert_array_equal(mha_forward(x, AttentionParams([head], [1.0])), sha_forward(x, head))

    def test_zero_head_weights(self, rng):
        p = AttentionParams([random_head(rng, 2, 2, 3) for _ in range(3)], np.zeros(3))
        assert not mha_forward(rng.standard_normal((4, 2, 2)), p).any()

    def test_identical_heads_average(self, rng):
        head = random_head(rng, 2, 3, 2)
        x = rng.standard_normal((5, 2, 3))
        np.testing.assert_allclose(mha_forward(x, AttentionParams([head, head], [0.5, 0.5])), sha_forward(x, head),
                                   atol=1e-14)

    def test_msa_is_self_mha(self, rng):
        p = AttentionParams.init(rng, 2, 3, 2, 2)
        x = rng.standard_normal((5, 2, 3))
        np.testing.assert_array_equal(msa_forward(x, p), mha_forward(x, p))

    def test_head_weight_count(self, rng):
        with pytest.raises(ShapeError):
            AttentionParams([random_head(rng, 2, 2, 2)], [1.0, 2.0])

    def test_counter_matches_closed_form(self, rng):
        p = AttentionParams.init(rng, 3, 4, 5, 2)
        counter = FlopCounter()
        mha_forward(rng.standard_normal((7, 3, 4)), p, counter=counter)
        assert counter.total == mha_flops(7, 3, 4, 5, 2)
        assert counter.score_shapes == [(7, 7), (7, 7)]


class TestStack:
    def test_empty_is_identity(self, rng):
        x = rng.standard_normal((3, 2, 2))
        np.testing.assert_array_equal(stack_forward(x, []), x)

    def test_one_and_two_layers(self, rng):
        x = rng.standard_normal((4, 2, 3))
        p1, p2 = AttentionParams.init(rng, 2, 3, 2, 2), AttentionParams.init(rng, 2, 3, 2, 1)
        np.testing.assert_array_equal(stack_forward(x, [(p1, RELU)]), mha_forward(x, p1))
        np.testing.assert_array_equal(stack_forward(x, [(p1, RELU), (p2, IDENTITY)]),
                                      mha_forward(mha_forward(x, p1), p2, IDENTITY))
