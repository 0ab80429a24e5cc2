"""Autograd core: forward values, naive-loop oracles and gradient checks (float64)."""

import math

import numpy as np
import pytest

from gesturegen import nn
from gesturegen import tensor as T
from gesturegen.gradcheck import gradcheck

GRAD_TOL = 1e-5


def leaf(rng, *shape, scale=1.0):
    return T.parameter(rng.standard_normal(shape) * scale, dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# -- naive references -----------------------------------------------------------------
def naive_conv1d(x, K, b):
    Tn, cin = x.shape
    k, _, cout = K.shape
    pad = (k - 1) // 2
    y = np.zeros((Tn, cout))
    for t in range(Tn):
        for o in range(cout):
            acc = b[o]
            for j in range(k):
                src = t + j - pad
                if 0 <= src < Tn:
                    for c in range(cin):
                        acc += x[src, c] * K[j, c, o]
            y[t, o] = acc
    return y


def naive_gru(x, h, W_ih, W_hh, b_ih, b_hh):
    H = len(h)
    out = np.zeros(H)

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    for u in range(H):
        def pre(gate, src, W, width):
            col = gate * H + u
            return sum(src[i] * W[i, col] for i in range(width))
        r = sig(pre(0, x, W_ih, len(x)) + b_ih[u] + pre(0, h, W_hh, H) + b_hh[u])
        z = sig(pre(1, x, W_ih, len(x)) + b_ih[H + u] + pre(1, h, W_hh, H) + b_hh[H + u])
        n = math.tanh(pre(2, x, W_ih, len(x)) + b_ih[2 * H + u] + r * (pre(2, h, W_hh, H) + b_hh[2 * H + u]))
        out[u] = (1 - z) * n + z * h[u]
    return out


def naive_attention(X, heads, Wq, bq, Wk, bk, Wv, bv, Wo, bo):
    M, D = X.shape
    dk = D // heads
    Q, K, V = X @ Wq + bq, X @ Wk + bk, X @ Wv + bv
    ctx = np.zeros((M, D))
    for hd in range(heads):
        sl = slice(hd * dk, (hd + 1) * dk)
        for i in range(M):
            scores = [sum(Q[i, sl][a] * K[j, sl][a] for a in range(dk)) / math.sqrt(dk) for j in range(M)]
            mx = max(scores)
            w = [math.exp(s - mx) for s in scores]
            tot = sum(w)
            for j in range(M):
                ctx[i, sl] += (w[j] / tot) * V[j, sl]
    return ctx @ Wo + bo


def make_attention(rng, D, heads):
    return nn.MultiHeadSelfAttention(D, heads, rng, np.float64)


def attn_tensors(m):
    return [m.q.W, m.q.b, m.k.W, m.k.b, m.v.W, m.v.b, m.o.W, m.o.b]


def attn_params(m):
    return [m.q.W.data, m.q.b.data, m.k.W.data, m.k.b.data, m.v.W.data, m.v.b.data, m.o.W.data, m.o.b.data]


# -- linear ----------------------------------------------------------------------------
class TestLinear:
    def test_identity(self):
        y = T.linear(T.Tensor([[1.0, 0.0]]), T.Tensor(np.eye(2)), T.Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(y.data, [[1, 0]])

    def test_hand_sum(self):
        y = T.linear(T.Tensor([[1.0, 2.0]]), T.Tensor([[1.0], [1.0]]), T.Tensor([1.0]))
        np.testing.assert_array_equal(y.data, [[4]])

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(ValueError, match=r"\(1, 3\).*\(2, 2\)"):
            T.linear(T.Tensor(np.ones((1, 3))), T.Tensor(np.ones((2, 2))))

    def test_gradcheck(self, rng):
        x, W, b = leaf(rng, 4, 3), leaf(rng, 3, 5), leaf(rng, 5)
        assert max(gradcheck(T.linear, [x, W, b])) < GRAD_TOL


# -- conv1d -------------------------------------------------------------------------------
class TestConv1d:
    def test_k1_identity(self, rng):
        x = rng.standard_normal((6, 3))
        y = T.conv1d(T.Tensor(x), T.Tensor(np.eye(3)[None]), T.Tensor(np.zeros(3)))
        np.testing.assert_array_equal(y.data, x)

    def test_hand_example(self):
        y = T.conv1d(T.Tensor([[1.0], [2.0], [3.0]]), T.Tensor(np.ones((3, 1, 1))), T.Tensor([0.0]))
        np.testing.assert_array_equal(y.data[:, 0], [3, 6, 5])

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            T.conv1d(T.Tensor(np.ones((4, 1))), T.Tensor(np.ones((2, 1, 1))))

    def test_naive_oracle_100_cases(self, rng):
        worst = 0.0
        for _ in range(100):
            Tn, cin, cout = rng.integers(1, 9, size=3)
            k = int(rng.choice([1, 3, 5, 7]))
            x = rng.standard_normal((Tn, cin))
            K = rng.standard_normal((k, cin, cout))
            b = rng.standard_normal(cout)
            y = T.conv1d(T.Tensor(x), T.Tensor(K), T.Tensor(b)).data
            worst = max(worst, np.abs(y - naive_conv1d(x, K, b)).max())
        assert worst < 1e-6

    def test_gradcheck(self, rng):
        x, K, b = leaf(rng, 7, 3), leaf(rng, 5, 3, 4), leaf(rng, 4)
        assert max(gradcheck(T.conv1d, [x, K, b])) < GRAD_TOL

    def test_kernel_longer_than_sequence(self, rng):
        x, K, b = leaf(rng, 2, 2), leaf(rng, 7, 2, 3), leaf(rng, 3)
        np.testing.assert_allclose(T.conv1d(x, K, b).data, naive_conv1d(x.data, K.data, b.data), atol=1e-12)
        assert max(gradcheck(T.conv1d, [x, K, b])) < GRAD_TOL


# -- GRU ------------------------------------------------------------------------------------
class TestGRU:
    def test_zero_params(self, rng):
        h = rng.standard_normal(5)
        z = T.Tensor(np.zeros((3, 15)))
        out = T.gru_cell(T.Tensor(rng.standard_normal(3)), T.Tensor(h), z, T.Tensor(np.zeros((5, 15))),
                         T.Tensor(np.zeros(15)), T.Tensor(np.zeros(15)))
        np.testing.assert_allclose(out.data, 0.5 * h, atol=1e-15)

    def test_naive_oracle_100_cases(self, rng):
        worst = 0.0
        for _ in range(100):
            din, H = rng.integers(1, 9, size=2)
            args = [rng.standard_normal(din), rng.standard_normal(H), rng.standard_normal((din, 3 * H)),
                    rng.standard_normal((H, 3 * H)), rng.standard_normal(3 * H), rng.standard_normal(3 * H)]
            y = T.gru_cell(*[T.Tensor(a) for a in args]).data
            worst = max(worst, np.abs(y - naive_gru(*args)).max())
        assert worst < 1e-6

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="shape mismatch"):
            T.gru_cell(T.Tensor(np.ones(3)), T.Tensor(np.ones(4)), T.Tensor(np.ones((3, 9))),
                       T.Tensor(np.ones((4, 12))), T.Tensor(np.ones(12)), T.Tensor(np.ones(12)))

    def test_gradcheck_batched(self, rng):
        args = [leaf(rng, 2, 3), leaf(rng, 2, 4), leaf(rng, 3, 12, scale=0.5), leaf(rng, 4, 12, scale=0.5),
                leaf(rng, 12), leaf(rng, 12)]
        assert max(gradcheck(T.gru_cell, args)) < GRAD_TOL


# -- attention --------------------------------------------------------------------------------
class TestAttention:
    def test_single_frame(self, rng):
        m = make_attention(rng, 8, 4)
        x = rng.standard_normal((1, 8))
        expected = (x @ m.v.W.data + m.v.b.data) @ m.o.W.data + m.o.b.data
        np.testing.assert_allclose(m(T.Tensor(x)).data, expected, atol=1e-12)

    def test_identical_rows_give_identical_outputs(self, rng):
        m = make_attention(rng, 8, 2)
        x = np.tile(rng.standard_normal(8), (5, 1))
        y = m(T.Tensor(x)).data
        np.testing.assert_allclose(y, np.tile(y[0], (5, 1)), atol=1e-12)

    def test_permutation_equivariant(self, rng):
        m = make_attention(rng, 8, 4)
        x = rng.standard_normal((6, 8))
        perm = rng.permutation(6)
        np.testing.assert_allclose(m(T.Tensor(x[perm])).data, m(T.Tensor(x)).data[perm], atol=1e-12)

    def test_indivisible_dim_rejected(self, rng):
        with pytest.raises(ValueError, match="divisible"):
            make_attention(rng, 6, 4)

    def test_naive_oracle_100_cases(self, rng):
        worst = 0.0
        for _ in range(100):
            heads = int(rng.integers(1, 4))
            D = heads * int(rng.integers(1, 4))
            M = int(rng.integers(1, 8))
            m = make_attention(rng, D, heads)
            x = rng.standard_normal((M, D))
            y = m(T.Tensor(x)).data
            worst = max(worst, np.abs(y - naive_attention(x, heads, *attn_params(m))).max())
        assert worst < 1e-6

    def test_gradcheck(self, rng):
        m = make_attention(rng, 8, 4)
        x = leaf(rng, 5, 8)
        # the key bias adds the same amount to every score of a row, which softmax
        # ignores, so its gradient is exactly zero and is checked separately
        params = [x] + [p for p in attn_tensors(m) if p is not m.k.b]
        assert max(gradcheck(lambda x, *_: m(x), params)) < GRAD_TOL
        m.k.b.grad = None
        m(x).sum().backward()
        assert np.abs(m.k.b.grad).max() < 1e-12


# -- layer norm / activations ------------------------------------------------------------------
class TestLayerNorm:
    def test_constant_row_is_zero(self):
        y = T.layer_norm(T.Tensor(np.full((2, 5), 3.0)), T.Tensor(np.ones(5)), T.Tensor(np.zeros(5)))
        np.testing.assert_array_equal(y.data, 0.0)

    def test_moments(self, rng):
        y = T.layer_norm(T.Tensor(rng.standard_normal((4, 64)) * 3 + 1), T.Tensor(np.ones(64)),
                         T.Tensor(np.zeros(64))).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-5)

    def test_gradcheck(self, rng):
        x, g, b = leaf(rng, 3, 6), leaf(rng, 6), leaf(rng, 6)
        assert max(gradcheck(T.layer_norm, [x, g, b])) < GRAD_TOL


class TestActivations:
    def test_elu_values(self):
        y = T.elu(T.Tensor([0.0, 1.0, -1e3])).data
        assert y[0] == 0.0 and y[1] == 1.0 and y[2] == pytest.approx(-1.0)

    def test_dropout_eval_identity(self, rng):
        x = rng.standard_normal((10, 10))
        assert np.array_equal(T.dropout(T.Tensor(x), 0.2, False).data, x)

    def test_dropout_expectation(self, rng):
        x = rng.uniform(0.5, 2.0, size=50)
        draws = np.stack([T.dropout(T.Tensor(x), 0.2, True, rng).data for _ in range(20000)])
        assert np.abs(draws.mean(axis=0) / x - 1).max() < 0.02

    def test_dropout_rate_validated(self):
        with pytest.raises(ValueError):
            T.dropout(T.Tensor([1.0]), 1.0, True, np.random.default_rng(0))

    def test_softmax_rows_sum_to_one(self, rng):
        y = T.softmax(T.Tensor(rng.standard_normal((3, 7)) * 50)).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0)

    @pytest.mark.parametrize("op", [T.relu, T.elu, T.tanh, T.sigmoid, T.exp, T.sin, T.cos, T.absolute,
                                    lambda a: T.softmax(a, axis=-1), lambda a: T.softmax(a, axis=0)])
    def test_unary_gradcheck(self, rng, op):
        x = leaf(rng, 3, 4)
        x.data[np.abs(x.data) < 1e-3] += 0.01  # keep kinks of relu/abs away from the stencil
        assert max(gradcheck(op, [x])) < GRAD_TOL

    @pytest.mark.parametrize("op", [T.log, T.sqrt, lambda a: a ** 1.5, lambda a: 1.0 / a])
    def test_positive_domain_gradcheck(self, rng, op):
        x = T.parameter(rng.uniform(0.5, 2.0, size=(3, 4)), dtype=np.float64)
        assert max(gradcheck(op, [x])) < GRAD_TOL


# -- structural ops ------------------------------------------------------------------------------
class TestStructural:
    @pytest.mark.parametrize("op", [
        lambda a, b: a + b, lambda a, b: a - b, lambda a, b: a * b, lambda a, b: a / (b * b + 1.0),
    ])
    def test_broadcast_binary_gradcheck(self, rng, op):
        a, b = leaf(rng, 3, 4), leaf(rng, 4)
        assert max(gradcheck(op, [a, b])) < GRAD_TOL

    def test_matmul_batched(self, rng):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        assert max(gradcheck(T.matmul, [a, b])) < GRAD_TOL

    def test_reductions_and_views(self, rng):
        x = leaf(rng, 2, 3, 4)
        fns = [
            lambda x: x.sum(axis=1), lambda x: x.mean(axis=(0, 2), keepdims=True), lambda x: x.mean(),
            lambda x: x.reshape(6, 4), lambda x: x.transpose(2, 0, 1), lambda x: x[:, 1:, ::2],
            lambda x: x[..., [0, 2, 2]], lambda x: x[1, 2], lambda x: T.concat([x, x * 2.0], axis=1),
            lambda x: T.stack([x, x[::-1]], axis=-1),
        ]
        for f in fns:
            assert max(gradcheck(f, [x])) < GRAD_TOL

    def test_cross(self, rng):
        a, b = leaf(rng, 5, 3), leaf(rng, 5, 3)
        np.testing.assert_allclose(T.cross(a, b).data, np.cross(a.data, b.data))
        assert max(gradcheck(T.cross, [a, b])) < GRAD_TOL


# -- backward semantics ---------------------------------------------------------------------------
class TestBackward:
    def test_sum_gives_ones(self, rng):
        W = leaf(rng, 3, 2)
        W.sum().backward()
        np.testing.assert_array_equal(W.grad, np.ones((3, 2)))

    def test_square_sum(self, rng):
        W = leaf(rng, 3, 2)
        (W * W).sum().backward()
        np.testing.assert_allclose(W.grad, 2 * W.data)

    def test_non_scalar_rejected(self, rng):
        with pytest.raises(ValueError, match="scalar"):
            leaf(rng, 3).backward()

    def test_reused_parameter_accumulates(self, rng):
        W = leaf(rng, 3)
        x = rng.standard_normal(3)
        loss = (W * x).sum() + (T.sin(W)).sum()
        loss.backward()
        np.testing.assert_allclose(W.grad, x + np.cos(W.data))

    def test_unreachable_parameter_has_no_gradient(self, rng):
        used, unused = leaf(rng, 3), leaf(rng, 3)
        (used * 2.0).sum().backward()
        assert unused.grad is None

    def test_no_grad_records_nothing(self, rng):
        W = leaf(rng, 3)
        with T.no_grad():
            y = W * 2.0
        assert not y.requires_grad and y._backward is None

    def test_composed_network_gradcheck(self, rng):
        lin = nn.Linear(4, 6, rng, np.float64)
        conv = nn.Conv1d(6, 3, 3, rng, np.float64)
        ln = nn.LayerNorm(3, np.float64)
        ln.gain.data = rng.standard_normal(3)
        x = leaf(rng, 5, 4)

        def f(x, *_):
            return ln(T.elu(conv(T.tanh(lin(x)))))
        assert max(gradcheck(f, [x] + [p for _, p in lin.named_parameters()]
                             + [p for _, p in conv.named_parameters()] + [ln.gain, ln.bias])) < GRAD_TOL

    def test_float32_default(self):
        assert T.Tensor([1.0, 2.0]).dtype == np.float32
