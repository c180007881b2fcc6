"""
Tests for the reverse-mode tensor kernels, layers, optimizer and generator.
"""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src import gradkernels as gk
from src.errors import GraphConsumed, ShapeMismatch
from src.gradkernels import Adam, OptimizerState, Rng, Tensor, gradcheck, optimizer_step
from src.layers import FiLM, Linear, MLP, MultiHeadAttention


class TestElementaryOps:
    """Test forward values and gradients of single ops."""

    def test_softmax_of_equal_logits(self):
        assert np.allclose(gk.softmax(np.zeros(2)).data, [0.5, 0.5])

    def test_mse_of_identical_inputs(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        loss = gk.mse(x, x.data.copy())
        loss.backward()
        assert loss.item() == 0.0
        assert not x.grad.any()

    def test_mse_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            gk.mse(np.zeros(3), np.zeros(4))

    def test_broadcast_mismatch(self):
        with pytest.raises(ShapeMismatch):
            gk.add(np.zeros((2, 3)), np.zeros((4,)))

    def test_softplus_is_stable(self):
        out = gk.softplus(np.array([-800.0, 0.0, 800.0])).data
        assert np.allclose(out, [0.0, np.log(2.0), 800.0])

    def test_broadcast_gradient_is_reduced(self):
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        gk.tsum(a * b).backward()
        assert b.grad.shape == (4,)
        assert np.allclose(b.grad, 3.0)

    def test_backward_twice_is_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = gk.tsum(gk.square(x))
        y.backward()
        with pytest.raises(GraphConsumed):
            y.backward()

    def test_gradients_accumulate_over_branches(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = gk.tsum(x * x + x * 3.0)
        y.backward()
        assert np.allclose(x.grad, [7.0])


class TestGradientChecks:
    """Analytic gradients against central differences."""

    def setup_method(self):
        self.rng = np.random.default_rng(0)

    @pytest.mark.parametrize("op", [gk.exp, gk.tanh, gk.sigmoid, gk.softplus, gk.gelu, gk.square])
    def test_unary(self, op):
        x = self.rng.normal(size=(3, 4))
        assert gradcheck(lambda a: gk.tsum(op(a) * np.arange(12.0).reshape(3, 4)), [x]) < 1e-6

    def test_log_and_sqrt(self):
        x = self.rng.uniform(0.5, 2.0, size=5)
        assert gradcheck(lambda a: gk.tsum(gk.log(a) + gk.sqrt(a)), [x]) < 1e-6

    def test_batched_matmul(self):
        a = self.rng.normal(size=(2, 3, 4))
        b = self.rng.normal(size=(4, 5))
        assert gradcheck(lambda x, y: gk.tsum(gk.square(gk.matmul(x, y))), [a, b]) < 1e-6

    def test_softmax_and_log_softmax(self):
        x = self.rng.normal(size=(3, 5))
        w = self.rng.normal(size=(3, 5))
        assert gradcheck(lambda a: gk.tsum(gk.softmax(a) * w), [x]) < 1e-6
        assert gradcheck(lambda a: gk.tsum(gk.log_softmax(a, axis=0) * w), [x]) < 1e-6

    def test_layer_norm(self):
        x = self.rng.normal(size=(4, 6))
        w = self.rng.normal(size=(4, 6))
        assert gradcheck(lambda a: gk.tsum(gk.layer_norm(a) * w), [x]) < 1e-5

    def test_shape_ops(self):
        x = self.rng.normal(size=(2, 3, 4))
        w = self.rng.normal(size=(4, 2, 3))

        def fn(a):
            t = gk.transpose(a, (2, 0, 1))
            s = gk.stack([t, t * 2.0], axis=1)
            c = gk.concat([s[:, 0], s[:, 1]], axis=-1)
            return gk.tsum(gk.reshape(c, (4, 2, 6))[..., :3] * w)

        assert gradcheck(fn, [x]) < 1e-6

    def test_attention(self):
        q = self.rng.normal(size=(3, 4))
        k = self.rng.normal(size=(5, 4))
        v = self.rng.normal(size=(5, 4))
        assert gradcheck(lambda a, b, c: gk.tsum(gk.square(gk.attention(a, b, c, heads=2))), [q, k, v]) < 1e-5

    def test_film(self):
        x = self.rng.normal(size=(3, 4))
        c = self.rng.normal(size=5)
        w = self.rng.normal(size=(5, 8))
        b = self.rng.normal(size=8)
        assert gradcheck(lambda *t: gk.tsum(gk.square(gk.film(*t))), [x, c, w, b]) < 1e-6


class TestCompositeLayers:
    """Test attention, FiLM and the parameterised layers."""

    def test_single_key_attention_returns_value(self):
        """With one key/value pair the softmax has one logit, so output equals v."""
        rng = np.random.default_rng(1)
        v = rng.normal(size=(1, 4))
        for _ in range(3):
            q = rng.normal(size=(2, 4))
            out = gk.attention(q, rng.normal(size=(1, 4)), v, heads=2).data
            assert np.allclose(out, np.repeat(v, 2, axis=0))

    def test_attention_rejects_bad_heads(self):
        with pytest.raises(ShapeMismatch):
            gk.attention(np.zeros((2, 5)), np.zeros((2, 5)), np.zeros((2, 5)), heads=2)

    def test_film_identity(self):
        """Zero projection with bias [1 | 0] leaves the input unchanged."""
        layer = FiLM(cond_dim=3, dim=4, rng=Rng(0))
        x = np.random.default_rng(2).normal(size=(5, 4))
        assert np.allclose(layer(x, np.ones(3)).data, x)

    def test_film_zero_gamma_blocks_gradient(self):
        x = Tensor(np.random.default_rng(3).normal(size=(2, 4)), requires_grad=True)
        bias = np.concatenate([np.zeros(4), np.ones(4)])
        out = gk.film(x, np.ones(3), np.zeros((3, 8)), bias)
        assert np.allclose(out.data, 1.0)
        gk.tsum(out).backward()
        assert not x.grad.any()

    def test_linear_vector_and_batch(self):
        layer = Linear(3, 2, Rng(0))
        x = np.array([1.0, 2.0, 3.0])
        assert np.allclose(layer(x).data, layer(x[None]).data[0])
        with pytest.raises(ShapeMismatch):
            layer(np.ones(4))

    def test_state_dict_round_trip(self):
        a = MLP([4, 8, 2], Rng(0, "a"))
        b = MLP([4, 8, 2], Rng(0, "b"))
        b.load_state_dict(a.state_dict())
        x = np.random.default_rng(4).normal(size=(3, 4))
        assert np.array_equal(a(x).data, b(x).data)

    def test_parameters_are_named(self):
        attn = MultiHeadAttention(8, 2, Rng(0))
        names = set(attn.parameters())
        assert {"q.weight", "k.bias", "o.weight"} <= names
        assert attn.num_parameters() == 4 * (8 * 8 + 8)


class TestAdam:
    """Test the optimizer update."""

    def test_zero_gradient_keeps_parameters(self):
        params = {"w": np.array([1.0, -2.0])}
        state = OptimizerState(lr=0.1)
        for _ in range(5):
            params = optimizer_step(params, {"w": np.zeros(2)}, state)
        assert np.array_equal(params["w"], [1.0, -2.0])

    def test_constant_gradient_moves_by_learning_rate(self):
        """Bias-corrected moments equal g and g^2, so each step is lr * sign(g)."""
        params = {"w": np.zeros(3)}
        state = OptimizerState(lr=0.01)
        g = np.array([3.0, -0.5, 2.0])
        for _ in range(50):
            before = params["w"].copy()
            params = optimizer_step(params, {"w": g}, state)
        assert np.allclose(params["w"] - before, -0.01 * np.sign(g), atol=1e-8)

    def test_identical_runs_are_bit_identical(self):
        def run():
            model = MLP([3, 4, 1], Rng(7))
            opt = Adam(model.parameters(), lr=1e-2)
            x = Rng(7, "data").normal((8, 3))
            for _ in range(10):
                opt.zero_grad()
                gk.mse(model(x), np.ones((8, 1))).backward()
                opt.step()
            return model.state_dict()

        a, b = run(), run()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_minimises_quadratic(self):
        w = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = Adam({"w": w}, lr=0.1)
        for _ in range(500):
            opt.zero_grad()
            gk.tsum(gk.square(w)).backward()
            opt.step()
        assert np.all(np.abs(w.data) < 0.05)


class TestRng:
    """Test the named, seeded generator."""

    @given(seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_same_seed_same_stream(self, seed):
        """
        Property: two generators with the same seed and name draw identical values.
        """
        assert np.array_equal(Rng(seed).normal(5), Rng(seed).normal(5))

    def test_children_differ(self):
        root = Rng(0)
        assert not np.array_equal(root.child("a").normal(5), root.child("b").normal(5))
        assert np.array_equal(root.child("a").normal(5), Rng(0, "root/a").normal(5))
