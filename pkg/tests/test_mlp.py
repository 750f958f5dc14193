import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tractor_ems import mlp
from tractor_ems.errors import DomainError


def small_net(seed, sizes=(2, 5, 4, 3)):
    return mlp.init_mlp(list(sizes), np.random.default_rng(seed))


def random_net(rng, sizes=(2, 5, 4, 3)):
    """Net with non-zero biases: zero biases put dead-input samples exactly on
    the ReLU kink, where finite differences are meaningless."""
    p = mlp.init_mlp(list(sizes), rng)
    for _, b in p.layers:
        b[...] = rng.uniform(-0.5, 0.5, size=b.shape)
    return p


def numeric_grad(params, x, actions, targets, h=1e-5):
    out = np.zeros_like(params.flat)
    for k in range(params.flat.size):
        old = params.flat[k]
        params.flat[k] = old + h
        up, _ = mlp.loss_and_grad(params, x, actions, targets)
        params.flat[k] = old - h
        down, _ = mlp.loss_and_grad(params, x, actions, targets)
        params.flat[k] = old
        out[k] = (up - down) / (2 * h)
    return out


def max_rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


class TestForward:
    def test_zero_params_give_zero_output(self):
        p = small_net(0)
        p.flat[:] = 0.0
        out = mlp.forward(p, np.ones((3, 2)))
        assert out.shape == (3, 3)
        assert np.all(out == 0.0)

    def test_single_identity_layer_passes_input(self):
        p = mlp.init_mlp([3, 3], np.random.default_rng(0))
        w, b = p.layers[0]
        w[...] = np.eye(3)
        b[...] = 0.0
        x = np.array([[1.5, -2.0, 0.25]])
        np.testing.assert_array_equal(mlp.forward(p, x), x)

    def test_fixed_seed_is_bit_stable(self):
        x = np.array([[0.3, 0.8], [0.9, 0.4]])
        a = mlp.forward(small_net(7), x)
        b = mlp.forward(small_net(7), x)
        assert a.tobytes() == b.tobytes()

    def test_rejects_non_finite_input(self):
        with pytest.raises(DomainError):
            mlp.forward(small_net(0), np.array([[np.nan, 0.0]]))

    @given(st.integers(0, 2**31), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
    @settings(max_examples=50, deadline=None)
    def test_output_finite_for_finite_input(self, seed, a, b):
        assert np.all(np.isfinite(mlp.forward(small_net(seed), np.array([[a, b]]))))

    def test_default_architecture_shapes(self):
        p = mlp.init_mlp([2, 64, 64, 1600], np.random.default_rng(0))
        assert [w.shape for w, _ in p.layers] == [(2, 64), (64, 64), (64, 1600)]
        assert p.flat.size == 2 * 64 + 64 + 64 * 64 + 64 + 64 * 1600 + 1600

    def test_he_uniform_limits_and_zero_bias(self):
        p = mlp.init_mlp([2, 64, 64, 10], np.random.default_rng(1))
        for w, b in p.layers:
            assert np.all(np.abs(w) <= np.sqrt(6.0 / w.shape[0]))
            assert np.all(b == 0.0)


class TestLossAndGrad:
    def test_targets_equal_predictions(self):
        p = small_net(3)
        x = np.random.default_rng(0).uniform(size=(4, 2))
        actions = np.array([0, 1, 2, 0])
        q = mlp.forward(p, x)[np.arange(4), actions]
        loss, g = mlp.loss_and_grad(p, x, actions, q)
        assert loss == 0.0
        assert np.all(g.flat == 0.0)

    def test_quadratic_regime_single_sample(self):
        p = small_net(4)
        x = np.array([[0.2, 0.6]])
        q = mlp.forward(p, x)[0, 1]
        loss, _ = mlp.loss_and_grad(p, x, [1], [q + 0.4])
        assert loss == pytest.approx(0.5 * 0.4**2, rel=1e-12)

    def test_linear_regime_single_sample(self):
        p = small_net(4)
        x = np.array([[0.2, 0.6]])
        q = mlp.forward(p, x)[0, 1]
        loss, _ = mlp.loss_and_grad(p, x, [1], [q - 3.0])
        assert loss == pytest.approx(3.0 - 0.5, rel=1e-12)

    def test_gradient_only_through_selected_action(self):
        p = small_net(5)
        x = np.array([[0.5, 0.5]])
        _, g = mlp.loss_and_grad(p, x, [2], [10.0])
        w_out, b_out = g.layers[-1]
        assert np.all(w_out[:, [0, 1]] == 0.0) and np.all(b_out[[0, 1]] == 0.0)
        assert b_out[2] != 0.0

    @pytest.mark.parametrize("bad", [-1, 3])
    def test_action_out_of_range(self, bad):
        with pytest.raises(DomainError):
            mlp.loss_and_grad(small_net(0), np.zeros((1, 2)), [bad], [0.0])

    def test_non_finite_target(self):
        with pytest.raises(DomainError):
            mlp.loss_and_grad(small_net(0), np.zeros((1, 2)), [0], [np.inf])

    def test_finite_difference_matches(self):
        rng = np.random.default_rng(11)
        p = random_net(rng)
        x = rng.uniform(size=(6, 2))
        actions = rng.integers(0, 3, size=6)
        targets = mlp.forward(p, x)[np.arange(6), actions] + rng.uniform(-0.8, 0.8, size=6)
        _, g = mlp.loss_and_grad(p, x, actions, targets)
        assert max_rel_err(g.flat, numeric_grad(p, x, actions, targets)) < 1e-5

    @given(st.integers(0, 2**31))
    @settings(max_examples=20, deadline=None)
    def test_finite_difference_property(self, seed):
        rng = np.random.default_rng(seed)
        p = random_net(rng, (2, 4, 3))
        x = rng.uniform(0.05, 1.0, size=(3, 2))
        actions = rng.integers(0, 3, size=3)
        # keep errors inside the quadratic Huber regime, away from the kink
        targets = mlp.forward(p, x)[np.arange(3), actions] + rng.uniform(0.1, 0.5, size=3)
        _, g = mlp.loss_and_grad(p, x, actions, targets)
        assert max_rel_err(g.flat, numeric_grad(p, x, actions, targets)) < 1e-5


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = small_net(0)
        before = p.flat.copy()
        opt = mlp.adam_init(p)
        g = mlp.MlpParams([(np.zeros_like(w), np.zeros_like(b)) for w, b in p.layers])
        mlp.adam_step(p, g, opt)
        np.testing.assert_array_equal(p.flat, before)
        assert opt.t == 1

    def test_first_step_magnitude_is_learning_rate(self):
        p = small_net(0)
        before = p.flat.copy()
        opt = mlp.adam_init(p, lr=1e-3)
        _, g = mlp.loss_and_grad(p, np.array([[0.5, 0.5]]), [0], [5.0])
        g.flat[:] = np.where(np.arange(g.flat.size) % 2 == 0, 0.3, -2.0)
        mlp.adam_step(p, g, opt)
        delta = p.flat - before
        np.testing.assert_allclose(np.abs(delta), 1e-3, rtol=1e-6)
        assert np.all(np.sign(delta) == -np.sign(g.flat))

    @given(st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_moves_against_gradient_sign(self, seed):
        rng = np.random.default_rng(seed)
        p = small_net(seed % 1000)
        before = p.flat.copy()
        g = p.copy()
        g.flat[:] = rng.normal(size=g.flat.size)
        mlp.adam_step(p, g, mlp.adam_init(p))
        moved = g.flat != 0
        assert np.all(np.sign(p.flat - before)[moved] == -np.sign(g.flat[moved]))

    def test_identical_calls_identical_results(self):
        results = []
        for _ in range(2):
            p = small_net(9)
            opt = mlp.adam_init(p)
            _, g = mlp.loss_and_grad(p, np.array([[0.1, 0.9]]), [1], [2.0])
            mlp.adam_step(p, g, opt)
            results.append(p.flat.tobytes())
        assert results[0] == results[1]

    def test_non_flat_params_match_flat(self):
        p = small_net(2)
        q = mlp.MlpParams([(w.copy(), b.copy()) for w, b in p.layers])
        _, g = mlp.loss_and_grad(p, np.array([[0.4, 0.7]]), [0], [1.0])
        g2 = mlp.MlpParams([(w.copy(), b.copy()) for w, b in g.layers])
        mlp.adam_step(p, g, mlp.adam_init(p))
        opt_q = mlp.OptState(m=mlp.MlpParams([(np.zeros_like(w), np.zeros_like(b)) for w, b in q.layers]),
                             v=mlp.MlpParams([(np.zeros_like(w), np.zeros_like(b)) for w, b in q.layers]))
        mlp.adam_step(q, g2, opt_q)
        for (wa, ba), (wb, bb) in zip(p.layers, q.layers):
            np.testing.assert_array_equal(wa, wb)
            np.testing.assert_array_equal(ba, bb)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            mlp.adam_step(small_net(0), small_net(0, sizes=(2, 3, 3)), mlp.adam_init(small_net(0)))


class TestSyncAndCheckpoint:
    def test_sync_makes_outputs_identical(self):
        a, b = small_net(1), small_net(2)
        x = np.random.default_rng(0).uniform(size=(20, 2))
        assert np.max(np.abs(mlp.forward(a, x) - mlp.forward(b, x))) > 0
        mlp.sync_params(a, b)
        assert np.max(np.abs(mlp.forward(a, x) - mlp.forward(b, x))) == 0.0
        mlp.sync_params(a, b)
        assert np.max(np.abs(mlp.forward(a, x) - mlp.forward(b, x))) == 0.0

    def test_sync_shape_mismatch(self):
        with pytest.raises(DomainError):
            mlp.sync_params(small_net(0), small_net(0, sizes=(2, 3, 3)))

    def test_checkpoint_round_trip_bit_exact(self, tmp_path):
        p = small_net(13)
        mlp.save_params(p, tmp_path / "net.npz")
        q = mlp.load_params(tmp_path / "net.npz")
        assert q.sizes == p.sizes
        assert q.flat.tobytes() == p.flat.tobytes()

    def test_checkpoint_version_checked(self, tmp_path):
        path = tmp_path / "bad.npz"
        np.savez(path, version=np.array(99), sizes=np.array([2, 3]))
        with pytest.raises(DomainError):
            mlp.load_params(path)
