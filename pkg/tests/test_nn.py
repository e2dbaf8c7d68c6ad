"""Dense networks, hand-rolled gradients, Adam, soft updates, checkpoints."""

import numpy as np
import pytest

from edgeview.nn import (
    CHECKPOINT_VERSION,
    AdamState,
    Mlp,
    adam_step,
    load_checkpoint,
    save_checkpoint,
    soft_update,
)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def objective(net, x, grad_out):
    return float(np.sum(net.forward(x) * grad_out))


def fd_param_grads(net, x, grad_out, step=1e-5):
    base = net.params.copy()
    out = np.zeros_like(base)
    for i in range(len(base)):
        net.params[i] = base[i] + step
        up = objective(net, x, grad_out)
        net.params[i] = base[i] - step
        down = objective(net, x, grad_out)
        net.params[i] = base[i]
        out[i] = (up - down) / (2.0 * step)
    return out


def fd_input_grads(net, x, grad_out, step=1e-5):
    out = np.zeros_like(x)
    flat = out.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        keep = xf[i]
        xf[i] = keep + step
        up = objective(net, x, grad_out)
        xf[i] = keep - step
        down = objective(net, x, grad_out)
        xf[i] = keep
        flat[i] = (up - down) / (2.0 * step)
    return out


def max_rel_err(got, want):
    return float(np.max(np.abs(got - want) / np.maximum(1.0, np.abs(want))))


class TestForward:
    def test_zero_params_sigmoid_half(self):
        net = Mlp((3, 4, 2))
        out = net.forward(np.array([0.7, -1.2, 3.0]))
        np.testing.assert_array_equal(out, [0.5, 0.5])

    def test_zero_params_identity_zero(self):
        net = Mlp((3, 4, 2), output="identity")
        out = net.forward(np.array([0.7, -1.2, 3.0]))
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_manual_affine_layer(self):
        net = Mlp((1, 1), output="identity")
        net.params[:] = [2.0, 0.5]
        assert net.forward(np.array([3.0]))[0] == pytest.approx(6.5)

    def test_relu_hidden_rectifies(self):
        net = Mlp((1, 1, 1), output="identity")
        net.params[:] = [1.5, 0.0, 1.0, 0.0]
        assert net.forward(np.array([2.0]))[0] == pytest.approx(3.0)
        assert net.forward(np.array([-2.0]))[0] == 0.0

    def test_linear_tail_skips_squash(self):
        net = Mlp((2, 3), linear_tail=1)
        net.params[:] = [0, 0, 0, 0, 0, 0, 0.4, -0.3, 0.7]
        out = net.forward(np.array([1.0, -1.0]))
        np.testing.assert_allclose(out, [sigmoid(0.4), sigmoid(-0.3), 0.7])

    def test_batch_matches_single_rows(self):
        net = Mlp((4, 6, 3), rng=np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(2, 4))
        batch = net.forward(x)
        np.testing.assert_array_equal(batch[0], net.forward(x[0]))
        np.testing.assert_array_equal(batch[1], net.forward(x[1]))

    def test_input_width_check(self):
        net = Mlp((3, 2))
        with pytest.raises(ValueError, match="width"):
            net.forward(np.zeros(4))

    def test_constructor_validation(self):
        with pytest.raises(ValueError):
            Mlp((3,))
        with pytest.raises(ValueError):
            Mlp((3, 0))
        with pytest.raises(ValueError):
            Mlp((3, 2), output="softmax")
        with pytest.raises(ValueError):
            Mlp((3, 2), linear_tail=3)

    def test_param_count_identity(self):
        for sizes in [(3, 5, 2), (4, 6, 3), (2, 3, 3, 1), (7, 2)]:
            net = Mlp(sizes)
            want = sum((fi + 1) * fo for fi, fo in zip(sizes, sizes[1:]))
            assert net.param_count == want == len(net.params)

    def test_init_bounds_per_layer(self):
        net = Mlp((5, 4, 3), rng=np.random.default_rng(2))
        for w, b in net._layers:
            bound = 1.0 / np.sqrt(w.shape[0])
            assert np.all(np.abs(w) <= bound)
            assert np.all(np.abs(b) <= bound)


class TestBackward:
    CASES = [
        ((3, 5, 2), "sigmoid", 0, 10),
        ((4, 6, 3), "identity", 0, 11),
        ((3, 4, 4), "sigmoid", 2, 12),
        ((2, 3, 3, 1), "sigmoid", 0, 13),
    ]

    @pytest.mark.parametrize("sizes,output,tail,seed", CASES)
    def test_matches_finite_differences(self, sizes, output, tail, seed):
        rng = np.random.default_rng(seed)
        net = Mlp(sizes, output=output, linear_tail=tail, rng=rng)
        x = rng.normal(size=(3, sizes[0]))
        grad_out = rng.normal(size=(3, sizes[-1]))
        _, cache = net.forward_cached(x)
        grads, grad_in = net.backward(cache, grad_out)
        assert max_rel_err(grads, fd_param_grads(net, x, grad_out)) <= 1e-4
        assert max_rel_err(grad_in, fd_input_grads(net, x, grad_out)) <= 1e-4

    def test_zero_grad_out_zero_grads(self):
        net = Mlp((3, 4, 2), rng=np.random.default_rng(3))
        x = np.random.default_rng(4).normal(size=(2, 3))
        _, cache = net.forward_cached(x)
        grads, grad_in = net.backward(cache, np.zeros((2, 2)))
        np.testing.assert_array_equal(grads, np.zeros_like(net.params))
        np.testing.assert_array_equal(grad_in, np.zeros((2, 3)))

    def test_batch_gradient_is_sum_of_rows(self):
        net = Mlp((3, 5, 2), rng=np.random.default_rng(5))
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 3))
        g = rng.normal(size=(2, 2))
        _, cache = net.forward_cached(x)
        batch_grads, _ = net.backward(cache, g)
        parts = np.zeros_like(batch_grads)
        for i in range(2):
            _, ci = net.forward_cached(x[i])
            gi, _ = net.backward(ci, g[i])
            parts += gi
        np.testing.assert_allclose(batch_grads, parts, rtol=1e-12, atol=1e-15)

    def test_single_vector_round_trip_shape(self):
        net = Mlp((3, 4, 2), rng=np.random.default_rng(7))
        x = np.array([0.1, -0.2, 0.3])
        _, cache = net.forward_cached(x)
        grads, grad_in = net.backward(cache, np.array([1.0, -1.0]))
        assert grads.shape == net.params.shape
        assert grad_in.shape == (3,)


class TestAdam:
    def test_first_step_follows_gradient_sign(self):
        grads = np.array([0.3, -2.0, 0.05, -0.7])
        params = np.zeros(4)
        state = AdamState(lr=0.001, m=np.zeros(4), v=np.zeros(4))
        adam_step(state, params, grads)
        np.testing.assert_allclose(params, -0.001 * np.sign(grads), atol=1e-9)

    def test_zero_gradient_leaves_params_unchanged(self):
        params = np.array([1.0, -2.0, 0.5])
        state = AdamState(lr=0.01, m=np.zeros(3), v=np.zeros(3))
        adam_step(state, params, np.zeros(3))
        np.testing.assert_array_equal(params, [1.0, -2.0, 0.5])

    def test_deterministic_sequence(self):
        rng = np.random.default_rng(9)
        grad_seq = rng.normal(size=(5, 6))

        def run():
            params = np.linspace(-1.0, 1.0, 6)
            state = AdamState(lr=0.005, m=np.zeros(6), v=np.zeros(6))
            for g in grad_seq:
                adam_step(state, params, g)
            return params

        np.testing.assert_array_equal(run(), run())

    def test_state_shape_mismatch(self):
        state = AdamState(m=np.zeros(3), v=np.zeros(3))
        with pytest.raises(ValueError):
            adam_step(state, np.zeros(4), np.zeros(4))

    def test_for_net_matches_param_vector(self):
        net = Mlp((3, 2))
        state = AdamState.for_net(net, lr=0.01)
        assert state.m.shape == net.params.shape
        assert state.lr == 0.01


class TestSoftUpdate:
    def test_full_rate_copies(self):
        target = Mlp((2, 2))
        local = Mlp((2, 2), rng=np.random.default_rng(1))
        soft_update(target, local, 1.0)
        np.testing.assert_array_equal(target.params, local.params)

    def test_half_rate_midpoint(self):
        target = Mlp((1, 1))
        local = Mlp((1, 1))
        local.params[:] = 2.0
        soft_update(target, local, 0.5)
        np.testing.assert_array_equal(target.params, [1.0, 1.0])

    def test_geometric_convergence(self):
        target = Mlp((1, 1))
        local = Mlp((1, 1))
        local.params[:] = 2.0
        for k in range(1, 11):
            soft_update(target, local, 0.5)
            gap = np.abs(local.params - target.params).max()
            assert gap == pytest.approx(2.0 * 0.5**k, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            soft_update(Mlp((2, 2)), Mlp((3, 2)), 0.5)


class TestCheckpoints:
    def build_nets(self):
        return {
            "actor": Mlp((3, 8, 2), linear_tail=1, rng=np.random.default_rng(21)),
            "critic": Mlp((5, 4, 1), output="identity", rng=np.random.default_rng(22)),
        }

    def test_round_trip(self, tmp_path):
        nets = self.build_nets()
        path = str(tmp_path / "ck.npz")
        save_checkpoint(path, nets)
        loaded = load_checkpoint(path)
        assert set(loaded) == {"actor", "critic"}
        for name, net in nets.items():
            got = loaded[name]
            assert got.sizes == net.sizes
            assert got.output == net.output
            assert got.linear_tail == net.linear_tail
            np.testing.assert_array_equal(got.params, net.params)
        x = np.random.default_rng(23).normal(size=3)
        np.testing.assert_array_equal(loaded["actor"].forward(x), nets["actor"].forward(x))

    def test_version_header_checked(self, tmp_path):
        path = str(tmp_path / "ck.npz")
        save_checkpoint(path, self.build_nets())
        with np.load(path, allow_pickle=False) as data:
            payload = {k: data[k] for k in data.files}
        assert int(payload["__version__"]) == CHECKPOINT_VERSION
        payload["__version__"] = np.int64(CHECKPOINT_VERSION + 1)
        np.savez(path, **payload)
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)

    def test_copy_is_independent(self):
        net = Mlp((2, 3), rng=np.random.default_rng(30))
        dup = net.copy()
        np.testing.assert_array_equal(dup.params, net.params)
        dup.params[0] += 1.0
        assert net.params[0] != dup.params[0]
