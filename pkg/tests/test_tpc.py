import numpy as np
import pytest

import skillmem as sm
from skillmem.tpc import (
    LINEAR,
    TANH,
    NumericDivergenceError,
    activation,
    energy_grad_weights,
    energy_grad_z,
    errors,
)


def small_instance(seed, h=3, d=2, act=TANH, scale=0.5):
    rng = np.random.default_rng(seed)
    model = sm.TpcModel(
        w_h=scale * rng.standard_normal((h, h)),
        w_f=scale * rng.standard_normal((d, h)),
        activation=act,
    )
    z = rng.standard_normal(h)
    z_prev = rng.standard_normal(h)
    x = rng.standard_normal(d)
    return model, z, z_prev, x


def energy_by_hand(z, z_prev, x, model):
    """Element-by-element scalar recomputation, no linear-algebra calls."""
    h, d = model.hidden_dim, model.obs_dim
    f = np.tanh if model.activation == TANH else (lambda v: v)
    total = 0.0
    for i in range(h):
        pred = sum(model.w_h[i, j] * f(z_prev[j]) for j in range(h))
        total += (z[i] - pred) ** 2
    for i in range(d):
        pred = sum(model.w_f[i, j] * f(z[j]) for j in range(h))
        total += (x[i] - pred) ** 2
    return total


def central_diff(fn, vec, eps=1e-6):
    vec = np.asarray(vec, dtype=np.float64)
    grad = np.zeros_like(vec)
    for i in range(vec.size):
        up = vec.copy()
        dn = vec.copy()
        up.flat[i] += eps
        dn.flat[i] -= eps
        grad.flat[i] = (fn(up) - fn(dn)) / (2 * eps)
    return grad.reshape(vec.shape)


class TestStepEnergy:
    def test_all_zero(self):
        model = sm.TpcModel(np.zeros((3, 3)), np.zeros((2, 3)))
        assert sm.step_energy(np.zeros(3), np.zeros(3), np.zeros(2), model) == 0.0

    def test_unit_basis_hidden_term_only(self):
        model = sm.TpcModel(np.zeros((3, 3)), np.zeros((2, 3)))
        z = np.array([0.0, 1.0, 0.0])
        assert sm.step_energy(z, np.zeros(3), np.zeros(2), model) == 1.0

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("act", [TANH, LINEAR])
    def test_matches_scalar_oracle(self, seed, act):
        model, z, z_prev, x = small_instance(seed, h=2, d=2, act=act)
        assert sm.step_energy(z, z_prev, x, model) == pytest.approx(
            energy_by_hand(z, z_prev, x, model), abs=1e-12
        )

    def test_dimension_mismatch(self):
        model, z, z_prev, x = small_instance(0)
        with pytest.raises(ValueError):
            sm.step_energy(z[:2], z_prev, x, model)


class TestGradients:
    """Analytic gradients against central finite differences of step_energy."""

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("act", [TANH, LINEAR])
    def test_grad_z(self, seed, act):
        model, z, z_prev, x = small_instance(seed, h=4, d=3, act=act)
        analytic = energy_grad_z(z, z_prev, x, model)
        numeric = central_diff(lambda v: sm.step_energy(v, z_prev, x, model), z)
        assert np.linalg.norm(analytic - numeric) < 1e-6 * max(1.0, np.linalg.norm(numeric))

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("act", [TANH, LINEAR])
    def test_grad_weights(self, seed, act):
        model, z, z_prev, x = small_instance(seed, h=3, d=4, act=act)
        g_wh, g_wf = energy_grad_weights(z, z_prev, x, model)

        def e_of_wh(w):
            return sm.step_energy(z, z_prev, x, sm.TpcModel(w, model.w_f, act))

        def e_of_wf(w):
            return sm.step_energy(z, z_prev, x, sm.TpcModel(model.w_h, w, act))

        num_wh = central_diff(e_of_wh, model.w_h)
        num_wf = central_diff(e_of_wf, model.w_f)
        assert np.linalg.norm(g_wh - num_wh) < 1e-6 * max(1.0, np.linalg.norm(num_wh))
        assert np.linalg.norm(g_wf - num_wf) < 1e-6 * max(1.0, np.linalg.norm(num_wf))


class TestInference:
    def test_zero_error_fixed_point(self):
        # linear, W_H = I, z_prev = z and x = W_F z: both errors vanish exactly
        rng = np.random.default_rng(7)
        z = rng.standard_normal(3)
        w_f = rng.standard_normal((2, 3))
        model = sm.TpcModel(np.eye(3), w_f, activation=LINEAR)
        out = sm.infer_hidden(z.copy(), z, w_f @ z, model, sm.InferenceConfig(n_iters=50))
        np.testing.assert_array_equal(out, z)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("act", [TANH, LINEAR])
    def test_single_step_is_half_gradient(self, seed, act):
        model, z, z_prev, x = small_instance(seed, act=act)
        lr = 1e-2
        out = sm.infer_hidden(z, z_prev, x, model, sm.InferenceConfig(inference_lr=lr, n_iters=1))
        grad = energy_grad_z(z, z_prev, x, model)
        np.testing.assert_allclose(out, z - 0.5 * lr * grad, rtol=0, atol=1e-14)
        # and the gradient itself matches finite differences
        numeric = central_diff(lambda v: sm.step_energy(v, z_prev, x, model), z)
        assert np.linalg.norm(grad - numeric) < 1e-6 * max(1.0, np.linalg.norm(numeric))

    @pytest.mark.parametrize("seed", range(5))
    def test_energy_descends(self, seed):
        model, z, z_prev, x = small_instance(seed, h=4, d=3)
        # keep spectral norms at most 1 so the 1e-2 step size is stable
        model = sm.TpcModel(
            model.w_h / max(1.0, np.linalg.norm(model.w_h, 2)),
            model.w_f / max(1.0, np.linalg.norm(model.w_f, 2)),
            model.activation,
        )
        cfg = sm.InferenceConfig(inference_lr=1e-2, n_iters=1)
        prev_energy = sm.step_energy(z, z_prev, x, model)
        for _ in range(100):
            z = sm.infer_hidden(z, z_prev, x, model, cfg)
            energy = sm.step_energy(z, z_prev, x, model)
            assert energy <= prev_energy + 1e-10
            prev_energy = energy

    def test_divergence_names_iteration(self):
        model, z, z_prev, x = small_instance(1, scale=3.0)
        with pytest.raises(NumericDivergenceError) as err:
            sm.infer_hidden(z, z_prev, x, model, sm.InferenceConfig(inference_lr=1e12, n_iters=100))
        assert err.value.iteration >= 0

    def test_n_iters_zero_rejected(self):
        with pytest.raises(ValueError):
            sm.InferenceConfig(n_iters=0)


class TestUpdateWeights:
    def test_zero_errors_leave_model_unchanged(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal(3)
        w_f = rng.standard_normal((2, 3))
        model = sm.TpcModel(np.eye(3), w_f, activation=LINEAR)
        out = sm.update_weights(model, z, z, w_f @ z, weight_lr=0.1)
        np.testing.assert_array_equal(out.w_h, model.w_h)
        np.testing.assert_array_equal(out.w_f, model.w_f)

    @pytest.mark.parametrize("seed", range(5))
    def test_rank_one_outer_product(self, seed):
        model, z, z_prev, x = small_instance(seed)
        lr = 0.37
        out = sm.update_weights(model, z, z_prev, x, lr)
        eps_z, eps_x = errors(z, z_prev, x, model)
        f_prev = activation(z_prev, model.activation)
        f_z = activation(z, model.activation)
        for i in range(model.obs_dim):
            for j in range(model.hidden_dim):
                assert out.w_f[i, j] - model.w_f[i, j] == pytest.approx(
                    lr * eps_x[i] * f_z[j], abs=1e-15
                )
        for i in range(model.hidden_dim):
            for j in range(model.hidden_dim):
                assert out.w_h[i, j] - model.w_h[i, j] == pytest.approx(
                    lr * eps_z[i] * f_prev[j], abs=1e-15
                )

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_half_gradient_and_fd(self, seed):
        model, z, z_prev, x = small_instance(seed, h=3, d=3)
        lr = 1e-3
        out = sm.update_weights(model, z, z_prev, x, lr)
        g_wh, g_wf = energy_grad_weights(z, z_prev, x, model)
        np.testing.assert_allclose(out.w_h - model.w_h, -0.5 * lr * g_wh, rtol=0, atol=1e-15)
        np.testing.assert_allclose(out.w_f - model.w_f, -0.5 * lr * g_wf, rtol=0, atol=1e-15)


class TestForwardPredict:
    def test_identity_linear(self):
        rng = np.random.default_rng(2)
        v = rng.standard_normal(4)
        model = sm.TpcModel(np.eye(4), rng.standard_normal((2, 4)), activation=LINEAR)
        z_next, _ = sm.forward_predict(v, model)
        np.testing.assert_array_equal(z_next, v)

    def test_zero_weights(self):
        model = sm.TpcModel(np.zeros((3, 3)), np.zeros((2, 3)))
        z_next, x_hat = sm.forward_predict(np.ones(3), model)
        assert not z_next.any() and not x_hat.any()

    def test_matches_matrix_oracle(self):
        model, z, z_prev, x = small_instance(9)
        z_next, x_hat = sm.forward_predict(z_prev, model)
        fz = np.tanh(z_prev)
        expect_z = np.array([model.w_h[i] @ fz for i in range(3)])
        assert np.abs(z_next - expect_z).max() < 1e-12
        assert np.abs(x_hat - model.w_f @ np.tanh(expect_z)).max() < 1e-12


def attractor_sequence(model, x0, cfg, length):
    """Sequence the model rolls out after inferring a state from x0.

    Every step after the first sits exactly on a zero-error fixed point of
    the cued-inference dynamics, so the model memorizes it perfectly. The
    expected rows are recomputed here without the recall code paths.
    """
    f = np.tanh if model.activation == TANH else (lambda v: v)
    z = sm.infer_hidden(model.w_h @ f(np.zeros(model.hidden_dim)), np.zeros(model.hidden_dim),
                        x0, model, cfg)
    rows = [np.asarray(x0, dtype=np.float64)]
    for _ in range(length - 1):
        z = model.w_h @ f(z)
        rows.append(model.w_f @ f(z))
    return np.array(rows)


class TestRecallOffline:
    def test_exact_recall_of_memorized_sequence(self):
        model, *_ = small_instance(11, h=5, d=3, scale=0.4)
        cfg = sm.InferenceConfig()
        seq = attractor_sequence(model, np.array([0.5, -0.2, 0.8]), cfg, 6)
        rec = sm.recall_offline(model, seq[:5], 6, cfg)
        assert np.abs(rec.x_hat[5] - seq[5]).max() < 1e-6

    def test_single_step_cue_recalls_full_sequence(self):
        model, *_ = small_instance(12, h=5, d=3, scale=0.4)
        cfg = sm.InferenceConfig()
        seq = attractor_sequence(model, np.array([0.3, 0.9, -0.4]), cfg, 6)
        rec = sm.recall_offline(model, seq[:1], 6, cfg)
        assert np.abs(rec.x_hat[1:] - seq[1:]).max() < 1e-6

    def test_attractor_separation_on_trained_pair(self, tiny_two_skill):
        model, seq_a, seq_b, cfg = tiny_two_skill
        rec = sm.recall_offline(model, seq_a[:1], 3, cfg)
        da = np.sum((rec.x_hat[1:] - seq_a[1:]) ** 2)
        db = np.sum((rec.x_hat[1:] - seq_b[1:]) ** 2)
        assert da < db

    def test_cue_length_must_be_below_horizon(self):
        model, *_ = small_instance(0)
        with pytest.raises(ValueError):
            sm.recall_offline(model, np.zeros((4, 2)), 4, sm.InferenceConfig())

    def test_recall_is_deterministic(self):
        model, *_ = small_instance(4)
        cue = np.array([[0.1, -0.3]])
        cfg = sm.InferenceConfig()
        a = sm.recall_offline(model, cue, 5, cfg)
        b = sm.recall_offline(model, cue, 5, cfg)
        np.testing.assert_array_equal(a.x_hat, b.x_hat)
        np.testing.assert_array_equal(a.z_trace, b.z_trace)
        np.testing.assert_array_equal(a.energy_trace, b.energy_trace)

    def test_energy_trace_is_squared_error_sum(self):
        model, *_ = small_instance(6)
        cue = np.array([[0.4, 0.2], [-0.1, 0.3]])
        rec = sm.recall_offline(model, cue, 4, sm.InferenceConfig())
        for mu in range(2):
            assert rec.energy_trace[mu] == pytest.approx(rec.eps_x_trace[mu] @ rec.eps_x_trace[mu])
        assert rec.energy_trace[2:] == pytest.approx(0.0)


class TestRecallOnline:
    def test_one_step_errors_on_memorized_sequence(self):
        model, *_ = small_instance(13, h=5, d=3, scale=0.4)
        cfg = sm.InferenceConfig()
        seq = attractor_sequence(model, np.array([0.7, 0.1, -0.5]), cfg, 6)
        rec = sm.recall_online(model, seq, cfg)
        assert np.abs(rec.eps_x_trace[1:]).max() < 1e-6

    def test_prefix_matches_offline(self):
        model, *_ = small_instance(14)
        cfg = sm.InferenceConfig(n_iters=30)
        obs = np.random.default_rng(3).standard_normal((4, 2)) * 0.3
        online = sm.recall_online(model, obs, cfg)
        offline = sm.recall_offline(model, obs[:3], 4, cfg)
        np.testing.assert_array_equal(online.z_trace[:3], offline.z_trace[:3])

    def test_switched_stream_tracks_new_skill(self, tiny_two_skill):
        model, seq_a, seq_b, cfg = tiny_two_skill
        stream = np.vstack([seq_a[:1], seq_b[1:]])
        rec = sm.recall_online(model, stream, cfg)
        tail = slice(stream.shape[0] - 2, None)
        err_b = np.mean((rec.x_hat[tail] - seq_b[tail]) ** 2)
        err_a = np.mean((rec.x_hat[tail] - seq_a[tail]) ** 2)
        assert err_b < err_a

    def test_needs_two_observations(self):
        model, *_ = small_instance(0)
        with pytest.raises(ValueError):
            sm.recall_online(model, np.zeros((1, 2)), sm.InferenceConfig())


class TestInitModel:
    def test_deterministic(self):
        a = sm.init_model(8, 3, seed=42)
        b = sm.init_model(8, 3, seed=42)
        np.testing.assert_array_equal(a.w_h, b.w_h)
        np.testing.assert_array_equal(a.w_f, b.w_f)

    def test_support_bound(self):
        model = sm.init_model(16, 5, seed=1)
        bound = np.sqrt(6.0 / 16)
        assert np.abs(model.w_h).max() <= bound
        assert np.abs(model.w_f).max() <= bound

    def test_sample_variance(self):
        h = 1000
        model = sm.init_model(h, h, seed=3)
        bound = np.sqrt(6.0 / h)
        expected = bound ** 2 / 3.0  # variance of U(-b, b)
        var = model.w_h.var()
        assert abs(var - expected) / expected < 0.05

    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            sm.init_model(0, 3, seed=0)


class TestMemorize:
    def test_zero_input_fixed_point(self):
        model = sm.TpcModel(np.zeros((4, 4)), np.zeros((2, 4)))
        seqs = [np.zeros((5, 2))]
        out, curve = sm.memorize(
            model, seqs, sm.TrainConfig(epochs_per_skill=3), sm.InferenceConfig(n_iters=10)
        )
        assert not out.w_h.any() and not out.w_f.any()
        np.testing.assert_array_equal(curve, np.zeros(3))

    def test_constant_sequence_converges(self):
        model = sm.init_model(6, 2, seed=0, activation_kind=LINEAR)
        seq = np.tile([0.6, -0.4], (5, 1))
        out, curve = sm.memorize(
            model, [seq],
            sm.TrainConfig(weight_lr=5e-3, epochs_per_skill=800),
            sm.InferenceConfig(inference_lr=0.05, n_iters=100),
        )
        assert curve[-1] < 0.01 * curve[0]

    def test_one_skill_halves_no_slower_than_two(self):
        from skillmem.experiments import epochs_to_fraction

        rng = np.random.default_rng(0)
        seq_a = 0.5 * rng.standard_normal((4, 3))
        seq_b = 0.5 * rng.standard_normal((4, 3))
        tc = sm.TrainConfig(weight_lr=2e-3, epochs_per_skill=300)
        cfg = sm.InferenceConfig(inference_lr=0.02, n_iters=60)
        _, one = sm.memorize(sm.init_model(16, 3, seed=1), [seq_a], tc, cfg)
        _, two = sm.memorize(sm.init_model(16, 3, seed=1), [seq_a, seq_b], tc, cfg)
        e1 = epochs_to_fraction(one)
        e2 = epochs_to_fraction(two)
        assert e1 >= 0 and e2 >= 0 and e1 <= e2

    def test_matches_composed_operations(self):
        """One epoch of memorize equals the hand-composed per-step loop."""
        model, *_ = small_instance(21, h=4, d=3)
        rng = np.random.default_rng(5)
        data = 0.5 * rng.standard_normal((4, 3))
        cfg = sm.InferenceConfig(n_iters=20)
        lr = 1e-3
        fast, curve = sm.memorize(
            model.copy(), [data], sm.TrainConfig(weight_lr=lr, epochs_per_skill=1), cfg
        )
        ref = model.copy()
        z_prev = np.zeros(4)
        total = 0.0
        for mu in range(4):
            z0 = ref.w_h @ np.tanh(z_prev)
            z = sm.infer_hidden(z0, z_prev, data[mu], ref, cfg)
            total += sm.step_energy(z, z_prev, data[mu], ref)
            ref = sm.update_weights(ref, z, z_prev, data[mu], lr)
            z_prev = z
        np.testing.assert_array_equal(fast.w_h, ref.w_h)
        np.testing.assert_array_equal(fast.w_f, ref.w_f)
        assert curve[0] == pytest.approx(total, rel=1e-12)

    def test_sequence_cadence_defers_updates(self):
        model, *_ = small_instance(22, h=4, d=3)
        rng = np.random.default_rng(6)
        data = 0.5 * rng.standard_normal((3, 3))
        cfg = sm.InferenceConfig(n_iters=20)
        lr = 1e-3
        out, _ = sm.memorize(
            model.copy(), [data],
            sm.TrainConfig(weight_lr=lr, epochs_per_skill=1, update_cadence="sequence"),
            cfg,
        )
        # with frozen weights, replay the sweep and accumulate the deltas
        ref = model.copy()
        z_prev = np.zeros(4)
        dwh = np.zeros((4, 4))
        dwf = np.zeros((3, 4))
        for mu in range(3):
            z0 = ref.w_h @ np.tanh(z_prev)
            z = sm.infer_hidden(z0, z_prev, data[mu], ref, cfg)
            eps_z, eps_x = errors(z, z_prev, data[mu], ref)
            dwh += lr * np.outer(eps_z, np.tanh(z_prev))
            dwf += lr * np.outer(eps_x, np.tanh(z))
            z_prev = z
        np.testing.assert_allclose(out.w_h, model.w_h + dwh, rtol=0, atol=1e-15)
        np.testing.assert_allclose(out.w_f, model.w_f + dwf, rtol=0, atol=1e-15)

    def test_empty_sequence_list_rejected(self):
        model, *_ = small_instance(0)
        with pytest.raises(ValueError):
            sm.memorize(model, [], sm.TrainConfig(), sm.InferenceConfig())

    def test_mismatched_channels_rejected(self):
        model, *_ = small_instance(0)
        with pytest.raises(ValueError):
            sm.memorize(model, [np.zeros((4, 5))], sm.TrainConfig(), sm.InferenceConfig())


class TestSpeedAccuracyProperty:
    def test_error_non_increasing_in_iterations(self, tiny_two_skill):
        model, seq_a, seq_b, cfg = tiny_two_skill
        errs = []
        for n in (1, 2, 5, 10, 20, 50, 100):
            icfg = sm.InferenceConfig(inference_lr=cfg.inference_lr, n_iters=n)
            err = 0.0
            for seq in (seq_a, seq_b):
                rec = sm.recall_offline(model, seq[:1], 3, icfg)
                err += np.mean((rec.x_hat[1:] - seq[1:]) ** 2)
            errs.append(err / 2)
        assert errs[-1] < errs[0]
        for a, b in zip(errs, errs[1:]):
            assert b <= a * 1.05


@pytest.fixture(scope="module")
def tiny_two_skill():
    """Two short separable sequences memorized by a small tanh network."""
    rng = np.random.default_rng(42)
    seq_a = np.array([[0.9, 0.0, 0.2], [0.5, 0.4, -0.3], [0.1, 0.8, -0.6]])
    seq_b = np.array([[-0.9, 0.1, -0.2], [-0.4, -0.5, 0.3], [0.0, -0.9, 0.7]])
    model = sm.init_model(32, 3, seed=7)
    cfg = sm.InferenceConfig(inference_lr=0.02, n_iters=100)
    model, _ = sm.memorize(
        model, [seq_a, seq_b],
        sm.TrainConfig(weight_lr=2e-3, epochs_per_skill=600),
        cfg,
    )
    return model, seq_a, seq_b, cfg
