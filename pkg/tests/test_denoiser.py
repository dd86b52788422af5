"""Denoiser contracts: combined-noise target, oracle, model behavior, training."""

import numpy as np
import pytest

from sediff.denoiser import (
    DenoiserConfig,
    DenoiserModel,
    OracleDenoiser,
    TrainConfig,
    TrainItem,
    combined_target,
    diffuse_batch,
    train_denoiser,
)
from sediff.schedule import ScheduleConfig, build_schedule


@pytest.fixture(scope="module")
def table():
    return build_schedule(ScheduleConfig())


def _tiny_config(**kw):
    base = dict(blocks=2, channels=6, mel_bands=8, enc_dim=4, temb_dim=16,
                hop=8, dilation_cycle=(1, 2), init_seed=0)
    base.update(kw)
    return DenoiserConfig(**base)


class TestCombinedTarget:
    def test_reduces_to_scaled_eps_when_y_equals_x0(self, table):
        rng = np.random.default_rng(0)
        x0 = rng.normal(size=64)
        eps = rng.normal(size=64)
        for t in (1, 25, 50):
            target = combined_target(x0, x0, eps, t, table)
            scale = np.sqrt(table.delta_bar[t]) / table.norm[t]
            np.testing.assert_allclose(target, scale * eps, rtol=1e-12)

    def test_reduces_to_background_term_when_eps_zero(self, table):
        rng = np.random.default_rng(1)
        x0 = rng.normal(size=64)
        y = rng.normal(size=64)
        t = 30
        target = combined_target(x0, y, np.zeros(64), t, table)
        scale = table.mean_coeff_y(t) / table.norm[t]
        np.testing.assert_allclose(target, scale * (y - x0), rtol=1e-12)

    def test_exact_target_recovers_posterior_mean(self, table):
        """Substituting the exact target into the reverse mean must agree with
        the explicit Gaussian posterior (scalar oracle) to < 1e-8."""
        x0, y = 0.41, -0.67
        rng = np.random.default_rng(2)
        for t in (2, 25, 50):
            eps = float(rng.normal())
            a = table.mean_coeff_x0(t)
            b = table.mean_coeff_y(t)
            x_t = a * x0 + b * y + np.sqrt(table.delta_bar[t]) * eps
            target = float(combined_target(np.array([x0]), np.array([y]),
                                           np.array([eps]), t, table)[0])
            mean_impl = (table.coeff_x[t] * x_t + table.coeff_y[t] * y
                         + table.coeff_eps[t] * target)

            a_prev = table.mean_coeff_x0(t - 1)
            b_prev = table.mean_coeff_y(t - 1)
            mu1 = a_prev * x0 + b_prev * y
            mu2 = table.trans_coeff[t] * mu1 + table.trans_drift[t] * y
            var2 = table.trans_coeff[t] ** 2 * table.delta_bar[t - 1] + table.trans_var[t]
            cov = table.trans_coeff[t] * table.delta_bar[t - 1]
            post_mean = mu1 + cov / var2 * (x_t - mu2)
            assert mean_impl == pytest.approx(post_mean, rel=1e-8, abs=1e-12)

    def test_rejects_out_of_range_t(self, table):
        from sediff.denoiser import DenoiserError

        with pytest.raises(DenoiserError):
            combined_target(np.zeros(4), np.zeros(4), np.zeros(4), 0, table)
        with pytest.raises(DenoiserError):
            combined_target(np.zeros(4), np.zeros(4), np.zeros(4), 51, table)


class TestOracleDenoiser:
    def test_returns_exact_target_for_simulated_state(self, table):
        rng = np.random.default_rng(3)
        x0 = rng.normal(size=(1, 32))
        y = rng.normal(size=(1, 32))
        oracle = OracleDenoiser(x0, table)
        for t in (1, 17, 50):
            eps = rng.normal(size=(1, 32))
            x_t = diffuse_batch(x0, y, eps, np.array([t]), table)
            expected = combined_target(x0, y, eps, np.array([t]), table)
            np.testing.assert_allclose(oracle.predict(x_t, t), expected, rtol=1e-10, atol=1e-12)


class TestModelBasics:
    def test_zero_initialized_head_predicts_zero(self):
        model = DenoiserModel(_tiny_config())
        rng = np.random.default_rng(4)
        out, _ = model.forward(rng.normal(size=(3, 16)), np.array([1, 2, 3]),
                               mel=rng.normal(size=(3, 2, 8)),
                               enc=rng.normal(size=(3, 4)))
        assert np.all(out == 0.0)

    def test_batch_permutation_equivariance(self):
        model = DenoiserModel(_tiny_config(init_seed=9))
        # Break the zero head so outputs are non-trivial.
        rng = np.random.default_rng(5)
        model.params["head.w2"] = rng.standard_normal((1, 6)).astype(np.float32)
        x = rng.normal(size=(4, 16))
        t = np.array([1, 10, 20, 30])
        mel = rng.normal(size=(4, 2, 8))
        enc = rng.normal(size=(4, 4))
        out, _ = model.forward(x, t, mel=mel, enc=enc)
        perm = np.array([2, 0, 3, 1])
        out_perm, _ = model.forward(x[perm], t[perm], mel=mel[perm], enc=enc[perm])
        np.testing.assert_array_equal(out_perm, out[perm])

    def test_encoding_sensitivity(self):
        """Changing the noise encoding must change the output once the
        projection is non-zero (the conditioning path is live)."""
        model = DenoiserModel(_tiny_config(init_seed=11))
        rng = np.random.default_rng(6)
        model.params["head.w2"] = rng.standard_normal((1, 6)).astype(np.float32)
        x = rng.normal(size=(1, 16))
        mel = rng.normal(size=(1, 2, 8))
        enc_a = np.zeros((1, 4))
        enc_a[0, 0] = 1.0
        enc_b = np.zeros((1, 4))
        enc_b[0, 2] = 1.0
        out_a, _ = model.forward(x, 5, mel=mel, enc=enc_a)
        out_b, _ = model.forward(x, 5, mel=mel, enc=enc_b)
        assert np.abs(out_a - out_b).max() > 0.0

    def test_output_length_matches_input(self):
        model = DenoiserModel(_tiny_config())
        rng = np.random.default_rng(7)
        for L in (16, 32, 64):
            out, _ = model.forward(rng.normal(size=(2, L)), 3,
                                   mel=rng.normal(size=(2, L // 8, 8)),
                                   enc=rng.normal(size=(2, 4)))
            assert out.shape == (2, L)

    def test_shape_mismatches_rejected(self):
        from sediff.denoiser import DenoiserError

        model = DenoiserModel(_tiny_config())
        rng = np.random.default_rng(8)
        with pytest.raises(DenoiserError):
            model.forward(rng.normal(size=(2, 17)), 3,
                          mel=rng.normal(size=(2, 3, 8)), enc=rng.normal(size=(2, 4)))
        with pytest.raises(DenoiserError):
            model.forward(rng.normal(size=(2, 16)), 3, mel=None, enc=rng.normal(size=(2, 4)))

    def test_checkpoint_roundtrip_preserves_predictions(self, tmp_path):
        model = DenoiserModel(_tiny_config(init_seed=13))
        rng = np.random.default_rng(9)
        for k in model.params:
            model.params[k] = rng.standard_normal(model.params[k].shape).astype(np.float32) * 0.1
        path = tmp_path / "model.ckpt"
        model.save(path)
        restored = DenoiserModel.load(path)
        x = rng.normal(size=(2, 16))
        mel = rng.normal(size=(2, 2, 8))
        enc = rng.normal(size=(2, 4))
        np.testing.assert_array_equal(
            model.predict(x, 7, mel=mel, enc=enc),
            restored.predict(x, 7, mel=mel, enc=enc),
        )

    def test_bound_predict_matches_forward(self, table):
        model = DenoiserModel(_tiny_config(init_seed=17))
        rng = np.random.default_rng(10)
        for k in model.params:
            model.params[k] = rng.standard_normal(model.params[k].shape).astype(np.float32) * 0.1
        x = rng.normal(size=(2, 16))
        mel = rng.normal(size=(2, 2, 8))
        enc = rng.normal(size=(2, 4))
        bound = model.bind(mel=mel, enc=enc)
        np.testing.assert_allclose(
            bound.predict(x, 9), model.predict(x, 9, mel=mel, enc=enc), rtol=1e-6, atol=1e-7
        )


class TestTraining:
    def _items(self, n=4, length=256, seed=0, identical=False):
        rng = np.random.default_rng(seed)
        items = []
        for i in range(n):
            x0 = rng.normal(scale=0.3, size=length).astype(np.float32)
            y = x0 if identical else (x0 + 0.1 * rng.normal(size=length)).astype(np.float32)
            mel = rng.normal(size=(length // 8, 8)).astype(np.float32)
            enc = np.zeros(4, np.float32)
            enc[i % 4] = 1.0
            items.append(TrainItem(x0, np.asarray(y, np.float32), mel, enc))
        return items

    def test_same_seed_identical_loss_curves(self, table):
        curves = []
        for _ in range(2):
            model = DenoiserModel(_tiny_config(init_seed=21))
            hyper = TrainConfig(lr=1e-3, batch=2, steps=30, seed=5, crop_frames=8,
                                log_every=5)
            result = train_denoiser(model, self._items(), table, hyper)
            curves.append(result.loss_curve)
        assert curves[0] == curves[1]

    def test_clean_only_corpus_learns_vanilla_eps(self, table):
        """With y == x0 the task degenerates to plain eps-prediction; training
        loss must fall below the raw target variance."""
        model = DenoiserModel(_tiny_config(init_seed=23))
        items = self._items(identical=True, seed=3)
        hyper = TrainConfig(lr=2e-3, batch=4, steps=400, seed=1, crop_frames=8)
        result = train_denoiser(model, items, table, hyper)
        # Raw target variance: E[(s_t/norm_t)^2] averaged over uniform t.
        scale2 = np.mean(table.delta_bar[1:] / np.square(table.norm[1:]))
        assert result.final_loss < scale2
        assert not result.aborted

    def test_divergence_restores_snapshot(self, table):
        model = DenoiserModel(_tiny_config(init_seed=29))
        before = model.clone_params()
        # Adam normalizes step sizes, so only an absurd lr overflows float32
        # activations and trips the non-finite-loss abort.
        hyper = TrainConfig(lr=1e30, batch=2, steps=300, seed=2, crop_frames=8,
                            snapshot_every=10_000)
        result = train_denoiser(model, self._items(seed=5), table, hyper)
        assert result.aborted
        for k, v in before.items():
            np.testing.assert_array_equal(model.params[k], v)

    def test_single_utterance_overfit(self, table):
        """A small model memorizes one short utterance: loss < 1e-3 within a
        5000-step budget."""
        rng = np.random.default_rng(11)
        length = 512
        x0 = (0.4 * np.sin(2 * np.pi * 440 * np.arange(length) / 16000)).astype(np.float32)
        y = (x0 + 0.05 * rng.normal(size=length)).astype(np.float32)
        mel = rng.normal(size=(length // 8, 8)).astype(np.float32)
        items = [TrainItem(x0, y, mel, None)]
        config = DenoiserConfig(blocks=4, channels=16, mel_bands=8, enc_dim=0,
                                temb_dim=32, hop=8, dilation_cycle=(1, 2, 4, 8),
                                init_seed=31)
        model = DenoiserModel(config)
        hyper = TrainConfig(lr=2e-3, batch=8, steps=5000, crop_frames=32, seed=4,
                            log_every=100)
        result = train_denoiser(model, items, table, hyper)
        losses = [loss for _, loss in result.loss_curve]
        assert min(losses) < 1e-3, f"best loss {min(losses):.5f}"
