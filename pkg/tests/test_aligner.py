import numpy as np
import pytest
import torch

from jamlines.aligner import LatentAligner, gan_loss_terms


def fresh_aligner(latent_dim=4, seed=0, **kw):
    model = LatentAligner(latent_dim=latent_dim, hidden_dims=(8, 8), seed=seed, **kw)
    torch.manual_seed(seed)
    model.module_ = model._build()
    model.history_ = []
    return model


def random_latents(n, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.standard_normal((n, d))


class TestConfig:
    def test_paper_defaults(self):
        model = LatentAligner()
        assert model.epochs == 6
        assert model.lambda_mse == 1.0
        assert model.learning_rate == 1e-3
        assert model.batch_size == 32
        assert model.temperature == 1.0

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            LatentAligner(lambda_mse=-0.1)._validate()


class TestPredict:
    def test_vector_in_vector_out(self):
        model = fresh_aligner()
        out = model.predict(np.zeros(4))
        assert out.shape == (4,)
        assert np.isfinite(out).all()

    def test_batch_shape(self):
        model = fresh_aligner()
        assert model.predict(np.zeros((5, 4))).shape == (5, 4)

    def test_deterministic(self):
        model = fresh_aligner()
        z = np.random.default_rng(3).standard_normal(4)
        assert np.array_equal(model.predict(z), model.predict(z))

    def test_dimension_mismatch_rejected(self):
        model = fresh_aligner()
        with pytest.raises(ValueError):
            model.predict(np.zeros(5))


class TestDiscriminator:
    def test_score_in_open_unit_interval(self):
        model = fresh_aligner()
        rng = np.random.default_rng(0)
        for _ in range(20):
            s = model.discriminator_score(rng.standard_normal(4), rng.standard_normal(4))
            assert 0.0 < s < 1.0

    def test_concatenation_order_is_text_then_spec(self):
        # make the first half of D's input the only thing that matters
        model = fresh_aligner()
        first = model.module_.discriminator[0]
        with torch.no_grad():
            first.weight.zero_()
            first.bias.zero_()
            first.weight[:, :4] = 1.0  # reads only the text slot
        z_text = np.ones(4)
        z_spec = np.zeros(4)
        a = model.discriminator_score(z_text, z_spec)
        b = model.discriminator_score(z_spec, z_text)
        assert a != b  # swapping the roles must change the score

    def test_constant_half_discriminator_gives_2_ln2(self):
        # zeroed final layer makes D identically 0.5; Eq-level oracle
        model = fresh_aligner()
        final = model.module_.discriminator[-1]
        with torch.no_grad():
            final.weight.zero_()
            final.bias.zero_()
        Z_s, Z_t = random_latents(16)
        terms = model.losses(Z_s, Z_t)
        assert terms["d_loss"] == pytest.approx(2 * np.log(2), abs=1e-6)
        assert terms["g_adv_loss"] == pytest.approx(np.log(2), abs=1e-6)


class TestLosses:
    def test_generator_reproducing_targets_gives_zero_mse(self):
        model = fresh_aligner()
        Z_s, _ = random_latents(8)
        Z_t = model.predict(Z_s)
        assert model.losses(Z_s, Z_t)["mse"] == pytest.approx(0.0, abs=1e-10)

    def test_zero_lambda_total_is_adversarial_only(self):
        model = fresh_aligner(lambda_mse=0.0)
        Z_s, Z_t = random_latents(8, seed=1)
        terms = model.losses(Z_s, Z_t)
        assert terms["g_total"] == terms["g_adv_loss"]

    def test_loss_decomposition(self):
        model = fresh_aligner(lambda_mse=0.7)
        Z_s, Z_t = random_latents(8, seed=2)
        terms = model.losses(Z_s, Z_t)
        assert terms["g_total"] - 0.7 * terms["mse"] == pytest.approx(
            terms["g_adv_loss"], rel=1e-6
        )

    def test_mse_is_mean_squared_euclidean_norm(self):
        model = fresh_aligner()
        Z_s, Z_t = random_latents(8, seed=3)
        pred = model.predict(Z_s)
        expected = float(((pred - Z_t) ** 2).sum(axis=1).mean())
        assert model.losses(Z_s, Z_t)["mse"] == pytest.approx(expected, rel=1e-6)

    def test_batch_size_mismatch_rejected(self):
        model = fresh_aligner()
        with pytest.raises(ValueError):
            model.losses(np.zeros((3, 4)), np.zeros((2, 4)))


class TestTraining:
    def test_gradient_isolation(self):
        torch.manual_seed(0)
        model = LatentAligner(latent_dim=4, hidden_dims=(8, 8))
        module = model._build()
        opt_d = torch.optim.Adam(module.discriminator.parameters(), lr=1e-2)
        opt_g = torch.optim.Adam(module.generator.parameters(), lr=1e-2)
        z_s = torch.randn(8, 4)
        z_t = torch.randn(8, 4)

        def snapshot(net):
            return [p.detach().clone() for p in net.parameters()]

        g_before, d_before = snapshot(module.generator), snapshot(module.discriminator)
        terms = gan_loss_terms(module, z_s, z_t, 1.0)
        opt_d.zero_grad()
        opt_g.zero_grad()
        terms["d_loss"].backward()
        assert all(
            p.grad is None or torch.all(p.grad == 0)
            for p in module.generator.parameters()
        )
        opt_d.step()
        assert all(torch.equal(a, b) for a, b in zip(g_before, snapshot(module.generator)))
        assert not all(
            torch.equal(a, b) for a, b in zip(d_before, snapshot(module.discriminator))
        )
        d_mid = snapshot(module.discriminator)
        terms = gan_loss_terms(module, z_s, z_t, 1.0)
        opt_d.zero_grad()
        opt_g.zero_grad()
        terms["g_total"].backward()
        opt_g.step()
        assert all(torch.equal(a, b) for a, b in zip(d_mid, snapshot(module.discriminator)))
        assert not all(
            torch.equal(a, b) for a, b in zip(g_before, snapshot(module.generator))
        )

    def test_fit_is_bit_deterministic(self, tiny_stack):
        pairs, _, spec, text = tiny_stack
        kw = dict(latent_dim=4, hidden_dims=(8, 8), epochs=2, batch_size=5, seed=3)
        a = LatentAligner(**kw).fit(pairs, spec, text)
        b = LatentAligner(**kw).fit(pairs, spec, text)
        assert a.history_ == b.history_

    def test_history_logs_all_four_losses(self, tiny_stack):
        pairs, _, spec, text = tiny_stack
        model = LatentAligner(latent_dim=4, hidden_dims=(8, 8), epochs=1, batch_size=5)
        model.fit(pairs, spec, text)
        assert set(model.history_[0]) == {"step", "d_loss", "g_adv_loss", "mse", "g_total"}

    def test_latent_dim_mismatch_rejected(self, tiny_stack):
        pairs, _, spec, text = tiny_stack
        with pytest.raises(ValueError):
            LatentAligner(latent_dim=6).fit(pairs, spec, text)

    def test_save_load_round_trip(self, tiny_stack, tmp_path):
        pairs, _, spec, text = tiny_stack
        model = LatentAligner(latent_dim=4, hidden_dims=(8, 8), epochs=1, batch_size=5)
        model.fit(pairs, spec, text)
        model.save(tmp_path / "g")
        loaded = LatentAligner.load(tmp_path / "g")
        z = np.random.default_rng(0).standard_normal(4)
        assert np.array_equal(model.predict(z), loaded.predict(z))
