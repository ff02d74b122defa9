"""Adversarial map from spectrogram latents to text latents (stage three).

The generator predicts a text latent code from an audio latent code; the
discriminator sees [text-like; audio] concatenations and separates real
pairs from generated ones.  An auxiliary squared-error term stabilizes
training, weighted by lambda_mse.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from torch import nn

from . import validation
from .specvae import TrainingDiverged


def _mlp(in_dim, hidden_dims, out_dim):
    layers = []
    prev = in_dim
    for h in hidden_dims:
        layers += [nn.Linear(prev, h), nn.ReLU()]
        prev = h
    layers.append(nn.Linear(prev, out_dim))
    return nn.Sequential(*layers)


class _GanModule(nn.Module):
    def __init__(self, latent_dim, hidden_dims):
        super().__init__()
        self.generator = _mlp(latent_dim, hidden_dims, latent_dim)
        self.discriminator = _mlp(2 * latent_dim, hidden_dims, 1)

    def d_logit(self, z_t_like, z_s):
        return self.discriminator(torch.cat([z_t_like, z_s], dim=1)).squeeze(1)


def gan_loss_terms(module, z_s, z_t, lambda_mse):
    """d_loss, g_adv_loss, mse, g_total as torch scalars.

    d_loss = -mean[log D(z) + log(1 - D(z_hat))] with z_hat detached;
    the generator uses the non-saturating form -mean[log D(z_hat)].
    """
    z_t_hat = module.generator(z_s)
    real_logit = module.d_logit(z_t, z_s)
    fake_logit = module.d_logit(z_t_hat.detach(), z_s)
    ones, zeros = torch.ones_like(real_logit), torch.zeros_like(real_logit)
    d_loss = F.binary_cross_entropy_with_logits(
        real_logit, ones
    ) + F.binary_cross_entropy_with_logits(fake_logit, zeros)
    g_adv = F.binary_cross_entropy_with_logits(module.d_logit(z_t_hat, z_s), ones)
    mse = ((z_t_hat - z_t) ** 2).sum(dim=1).mean()
    return {
        "d_loss": d_loss,
        "g_adv_loss": g_adv,
        "mse": mse,
        "g_total": g_adv + lambda_mse * mse,
    }


class LatentAligner(BaseEstimator):
    """Three-layer feed-forward GAN aligning audio latents to text latents."""

    def __init__(
        self,
        latent_dim=128,
        hidden_dims=(256, 256),
        learning_rate=1e-3,
        batch_size=32,
        epochs=6,
        lambda_mse=1.0,
        temperature=1.0,
        seed=0,
    ):
        self.latent_dim = latent_dim
        self.hidden_dims = hidden_dims
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.lambda_mse = lambda_mse
        self.temperature = temperature
        self.seed = seed

    def _validate(self):
        if self.lambda_mse < 0:
            raise ValueError("lambda_mse must be non-negative")
        if self.latent_dim <= 0:
            raise ValueError("latent_dim must be positive")

    def _build(self):
        return _GanModule(self.latent_dim, tuple(self.hidden_dims))

    def fit(self, examples, spec_model, text_model):
        """Alternate one discriminator and one generator step per batch.

        Latent pairs are re-sampled from both posteriors (temperature 1 by
        default) at the start of every epoch.
        """
        self._validate()
        if spec_model.latent_dim != self.latent_dim or text_model.latent_dim != self.latent_dim:
            raise ValueError("all three models must share latent_dim")
        examples = list(examples)
        if not examples:
            raise ValueError("empty dataset")
        torch.manual_seed(self.seed)
        module = self._build()
        opt_d = torch.optim.Adam(
            module.discriminator.parameters(), lr=self.learning_rate
        )
        opt_g = torch.optim.Adam(module.generator.parameters(), lr=self.learning_rate)
        order = np.random.default_rng(self.seed)
        spec_means, spec_stds = spec_model.encode_batch(
            [ex.spectrogram for ex in examples]
        )
        n = len(examples)
        history = []
        step = 0
        module.train()
        for _ in range(self.epochs):
            z_s_all, z_t_all = self._draw_latents(
                examples, spec_means, spec_stds, text_model, order
            )
            perm = order.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = perm[start : start + self.batch_size]
                z_s = torch.from_numpy(z_s_all[idx]).float()
                z_t = torch.from_numpy(z_t_all[idx]).float()
                terms_d = gan_loss_terms(module, z_s, z_t, self.lambda_mse)
                opt_d.zero_grad()
                opt_g.zero_grad()
                terms_d["d_loss"].backward()
                opt_d.step()
                # generator step against the just-updated discriminator
                terms_g = gan_loss_terms(module, z_s, z_t, self.lambda_mse)
                opt_d.zero_grad()
                opt_g.zero_grad()
                terms_g["g_total"].backward()
                opt_g.step()
                row = {
                    "step": step,
                    "d_loss": terms_d["d_loss"].item(),
                    "g_adv_loss": terms_g["g_adv_loss"].item(),
                    "mse": terms_g["mse"].item(),
                    "g_total": terms_g["g_total"].item(),
                }
                if not all(np.isfinite(v) for v in row.values()):
                    raise TrainingDiverged(f"non-finite GAN loss at step {step}")
                history.append(row)
                step += 1
        module.eval()
        self.module_ = module
        self.history_ = history
        return self

    def _draw_latents(self, examples, spec_means, spec_stds, text_model, rng):
        """Temperature-scaled posterior samples for every pair."""
        eps = rng.standard_normal(spec_means.shape)
        z_s = spec_means + self.temperature * eps * spec_stds
        z_t = np.empty_like(z_s)
        for i, ex in enumerate(examples):
            post = text_model.encode(ex.line, z_s[i])
            eps_t = rng.standard_normal(self.latent_dim)
            z_t[i] = post.mean + self.temperature * eps_t * post.stddev
        return z_s, z_t

    def predict(self, Z_s) -> np.ndarray:
        """Predicted text latents for audio latents; 1-D in, 1-D out."""
        check_is_fitted(self, "module_")
        single = np.asarray(Z_s).ndim == 1
        Z = validation.as_latent_batch(Z_s, self.latent_dim)
        with torch.no_grad():
            out = self.module_.generator(torch.from_numpy(Z).float()).numpy()
        out = out.astype(np.float64)
        return out[0] if single else out

    def discriminator_score(self, z_t_like, z_s) -> float:
        """D([z_t_like; z_s]) as a probability in the open interval (0, 1)."""
        check_is_fitted(self, "module_")
        z_t_like = validation.as_latent(z_t_like, self.latent_dim)
        z_s = validation.as_latent(z_s, self.latent_dim)
        with torch.no_grad():
            logit = self.module_.d_logit(
                torch.from_numpy(z_t_like[None]).float(),
                torch.from_numpy(z_s[None]).float(),
            )
        return float(torch.sigmoid(logit)[0].item())

    def losses(self, Z_s, Z_t) -> dict:
        """The four loss terms on a latent batch, as floats."""
        check_is_fitted(self, "module_")
        Z_s = validation.as_latent_batch(Z_s, self.latent_dim)
        Z_t = validation.as_latent_batch(Z_t, self.latent_dim)
        if Z_s.shape[0] != Z_t.shape[0]:
            raise ValueError("batch size mismatch")
        with torch.no_grad():
            terms = gan_loss_terms(
                self.module_,
                torch.from_numpy(Z_s).float(),
                torch.from_numpy(Z_t).float(),
                self.lambda_mse,
            )
        return {k: float(v.item()) for k, v in terms.items()}

    def save(self, prefix) -> None:
        """Write <prefix>.pt (weights blob) and <prefix>.json (config manifest)."""
        check_is_fitted(self, "module_")
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.module_.state_dict(), prefix.with_suffix(".pt"))
        manifest = {"estimator": "LatentAligner", "params": self.get_params()}
        manifest["params"]["hidden_dims"] = list(self.hidden_dims)
        prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, prefix) -> "LatentAligner":
        prefix = Path(prefix)
        manifest = json.loads(prefix.with_suffix(".json").read_text())
        params = manifest["params"]
        params["hidden_dims"] = tuple(params["hidden_dims"])
        est = cls(**params)
        est.module_ = est._build()
        est.module_.load_state_dict(
            torch.load(prefix.with_suffix(".pt"), weights_only=True)
        )
        est.module_.eval()
        est.history_ = []
        return est
