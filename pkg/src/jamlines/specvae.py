"""Convolutional VAE over mel-spectrograms (training stage one).

Every downstream model consumes the posteriors this estimator produces, so
encode() is the load-bearing surface: a deterministic map from a grid to a
DiagonalGaussian of dimension latent_dim.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from torch import nn

from . import validation
from .latent import DiagonalGaussian, kl_to_standard_normal


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; message carries step and loss diagnostics."""


def write_history_csv(path, history: list[dict]) -> None:
    if not history:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0].keys()))
        writer.writeheader()
        writer.writerows(history)


class _ConvVae(nn.Module):
    """Stride-2 conv encoder with mean/log-stddev heads, mirrored decoder."""

    def __init__(self, input_shape, conv_channels, latent_dim):
        super().__init__()
        h, w = input_shape
        n_layers = len(conv_channels)
        if h % 2**n_layers or w % 2**n_layers:
            raise ValueError(
                f"input shape {input_shape} must be divisible by 2^{n_layers} "
                f"for {n_layers} stride-2 layers"
            )
        enc = []
        in_ch = 1
        for ch in conv_channels:
            enc += [nn.Conv2d(in_ch, ch, kernel_size=4, stride=2, padding=1), nn.ReLU()]
            in_ch = ch
        self.encoder = nn.Sequential(*enc[:-1])  # heads follow the last conv
        self.bottom_shape = (conv_channels[-1], h // 2**n_layers, w // 2**n_layers)
        flat = int(np.prod(self.bottom_shape))
        self.fc_mean = nn.Linear(flat, latent_dim)
        self.fc_logstd = nn.Linear(flat, latent_dim)
        self.fc_up = nn.Linear(latent_dim, flat)
        dec = []
        rev = list(conv_channels[::-1]) + [1]
        for i in range(n_layers):
            dec.append(
                nn.ConvTranspose2d(rev[i], rev[i + 1], kernel_size=4, stride=2, padding=1)
            )
            dec.append(nn.ReLU() if i < n_layers - 1 else nn.Sigmoid())
        self.decoder = nn.Sequential(*dec)

    def encode(self, x):
        h = self.encoder(x.unsqueeze(1)).flatten(1)
        return self.fc_mean(h), self.fc_logstd(h)

    def decode(self, z):
        h = self.fc_up(z).view(-1, *self.bottom_shape)
        return self.decoder(h).squeeze(1)


def vae_loss_terms(module, x, noise, temperature, kl_weight):
    """Reconstruction / KL / total as torch scalars; shared by fit and tests."""
    mean, logstd = module.encode(x)
    std = torch.exp(logstd)
    z = mean + temperature * noise * std
    recon = module.decode(z)
    rec = F.mse_loss(recon, x)
    kl = 0.5 * (mean**2 + std**2 - 1.0 - 2.0 * logstd).sum(dim=1).mean()
    return {"reconstruction": rec, "kl": kl, "total": rec + kl_weight * kl}


class SpecVae(BaseEstimator):
    """Spectrogram VAE: four stride-2 conv layers, 128-d Gaussian latent.

    Parameters mirror the training recipe: Adam, batch size 32, learning
    rate 1e-4, sampling temperature 1.0.  kl_weight scales the KL term in
    the total loss; with mean-squared-error reconstruction a weight of
    1/(H*W) recovers the unweighted sum-form objective.
    """

    def __init__(
        self,
        latent_dim=128,
        conv_channels=(32, 64, 128, 256),
        learning_rate=1e-4,
        batch_size=32,
        epochs=20,
        kl_weight=1.0,
        temperature=1.0,
        input_shape=(128, 432),
        seed=0,
    ):
        self.latent_dim = latent_dim
        self.conv_channels = conv_channels
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.kl_weight = kl_weight
        self.temperature = temperature
        self.input_shape = input_shape
        self.seed = seed

    def _validate(self):
        if self.latent_dim <= 0:
            raise ValueError("latent_dim must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    def _build(self):
        return _ConvVae(tuple(self.input_shape), tuple(self.conv_channels), self.latent_dim)

    def fit(self, X, y=None, steps: int | None = None):
        """Train on a batch of grids; steps caps total optimizer steps."""
        self._validate()
        grids = validation.as_grid_batch(X, self.input_shape)
        torch.manual_seed(self.seed)
        module = self._build()
        opt = torch.optim.Adam(module.parameters(), lr=self.learning_rate)
        order = np.random.default_rng(self.seed)
        data = torch.from_numpy(grids)
        n = data.shape[0]
        history = []
        step = 0
        module.train()
        done = False
        for _ in range(self.epochs):
            perm = order.permutation(n)
            for start in range(0, n, self.batch_size):
                x = data[perm[start : start + self.batch_size]]
                noise = torch.randn(x.shape[0], self.latent_dim)
                terms = vae_loss_terms(
                    module, x, noise, self.temperature, self.kl_weight
                )
                total = terms["total"]
                if not torch.isfinite(total):
                    raise TrainingDiverged(
                        f"non-finite loss at step {step}: "
                        f"rec={terms['reconstruction'].item()} kl={terms['kl'].item()}"
                    )
                opt.zero_grad()
                total.backward()
                opt.step()
                history.append(
                    {
                        "step": step,
                        "reconstruction": terms["reconstruction"].item(),
                        "kl": terms["kl"].item(),
                        "total": total.item(),
                    }
                )
                step += 1
                if steps is not None and step >= steps:
                    done = True
                    break
            if done:
                break
        module.eval()
        self.module_ = module
        self.history_ = history
        return self

    def _encode_tensor(self, grids: np.ndarray):
        check_is_fitted(self, "module_")
        with torch.no_grad():
            mean, logstd = self.module_.encode(torch.from_numpy(grids))
        return mean.numpy().astype(np.float64), np.exp(logstd.numpy().astype(np.float64))

    def encode(self, x) -> DiagonalGaussian:
        """Posterior q(z|x) for one spectrogram."""
        grid = validation.as_grid(x, self.input_shape)
        mean, std = self._encode_tensor(grid[None])
        return DiagonalGaussian(mean[0], std[0])

    def encode_batch(self, X):
        """Posterior (means, stddevs) arrays, each (n, latent_dim)."""
        grids = validation.as_grid_batch(X, self.input_shape)
        return self._encode_tensor(grids)

    def transform(self, X) -> np.ndarray:
        """Posterior means, (n, latent_dim); the tau=0 embedding."""
        return self.encode_batch(X)[0]

    def decode(self, z) -> np.ndarray:
        """Decode one latent code to a [0, 1] grid of the configured shape."""
        check_is_fitted(self, "module_")
        z = validation.as_latent(z, self.latent_dim)
        with torch.no_grad():
            grid = self.module_.decode(torch.from_numpy(z[None]).float())
        return grid[0].numpy()

    def loss(self, x, noise: np.ndarray | None = None, rng=None) -> dict:
        """Reconstruction / kl / total for one grid, reported in float64.

        noise fixes the reparameterization draw; otherwise rng (or a fresh
        default generator) supplies it.
        """
        grid = validation.as_grid(x, self.input_shape)
        posterior = self.encode(grid)
        if noise is None:
            rng = rng or np.random.default_rng()
            noise = rng.standard_normal(self.latent_dim)
        noise = validation.as_latent(noise, self.latent_dim)
        z = posterior.mean + self.temperature * noise * posterior.stddev
        recon = self.decode(z).astype(np.float64)
        rec = float(np.mean((recon - grid.astype(np.float64)) ** 2))
        kl = kl_to_standard_normal(posterior)
        return {"reconstruction": rec, "kl": kl, "total": rec + self.kl_weight * kl}

    def save(self, prefix) -> None:
        """Write <prefix>.pt (weights blob) and <prefix>.json (config manifest)."""
        check_is_fitted(self, "module_")
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.module_.state_dict(), prefix.with_suffix(".pt"))
        manifest = {"estimator": "SpecVae", "params": self.get_params()}
        manifest["params"]["conv_channels"] = list(self.conv_channels)
        manifest["params"]["input_shape"] = list(self.input_shape)
        prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, prefix) -> "SpecVae":
        prefix = Path(prefix)
        manifest = json.loads(prefix.with_suffix(".json").read_text())
        params = manifest["params"]
        params["conv_channels"] = tuple(params["conv_channels"])
        params["input_shape"] = tuple(params["input_shape"])
        est = cls(**params)
        est.module_ = est._build()
        est.module_.load_state_dict(
            torch.load(prefix.with_suffix(".pt"), weights_only=True)
        )
        est.module_.eval()
        est.history_ = []
        return est
