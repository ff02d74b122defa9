"""Conditional recurrent VAE over lyric lines (training stage two).

Supports both prior regimes: the usual standard-normal prior, and the
spec-posterior prior that transfers the audio latent topology onto the
text latent space.  Conditioning on the audio code is concatenated to the
word embedding at every encoder and decoder step.
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
from torch.nn.utils.rnn import pack_padded_sequence

from . import validation
from .corpus import BOS, EOS, PAD, UNK, LyricLine, Vocabulary
from .latent import DiagonalGaussian, kl_between, kl_to_standard_normal
from .specvae import TrainingDiverged

PRIOR_MODES = ("standard", "spec_posterior")


class _SeqCvae(nn.Module):
    def __init__(self, vocab_size, embedding_dim, hidden_dim, latent_dim):
        super().__init__()
        self.emb = nn.Embedding(vocab_size, embedding_dim, padding_idx=PAD)
        self.encoder = nn.LSTM(
            embedding_dim + latent_dim, hidden_dim, batch_first=True, bidirectional=True
        )
        self.fc_mean = nn.Linear(2 * hidden_dim, latent_dim)
        self.fc_logstd = nn.Linear(2 * hidden_dim, latent_dim)
        self.decoder = nn.LSTM(
            embedding_dim + 2 * latent_dim, hidden_dim, batch_first=True
        )
        self.out = nn.Linear(hidden_dim, vocab_size)

    def encode(self, tokens, lengths, z_s):
        emb = self.emb(tokens)
        cond = z_s.unsqueeze(1).expand(-1, tokens.shape[1], -1)
        packed = pack_padded_sequence(
            torch.cat([emb, cond], dim=2),
            lengths,
            batch_first=True,
            enforce_sorted=False,
        )
        _, (h, _) = self.encoder(packed)
        h = torch.cat([h[0], h[1]], dim=1)
        return self.fc_mean(h), self.fc_logstd(h)

    def decode_logits(self, inputs, z_t, z_s):
        emb = self.emb(inputs)
        cond = torch.cat([z_t, z_s], dim=1).unsqueeze(1).expand(-1, inputs.shape[1], -1)
        out, _ = self.decoder(torch.cat([emb, cond], dim=2))
        return self.out(out)

    def decode_step(self, token, z_t, z_s, state):
        emb = self.emb(token).unsqueeze(1)
        cond = torch.cat([z_t, z_s], dim=1).unsqueeze(1)
        out, state = self.decoder(torch.cat([emb, cond], dim=2), state)
        return self.out(out.squeeze(1)), state


def _pad_batch(lines: list[LyricLine]):
    """(encoder tokens, decoder inputs, targets, lengths) as padded tensors."""
    lengths = torch.tensor([len(l.tokens) for l in lines], dtype=torch.int64)
    width = int(lengths.max())
    tokens = torch.full((len(lines), width), PAD, dtype=torch.int64)
    inputs = torch.full((len(lines), width + 1), PAD, dtype=torch.int64)
    targets = torch.full((len(lines), width + 1), PAD, dtype=torch.int64)
    inputs[:, 0] = BOS
    for i, line in enumerate(lines):
        ids = torch.tensor(line.tokens, dtype=torch.int64)
        n = ids.shape[0]
        tokens[i, :n] = ids
        inputs[i, 1 : n + 1] = ids
        targets[i, :n] = ids
        targets[i, n] = EOS
    return tokens, inputs, targets, lengths


def _sequence_ce(logits, targets):
    """Per-example token cross-entropy summed over the sequence."""
    flat = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        targets.reshape(-1),
        reduction="none",
        ignore_index=PAD,
    )
    return flat.view(targets.shape).sum(dim=1)


def _gaussian_kl_terms(mean, logstd, prior_mean, prior_logstd):
    """Per-example KL(q || p) between diagonal Gaussians, in torch."""
    ratio = 2.0 * (logstd - prior_logstd)
    return 0.5 * (
        torch.exp(ratio)
        + ((mean - prior_mean) / torch.exp(prior_logstd)) ** 2
        - 1.0
        - ratio
    ).sum(dim=1)


def cvae_loss_terms(
    module,
    tokens,
    inputs,
    targets,
    lengths,
    z_s,
    prior_mean,
    prior_logstd,
    lam,
    temperature,
    noise_t=None,
):
    """Reconstruction / KL / total as torch scalars; shared by fit and tests.

    z_s conditions both encoder and decoder; the prior tensors select the
    regime (zeros for standard normal, spec posterior otherwise).
    """
    mean, logstd = module.encode(tokens, lengths, z_s)
    if noise_t is None:
        noise_t = torch.randn_like(mean)
    z_t = mean + temperature * noise_t * torch.exp(logstd)
    logits = module.decode_logits(inputs, z_t, z_s)
    ce = _sequence_ce(logits, targets).mean()
    kl = _gaussian_kl_terms(mean, logstd, prior_mean, prior_logstd).mean()
    return {"reconstruction": ce, "kl": kl, "total": ce + lam * kl}


class TextCvae(BaseEstimator):
    """Lyric-line CVAE: bi-LSTM encoder, LSTM decoder, Gaussian latent.

    prior_mode picks what the KL term regularizes toward: "standard" pulls
    every posterior to N(0, I); "spec_posterior" pulls each line's posterior
    toward the posterior of its paired spectrogram, so nearby clips induce
    nearby line latents.
    """

    def __init__(
        self,
        hidden_dim=300,
        latent_dim=128,
        embedding_dim=300,
        prior_mode="standard",
        kl_weight_max=1.0,
        kl_anneal_fraction=0.2,
        word_dropout_p=0.3,
        max_len=20,
        epochs=500,
        batch_size=32,
        learning_rate=1e-3,
        temperature=1.0,
        seed=0,
    ):
        self.hidden_dim = hidden_dim
        self.latent_dim = latent_dim
        self.embedding_dim = embedding_dim
        self.prior_mode = prior_mode
        self.kl_weight_max = kl_weight_max
        self.kl_anneal_fraction = kl_anneal_fraction
        self.word_dropout_p = word_dropout_p
        self.max_len = max_len
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.temperature = temperature
        self.seed = seed

    def _validate(self):
        if self.prior_mode not in PRIOR_MODES:
            raise ValueError(f"prior_mode must be one of {PRIOR_MODES}")
        if not 0.0 <= self.word_dropout_p < 1.0:
            raise ValueError("word_dropout_p must lie in [0, 1)")
        if self.latent_dim <= 0 or self.hidden_dim <= 0:
            raise ValueError("dimensions must be positive")

    def kl_weight_at(self, step: int, total_steps: int) -> float:
        """Linear anneal: 0 at step 0, kl_weight_max after the horizon."""
        horizon = max(1, int(round(self.kl_anneal_fraction * total_steps)))
        return self.kl_weight_max * min(1.0, step / horizon)

    def fit(self, examples, spec_model, vocab: Vocabulary, steps: int | None = None):
        """Train on paired examples, conditioning on spec_model's posteriors.

        The audio code z_s is freshly sampled from the clip's posterior at
        every optimizer step; decoder-input tokens are replaced by UNK with
        probability word_dropout_p.
        """
        self._validate()
        if spec_model.latent_dim != self.latent_dim:
            raise ValueError(
                f"latent_dim {self.latent_dim} must equal the spectrogram "
                f"model's {spec_model.latent_dim}"
            )
        examples = list(examples)
        if not examples:
            raise ValueError("empty dataset")
        spec_means, spec_stds = spec_model.encode_batch(
            [ex.spectrogram for ex in examples]
        )
        torch.manual_seed(self.seed)
        module = _SeqCvae(len(vocab), self.embedding_dim, self.hidden_dim, self.latent_dim)
        opt = torch.optim.Adam(module.parameters(), lr=self.learning_rate)
        order = np.random.default_rng(self.seed)
        tokens, inputs, targets, lengths = _pad_batch([ex.line for ex in examples])
        prior_mean = torch.from_numpy(spec_means).float()
        prior_logstd = torch.from_numpy(np.log(spec_stds)).float()
        n = len(examples)
        steps_per_epoch = (n + self.batch_size - 1) // self.batch_size
        total_steps = steps if steps is not None else self.epochs * steps_per_epoch
        history = []
        step = 0
        module.train()
        done = False
        for _ in range(self.epochs if steps is None else total_steps):
            perm = order.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = torch.from_numpy(perm[start : start + self.batch_size])
                pm, pls = prior_mean[idx], prior_logstd[idx]
                z_s = pm + self.temperature * torch.randn_like(pm) * torch.exp(pls)
                inp = inputs[idx]
                if self.word_dropout_p > 0:
                    drop = (torch.rand(inp.shape) < self.word_dropout_p) & (
                        inp != PAD
                    ) & (inp != BOS)
                    inp = torch.where(drop, torch.full_like(inp, UNK), inp)
                if self.prior_mode == "spec_posterior":
                    prior = (pm, pls)
                else:
                    prior = (torch.zeros_like(pm), torch.zeros_like(pls))
                lam = self.kl_weight_at(step, total_steps)
                terms = cvae_loss_terms(
                    module, tokens[idx], inp, targets[idx], lengths[idx],
                    z_s, prior[0], prior[1], lam, self.temperature,
                )
                total = terms["total"]
                if not torch.isfinite(total):
                    raise TrainingDiverged(
                        f"non-finite loss at step {step}: "
                        f"ce={terms['reconstruction'].item()} kl={terms['kl'].item()}"
                    )
                opt.zero_grad()
                total.backward()
                opt.step()
                history.append(
                    {
                        "step": step,
                        "reconstruction": terms["reconstruction"].item(),
                        "kl": terms["kl"].item(),
                        "kl_weight": lam,
                        "total": total.item(),
                    }
                )
                step += 1
                if step >= total_steps:
                    done = True
                    break
            if done:
                break
        module.eval()
        self.module_ = module
        self.vocab_ = vocab
        self.history_ = history
        return self

    # --- inference ---------------------------------------------------------

    def encode(self, line: LyricLine, z_s) -> DiagonalGaussian:
        """Posterior q(z_t | line, z_s)."""
        check_is_fitted(self, "module_")
        if not line.tokens:
            raise ValueError("empty line")
        z_s = validation.as_latent(z_s, self.latent_dim)
        tokens, _, _, lengths = _pad_batch([line])
        with torch.no_grad():
            mean, logstd = self.module_.encode(
                tokens, lengths, torch.from_numpy(z_s[None]).float()
            )
        return DiagonalGaussian(
            mean[0].numpy().astype(np.float64),
            np.exp(logstd[0].numpy().astype(np.float64)),
        )

    def decode(
        self,
        z_t,
        z_s,
        strategy: str = "greedy",
        temperature: float = 1.0,
        rng: np.random.Generator | None = None,
    ) -> LyricLine:
        """Generate one line from [z_t; z_s] conditioning."""
        return self.decode_batch(
            np.asarray(z_t)[None], np.asarray(z_s)[None], strategy, temperature, rng
        )[0]

    def decode_batch(
        self,
        Z_t,
        Z_s,
        strategy: str = "greedy",
        temperature: float = 1.0,
        rng: np.random.Generator | None = None,
    ) -> list[LyricLine]:
        """Generate one line per latent pair; greedy or categorical sampling."""
        check_is_fitted(self, "module_")
        if strategy not in ("greedy", "sample"):
            raise ValueError(f"unknown strategy {strategy!r}")
        if strategy == "sample" and rng is None:
            rng = np.random.default_rng()
        Z_t = validation.as_latent_batch(Z_t, self.latent_dim)
        Z_s = validation.as_latent_batch(Z_s, self.latent_dim)
        if Z_t.shape[0] != Z_s.shape[0]:
            raise ValueError("z_t and z_s batches must have equal length")
        b = Z_t.shape[0]
        z_t = torch.from_numpy(Z_t).float()
        z_s = torch.from_numpy(Z_s).float()
        token = torch.full((b,), BOS, dtype=torch.int64)
        state = None
        done = np.zeros(b, dtype=bool)
        out_tokens: list[list[int]] = [[] for _ in range(b)]
        fallback = np.zeros(b, dtype=np.int64)
        with torch.no_grad():
            for pos in range(self.max_len):
                logits, state = self.module_.decode_step(token, z_t, z_s, state)
                logits = logits.numpy().astype(np.float64)
                logits[:, PAD] = -np.inf
                logits[:, BOS] = -np.inf
                if pos == 0:
                    no_eos = logits.copy()
                    no_eos[:, EOS] = -np.inf
                    fallback = no_eos.argmax(axis=1)
                if strategy == "greedy":
                    chosen = logits.argmax(axis=1)
                else:
                    scaled = logits / max(temperature, 1e-8)
                    gumbel = -np.log(-np.log(rng.uniform(size=scaled.shape)))
                    chosen = (scaled + gumbel).argmax(axis=1)
                for i in range(b):
                    if done[i]:
                        continue
                    if chosen[i] == EOS:
                        done[i] = True
                    else:
                        out_tokens[i].append(int(chosen[i]))
                if done.all():
                    break
                token = torch.from_numpy(np.where(done, PAD, chosen)).long()
        lines = []
        for i in range(b):
            ids = out_tokens[i] or [int(fallback[i])]
            lines.append(LyricLine(tuple(ids), self.vocab_.decode(ids)))
        return lines

    def loss(
        self,
        example,
        spec_posterior: DiagonalGaussian,
        lam: float,
        prior_mode: str | None = None,
        z_s: np.ndarray | None = None,
        z_t_noise: np.ndarray | None = None,
        rng: np.random.Generator | None = None,
    ) -> dict:
        """Reconstruction / kl / total for one pair, reported in float64.

        z_s defaults to a fresh temperature-scaled draw from spec_posterior;
        the KL prior is N(0, I) or spec_posterior depending on prior_mode.
        Reconstruction is evaluated at the posterior mean unless z_t_noise
        supplies an explicit reparameterization draw.
        """
        check_is_fitted(self, "module_")
        mode = prior_mode or self.prior_mode
        if mode not in PRIOR_MODES:
            raise ValueError(f"prior_mode must be one of {PRIOR_MODES}")
        if spec_posterior.dim != self.latent_dim:
            raise ValueError(
                f"spec posterior dimension {spec_posterior.dim} != {self.latent_dim}"
            )
        if z_s is None:
            rng = rng or np.random.default_rng()
            eps = rng.standard_normal(self.latent_dim)
            z_s = spec_posterior.mean + self.temperature * eps * spec_posterior.stddev
        z_s = validation.as_latent(z_s, self.latent_dim)
        posterior = self.encode(example.line, z_s)
        z_t = posterior.mean
        if z_t_noise is not None:
            noise = validation.as_latent(z_t_noise, self.latent_dim)
            z_t = posterior.mean + self.temperature * noise * posterior.stddev
        _, inputs, targets, _ = _pad_batch([example.line])
        with torch.no_grad():
            logits = self.module_.decode_logits(
                inputs,
                torch.from_numpy(z_t[None]).float(),
                torch.from_numpy(z_s[None]).float(),
            )
            ce = float(_sequence_ce(logits, targets)[0].item())
        if mode == "spec_posterior":
            kl = kl_between(posterior, spec_posterior)
        else:
            kl = kl_to_standard_normal(posterior)
        return {"reconstruction": ce, "kl": kl, "total": ce + lam * kl}

    def line_log_likelihood(self, lines: list[LyricLine], z_t, z_s) -> np.ndarray:
        """Length-normalized teacher-forced log-probability of each line."""
        check_is_fitted(self, "module_")
        if not lines:
            raise ValueError("no lines to score")
        z_t = validation.as_latent(z_t, self.latent_dim)
        z_s = validation.as_latent(z_s, self.latent_dim)
        _, inputs, targets, _ = _pad_batch(lines)
        zt = torch.from_numpy(z_t[None]).float().expand(len(lines), -1)
        zs = torch.from_numpy(z_s[None]).float().expand(len(lines), -1)
        with torch.no_grad():
            logits = self.module_.decode_logits(inputs, zt, zs)
            ce = _sequence_ce(logits, targets).numpy().astype(np.float64)
        lengths = np.array([len(l.tokens) + 1 for l in lines], dtype=np.float64)
        return -ce / lengths

    def teacher_forced_accuracy(self, examples, spec_model) -> float:
        """Token accuracy under teacher forcing at posterior means."""
        check_is_fitted(self, "module_")
        examples = list(examples)
        spec_means, _ = spec_model.encode_batch([ex.spectrogram for ex in examples])
        tokens, inputs, targets, lengths = _pad_batch([ex.line for ex in examples])
        z_s = torch.from_numpy(spec_means).float()
        with torch.no_grad():
            mean, _ = self.module_.encode(tokens, lengths, z_s)
            logits = self.module_.decode_logits(inputs, mean, z_s)
        pred = logits.argmax(dim=2)
        mask = targets != PAD
        return float((pred[mask] == targets[mask]).float().mean().item())

    def save(self, prefix) -> None:
        """Write <prefix>.pt (weights blob) and <prefix>.json (config manifest)."""
        check_is_fitted(self, "module_")
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.module_.state_dict(), prefix.with_suffix(".pt"))
        manifest = {
            "estimator": "TextCvae",
            "params": self.get_params(),
            "vocab": self.vocab_.to_dict(),
        }
        prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, prefix) -> "TextCvae":
        prefix = Path(prefix)
        manifest = json.loads(prefix.with_suffix(".json").read_text())
        est = cls(**manifest["params"])
        est.vocab_ = Vocabulary.from_dict(manifest["vocab"])
        est.module_ = _SeqCvae(
            len(est.vocab_), est.embedding_dim, est.hidden_dim, est.latent_dim
        )
        est.module_.load_state_dict(
            torch.load(prefix.with_suffix(".pt"), weights_only=True)
        )
        est.module_.eval()
        est.history_ = []
        return est
