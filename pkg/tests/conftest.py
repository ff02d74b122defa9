"""Shared desk-scale fixtures: one synthetic corpus and one trained model
stack per session, reused by module, integration, and acceptance tests."""

import numpy as np
import pytest
import torch

from jamlines.aligner import LatentAligner
from jamlines.audio import SpectrogramParams
from jamlines.corpus import make_synthetic_corpus, split_by_clip
from jamlines.service import ModelBundle
from jamlines.specvae import SpecVae
from jamlines.textcvae import TextCvae

torch.set_num_threads(2)

# 10-second windows at a reduced spectral resolution: 32 x 224 grids keep
# training fast while leaving the full-size defaults covered by shape tests
DESK_PARAMS = SpectrogramParams(
    target_rate=22050, fft_size=1024, hop=1024, mel_bands=32, frame_pad_to=224
)
LATENT_DIM = 3
CONV_CHANNELS = (8, 16, 32, 64)

TEXT_KW = dict(
    hidden_dim=32,
    latent_dim=LATENT_DIM,
    embedding_dim=32,
    kl_anneal_fraction=0.2,
    word_dropout_p=0.4,
    epochs=400,
    batch_size=32,
    learning_rate=3e-3,
    seed=0,
)


@pytest.fixture(scope="session")
def desk_params():
    return DESK_PARAMS


@pytest.fixture(scope="session")
def synth_corpus():
    return make_synthetic_corpus(
        n_clusters=2, pairs_per_cluster=100, seed=7, params=DESK_PARAMS
    )


@pytest.fixture(scope="session")
def synth_split(synth_corpus):
    return split_by_clip(synth_corpus.examples, val_fraction=0.1, seed=0)


@pytest.fixture(scope="session")
def spec_model(synth_split):
    train, _ = synth_split
    model = SpecVae(
        latent_dim=LATENT_DIM,
        conv_channels=CONV_CHANNELS,
        learning_rate=1e-3,
        batch_size=32,
        epochs=30,
        kl_weight=2e-3,
        temperature=1.0,
        input_shape=DESK_PARAMS.shape,
        seed=0,
    )
    return model.fit([ex.spectrogram for ex in train])


@pytest.fixture(scope="session")
def text_baseline(synth_split, synth_corpus, spec_model):
    train, _ = synth_split
    model = TextCvae(prior_mode="standard", kl_weight_max=0.02, **TEXT_KW)
    return model.fit(train, spec_model, synth_corpus.vocab)


@pytest.fixture(scope="session")
def text_topology(synth_split, synth_corpus, spec_model):
    train, _ = synth_split
    model = TextCvae(prior_mode="spec_posterior", kl_weight_max=1.0, **TEXT_KW)
    return model.fit(train, spec_model, synth_corpus.vocab)


@pytest.fixture(scope="session")
def aligner(synth_split, spec_model, text_baseline):
    train, _ = synth_split
    model = LatentAligner(
        latent_dim=LATENT_DIM,
        hidden_dims=(64, 64),
        learning_rate=3e-3,
        batch_size=45,
        epochs=6,
        lambda_mse=1.0,
        temperature=1.0,
        seed=0,
    )
    return model.fit(train, spec_model, text_baseline)


@pytest.fixture(scope="session")
def bundle(spec_model, text_baseline, text_topology, aligner):
    return ModelBundle(
        spec_vae=spec_model,
        text_models={"baseline": text_baseline, "topology": text_topology},
        aligner=aligner,
        params=DESK_PARAMS,
    )


@pytest.fixture(scope="session")
def models_dir(bundle, tmp_path_factory):
    path = tmp_path_factory.mktemp("models")
    bundle.save(path)
    return path


@pytest.fixture(scope="session")
def untrained_aligner():
    model = LatentAligner(latent_dim=LATENT_DIM, hidden_dims=(64, 64), seed=0)
    torch.manual_seed(0)
    model.module_ = model._build()
    model.history_ = []
    return model


@pytest.fixture(scope="session")
def cluster_labels(synth_corpus):
    return np.array(
        [synth_corpus.cluster_of[ex.clip_id] for ex in synth_corpus.examples]
    )


# --- tiny stack for fast module-level tests --------------------------------

TINY_PARAMS = SpectrogramParams(
    target_rate=8000, fft_size=64, hop=64, mel_bands=8, db_floor=-80.0,
    db_ceiling=0.0, frame_pad_to=8,
)

TINY_WORDS = [
    "rain", "stone", "river", "cold", "ember", "neon", "glass", "wire",
    "hollow", "tide", "static", "velvet",
]


def make_tiny_pairs(n, seed=0, max_words=4):
    """Paired examples with random 8x8 grids and short lines; no audio."""
    from jamlines.audio import MelSpectrogram
    from jamlines.corpus import LyricLine, PairedExample, Vocabulary

    rng = np.random.default_rng(seed)
    vocab = Vocabulary(TINY_WORDS)
    pairs = []
    for i in range(n):
        grid = rng.uniform(0, 1, TINY_PARAMS.shape).astype(np.float32)
        words = rng.choice(TINY_WORDS, size=rng.integers(2, max_words + 1))
        text = " ".join(words)
        pairs.append(
            PairedExample(
                clip_id=f"tiny-{i}",
                spectrogram=MelSpectrogram(grid=grid, params=TINY_PARAMS),
                line=LyricLine.from_text(text, vocab),
            )
        )
    return pairs, vocab


@pytest.fixture(scope="session")
def tiny_stack():
    """(pairs, vocab, spec, text): small trained models for cheap tests."""
    pairs, vocab = make_tiny_pairs(10, seed=0)
    spec = SpecVae(
        latent_dim=4, conv_channels=(4, 8), learning_rate=1e-3, batch_size=10,
        epochs=5, kl_weight=1e-3, input_shape=TINY_PARAMS.shape, seed=0,
    )
    spec.fit([ex.spectrogram for ex in pairs])
    text = TextCvae(
        hidden_dim=32, latent_dim=4, embedding_dim=16, prior_mode="standard",
        kl_weight_max=0.01, kl_anneal_fraction=0.2, word_dropout_p=0.2,
        max_len=20, epochs=500, batch_size=10, learning_rate=3e-3, seed=0,
    )
    text.fit(pairs, spec, vocab)
    return pairs, vocab, spec, text
