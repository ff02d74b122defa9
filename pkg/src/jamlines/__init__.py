"""jamlines: real-time lyric-line generation conditioned on live audio."""

from .aligner import LatentAligner
from .audio import (
    AudioClip,
    MelSpectrogram,
    SpectrogramParams,
    StreamSegmenter,
    decode_wav,
    encode_wav,
    segment_stream,
    to_mel_spectrogram,
)
from .corpus import (
    Corpus,
    LyricLine,
    PairedExample,
    SyntheticCorpus,
    Vocabulary,
    build_vocab,
    load_manifest,
    make_synthetic_corpus,
    split_by_clip,
)
from .latent import DiagonalGaussian, SamplingConfig, kl_between, kl_to_standard_normal, sample
from .ranking import LikelihoodRanker, QualityClassifier, RankedLine, score_lines, top_k
from .service import (
    GenerationResult,
    LyricService,
    ModelBundle,
    ServerConfig,
    Session,
    build_app,
    derive_clip_seed,
    generate_for_clip,
)
from .specvae import SpecVae
from .textcvae import TextCvae

__version__ = "0.1.0"
