"""Paired (audio, lyric line) corpora: ingest, vocabulary, synthetic data."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, SpectrogramParams, MelSpectrogram, decode_wav, to_mel_spectrogram

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
MAX_LINE_TOKENS = 20

_WORD = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens, split at whitespace and punctuation."""
    return _WORD.findall(text.lower())


class Vocabulary:
    """Token <-> id bijection with fixed reserved ids 0-3."""

    def __init__(self, tokens: list[str]):
        for t in tokens:
            if t in RESERVED:
                raise ValueError(f"{t!r} collides with a reserved token")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens")
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokenize(text)]

    def decode(self, ids) -> str:
        return " ".join(
            self.id_to_token[i] for i in ids if i not in (PAD, BOS, EOS)
        )

    def to_dict(self) -> dict:
        return {"tokens": self.id_to_token[len(RESERVED) :]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(list(d["tokens"]))


def build_vocab(lines, min_count: int = 1) -> Vocabulary:
    """Word vocabulary over a corpus; tokens below min_count map to UNK."""
    counts = Counter()
    n_lines = 0
    for line in lines:
        toks = tokenize(line)
        counts.update(toks)
        n_lines += bool(toks)
    if n_lines == 0:
        raise ValueError("empty corpus")
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(kept)


@dataclass(frozen=True)
class LyricLine:
    """One lyric line as vocabulary ids (no specials) plus its source text."""

    tokens: tuple[int, ...]
    source_text: str

    def __post_init__(self):
        if not 1 <= len(self.tokens) <= MAX_LINE_TOKENS:
            raise ValueError(
                f"line must have 1..{MAX_LINE_TOKENS} tokens, got {len(self.tokens)}"
            )
        if any(t in (PAD, BOS, EOS) for t in self.tokens):
            raise ValueError("PAD/BOS/EOS may not appear inside a line")
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    @classmethod
    def from_text(cls, text: str, vocab: Vocabulary) -> "LyricLine":
        ids = vocab.encode(text)[:MAX_LINE_TOKENS]
        if not ids:
            raise ValueError(f"no tokens in line {text!r}")
        return cls(tuple(ids), text)

    def text(self, vocab: Vocabulary) -> str:
        return vocab.decode(self.tokens)


@dataclass(frozen=True, eq=False)
class PairedExample:
    """(spectrogram, lyric line) supervision pair."""

    clip_id: str
    spectrogram: MelSpectrogram
    line: LyricLine


@dataclass
class Corpus:
    examples: list[PairedExample]
    vocab: Vocabulary
    skipped_empty: int = 0

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


class ManifestError(ValueError):
    """A manifest record could not be loaded; message names the record."""


def read_manifest(path) -> list[tuple[str, str]]:
    """Raw (wav_path, text) records from a tab-separated manifest."""
    records = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        if "\t" not in raw:
            raise ManifestError(f"{path}:{lineno}: expected 'wav_path<TAB>text'")
        wav_path, text = raw.split("\t", 1)
        records.append((wav_path, text))
    return records


def load_manifest(
    path,
    params: SpectrogramParams | None = None,
    min_count: int = 1,
    vocab: Vocabulary | None = None,
) -> Corpus:
    """Load a TSV manifest of wav paths and lyric lines into paired examples.

    Spectrograms are computed once per distinct wav; the same clip may pair
    with many lines.  Records with an empty line are skipped and counted.
    """
    params = params or SpectrogramParams()
    base = Path(path).parent
    records = read_manifest(path)
    kept, skipped = [], 0
    for wav_path, text in records:
        if not tokenize(text):
            skipped += 1
            continue
        kept.append((wav_path, text))
    if not kept:
        raise ManifestError(f"{path}: no usable records")
    if vocab is None:
        vocab = build_vocab(text for _, text in kept)
    grids: dict[str, MelSpectrogram] = {}
    examples = []
    for wav_path, text in kept:
        full = Path(wav_path)
        if not full.is_absolute():
            full = base / full
        if wav_path not in grids:
            if not full.exists():
                raise ManifestError(f"missing WAV file: {full}")
            clip = decode_wav(full.read_bytes())
            grids[wav_path] = to_mel_spectrogram(clip, params)
        examples.append(
            PairedExample(
                clip_id=wav_path,
                spectrogram=grids[wav_path],
                line=LyricLine.from_text(text, vocab),
            )
        )
    return Corpus(examples=examples, vocab=vocab, skipped_empty=skipped)


def split_by_clip(examples, val_fraction: float = 0.1, seed: int = 0):
    """Train/validation split on clip_id so no clip leaks across the split."""
    ids = sorted({ex.clip_id for ex in examples})
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    n_val = max(1, int(round(len(ids) * val_fraction)))
    val_ids = set(ids[:n_val])
    train = [ex for ex in examples if ex.clip_id not in val_ids]
    val = [ex for ex in examples if ex.clip_id in val_ids]
    return train, val


# --- synthetic desk-scale corpus -------------------------------------------

_SYLLABLES = (
    "ba be bo da de do fa fe fo ka ke ko la le lo ma me mo na ne no "
    "ra re ro sa se so ta te to va ve vo za ze zo"
).split()

_POOL_WORDS = 16


def _cluster_pools(n_clusters: int, rng: np.random.Generator) -> list[list[str]]:
    """Disjoint pronounceable word pools, one per cluster."""
    words = []
    seen = set()
    length_cycle = (2, 3)
    i = 0
    while len(words) < n_clusters * _POOL_WORDS:
        n_syll = length_cycle[i % 2]
        w = "".join(rng.choice(_SYLLABLES) for _ in range(n_syll))
        i += 1
        if w not in seen:
            seen.add(w)
            words.append(w)
    return [
        words[k * _POOL_WORDS : (k + 1) * _POOL_WORDS] for k in range(n_clusters)
    ]


def _cluster_bands(n_clusters: int, nyquist: float) -> list[tuple[float, float]]:
    """Disjoint log-spaced frequency bands, one per cluster."""
    lo, hi = 120.0, 0.8 * nyquist
    edges = np.geomspace(lo, hi, n_clusters + 1)
    bands = []
    for k in range(n_clusters):
        width = edges[k + 1] / edges[k]
        bands.append((edges[k], edges[k] * width**0.6))  # gap between bands
    return bands


def _tone_clip(
    band: tuple[float, float], rng: np.random.Generator, sample_rate: int, seconds: float
) -> AudioClip:
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for _ in range(rng.integers(2, 5)):
        freq = rng.uniform(*band)
        x += rng.uniform(0.4, 1.0) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    x *= 0.25 / max(np.abs(x).max(), 1e-9)
    samples = np.round(x * 32767.0).astype(np.int16)
    return AudioClip(samples, sample_rate=sample_rate, channels=1)


@dataclass
class SyntheticCorpus(Corpus):
    """Desk-scale paired corpus with known cluster structure.

    Cluster k's audio lives in a distinct frequency band and its lines draw
    from a vocabulary pool disjoint from every other cluster's, so any
    generated token can be attributed to exactly one cluster.
    """

    pools: list[list[str]] = field(default_factory=list)
    cluster_of: dict[str, int] = field(default_factory=dict)
    clips: dict[str, AudioClip] = field(default_factory=dict)

    def pool_of_clip(self, clip_id: str) -> set[str]:
        return set(self.pools[self.cluster_of[clip_id]])


def make_synthetic_corpus(
    n_clusters: int = 2,
    pairs_per_cluster: int = 100,
    seed: int = 0,
    params: SpectrogramParams | None = None,
    sample_rate: int = 22050,
    window_seconds: float = 10.0,
    line_length: tuple[int, int] = (12, 18),
    keep_audio: bool = False,
) -> SyntheticCorpus:
    """Deterministic synthetic corpus with separable audio/text clusters.

    line_length gives the inclusive range of words per line; the default
    long lines keep per-line content entropy well above what a small latent
    can memorize, so models must lean on the cluster structure.
    """
    if n_clusters < 2:
        raise ValueError("need at least 2 clusters")
    lo, hi = line_length
    if not 1 <= lo <= hi <= MAX_LINE_TOKENS:
        raise ValueError(f"line_length must satisfy 1 <= lo <= hi <= {MAX_LINE_TOKENS}")
    params = params or SpectrogramParams()
    rng = np.random.default_rng(seed)
    pools = _cluster_pools(n_clusters, rng)
    bands = _cluster_bands(n_clusters, sample_rate / 2.0)
    vocab = Vocabulary(sorted(w for pool in pools for w in pool))
    examples = []
    cluster_of = {}
    clips = {}
    for k in range(n_clusters):
        for i in range(pairs_per_cluster):
            clip_id = f"syn-c{k}-{i:04d}"
            clip = _tone_clip(bands[k], rng, sample_rate, window_seconds)
            grid = to_mel_spectrogram(clip, params)
            n_words = rng.integers(lo, hi + 1)
            text = " ".join(rng.choice(pools[k]) for _ in range(n_words))
            examples.append(
                PairedExample(
                    clip_id=clip_id,
                    spectrogram=grid,
                    line=LyricLine.from_text(text, vocab),
                )
            )
            cluster_of[clip_id] = k
            if keep_audio:
                clips[clip_id] = clip
    return SyntheticCorpus(
        examples=examples,
        vocab=vocab,
        pools=pools,
        cluster_of=cluster_of,
        clips=clips,
    )
