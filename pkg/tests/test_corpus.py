import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamlines.audio import SpectrogramParams, encode_wav
from jamlines.corpus import (
    BOS,
    EOS,
    PAD,
    UNK,
    LyricLine,
    ManifestError,
    Vocabulary,
    build_vocab,
    load_manifest,
    make_synthetic_corpus,
    split_by_clip,
    tokenize,
)

TINY = SpectrogramParams(
    target_rate=22050, fft_size=512, hop=512, mel_bands=16, frame_pad_to=88
)


class TestVocabulary:
    def test_reserved_ids_fixed(self):
        v = build_vocab(["the rain", "the fire"])
        assert v.id_to_token[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
        assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)

    def test_min_count_one_keeps_all_words(self):
        v = build_vocab(["the rain", "the fire"], min_count=1)
        assert len(v) == 7
        assert all(w in v for w in ("the", "rain", "fire"))

    def test_min_count_two_maps_rare_words_to_unk(self):
        v = build_vocab(["the rain", "the fire"], min_count=2)
        assert len(v) == 5
        assert "the" in v
        assert v.encode("the rain") == [v.token_to_id["the"], UNK]

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_vocab([])
        with pytest.raises(ValueError):
            build_vocab(["", "   "])

    def test_lowercases_and_strips_punctuation(self):
        assert tokenize("Rain, FIRE!") == ["rain", "fire"]

    @given(
        st.lists(
            st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=8),
            min_size=1,
            max_size=10,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_round_trip_for_in_vocab_lines(self, words):
        text = " ".join(words)
        v = build_vocab([text])
        assert v.decode(v.encode(text)) == text

    def test_round_trip_reproduces_lowercased_text(self):
        v = build_vocab(["The Rain Falls"])
        assert v.decode(v.encode("The Rain Falls")) == "the rain falls"


class TestLyricLine:
    def test_truncates_to_max_len(self):
        v = build_vocab(["a b c"])
        line = LyricLine.from_text(" ".join("a" for _ in range(30)), v)
        assert len(line.tokens) == 20

    def test_empty_rejected(self):
        v = build_vocab(["a"])
        with pytest.raises(ValueError):
            LyricLine.from_text("!!!", v)

    def test_reserved_ids_rejected_inside(self):
        with pytest.raises(ValueError):
            LyricLine((4, EOS), "x")


def write_corpus_dir(tmp_path, records):
    from tests.test_audio import tone_clip

    wav_dir = tmp_path / "wav"
    wav_dir.mkdir()
    rows = []
    for name, freq, text in records:
        (wav_dir / f"{name}.wav").write_bytes(
            encode_wav(tone_clip(freq=freq, seconds=1.0))
        )
        rows.append(f"wav/{name}.wav\t{text}")
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return manifest


class TestLoadManifest:
    def test_count_preserved(self, tmp_path):
        manifest = write_corpus_dir(
            tmp_path,
            [("a", 220, "cold river stone"), ("b", 440, "neon fire"), ("c", 880, "slow tide")],
        )
        corpus = load_manifest(manifest, params=TINY)
        assert len(corpus) == 3
        assert corpus.skipped_empty == 0

    def test_missing_wav_names_the_path(self, tmp_path):
        manifest = write_corpus_dir(tmp_path, [("a", 220, "cold river")])
        manifest.write_text(
            manifest.read_text() + "wav/ghost.wav\tmissing audio\n", encoding="utf-8"
        )
        with pytest.raises(ManifestError, match="ghost.wav"):
            load_manifest(manifest, params=TINY)

    def test_empty_line_skipped_with_count(self, tmp_path):
        manifest = write_corpus_dir(tmp_path, [("a", 220, "cold river")])
        manifest.write_text(
            manifest.read_text() + "wav/a.wav\t  \n", encoding="utf-8"
        )
        corpus = load_manifest(manifest, params=TINY)
        assert len(corpus) == 1
        assert corpus.skipped_empty == 1

    def test_duplicate_clip_many_lines_share_one_grid(self, tmp_path):
        manifest = write_corpus_dir(tmp_path, [("a", 220, "cold river")])
        manifest.write_text(
            manifest.read_text() + "wav/a.wav\tgrey morning\n", encoding="utf-8"
        )
        corpus = load_manifest(manifest, params=TINY)
        assert len(corpus) == 2
        assert corpus.examples[0].spectrogram is corpus.examples[1].spectrogram

    def test_lines_survive_round_trip_up_to_case_and_unk(self, tmp_path):
        manifest = write_corpus_dir(
            tmp_path, [("a", 220, "Cold River STONE"), ("b", 440, "neon fire glows")]
        )
        corpus = load_manifest(manifest, params=TINY)
        for ex in corpus.examples:
            assert ex.line.text(corpus.vocab) == " ".join(tokenize(ex.line.source_text))


class TestSyntheticCorpus:
    def test_counts_and_disjoint_pools(self):
        corpus = make_synthetic_corpus(
            n_clusters=2, pairs_per_cluster=8, seed=0, params=TINY, window_seconds=1.0
        )
        assert len(corpus) == 16
        assert set(corpus.pools[0]).isdisjoint(corpus.pools[1])

    def test_three_clusters_pairwise_disjoint(self):
        corpus = make_synthetic_corpus(
            n_clusters=3, pairs_per_cluster=2, seed=1, params=TINY, window_seconds=1.0
        )
        for a in range(3):
            for b in range(a + 1, 3):
                assert set(corpus.pools[a]).isdisjoint(corpus.pools[b])

    def test_rejects_single_cluster(self):
        with pytest.raises(ValueError):
            make_synthetic_corpus(n_clusters=1, params=TINY)

    def test_deterministic_for_fixed_seed(self):
        a = make_synthetic_corpus(2, 4, seed=9, params=TINY, window_seconds=1.0)
        b = make_synthetic_corpus(2, 4, seed=9, params=TINY, window_seconds=1.0)
        assert [ex.line.source_text for ex in a] == [ex.line.source_text for ex in b]
        assert [ex.clip_id for ex in a] == [ex.clip_id for ex in b]
        for x, y in zip(a.examples, b.examples):
            np.testing.assert_array_equal(x.spectrogram.grid, y.spectrogram.grid)

    def test_lines_use_only_their_cluster_pool(self):
        corpus = make_synthetic_corpus(2, 6, seed=3, params=TINY, window_seconds=1.0)
        for ex in corpus:
            pool = corpus.pool_of_clip(ex.clip_id)
            assert set(tokenize(ex.line.source_text)) <= pool

    def test_nearest_centroid_classifier_separates_clusters(self):
        # oracle: audio clusters must be linearly separable in grid space
        corpus = make_synthetic_corpus(2, 12, seed=4, params=TINY, window_seconds=1.0)
        flat = np.stack([ex.spectrogram.grid.ravel() for ex in corpus])
        labels = np.array([corpus.cluster_of[ex.clip_id] for ex in corpus])
        centroids = np.stack([flat[labels == k].mean(axis=0) for k in (0, 1)])
        dists = ((flat[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        assert np.array_equal(dists.argmin(axis=1), labels)


class TestSplit:
    def test_no_clip_leakage(self):
        corpus = make_synthetic_corpus(2, 10, seed=5, params=TINY, window_seconds=1.0)
        train, val = split_by_clip(corpus.examples, val_fraction=0.1, seed=0)
        train_ids = {ex.clip_id for ex in train}
        val_ids = {ex.clip_id for ex in val}
        assert train_ids.isdisjoint(val_ids)
        assert len(train) + len(val) == len(corpus)
        assert len(val_ids) == 2  # 10% of 20 clips
