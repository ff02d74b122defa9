import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamlines.audio import (
    AudioClip,
    DecodeError,
    SessionFormatError,
    SpectrogramParams,
    StreamSegmenter,
    UnsupportedFormatError,
    decode_wav,
    encode_wav,
    mel_filterbank,
    n_stft_frames,
    segment_stream,
    to_mel_spectrogram,
)

DESK = SpectrogramParams(
    target_rate=22050, fft_size=1024, hop=1024, mel_bands=32, frame_pad_to=224
)


def tone_clip(freq=440.0, seconds=2.0, rate=22050, amplitude=0.3, channels=1):
    t = np.arange(int(seconds * rate)) / rate
    x = amplitude * np.sin(2 * np.pi * freq * t)
    samples = np.round(x * 32767).astype(np.int16)
    if channels == 2:
        samples = np.stack([samples, samples], axis=1)
    return AudioClip(samples, sample_rate=rate, channels=channels)


class TestDecodeWav:
    def test_ten_second_mono_at_44100(self):
        clip = tone_clip(seconds=10.0, rate=44100)
        out = decode_wav(encode_wav(clip))
        assert out.n_frames == 441_000
        assert out.sample_rate == 44100
        assert out.channels == 1
        assert np.array_equal(out.samples, clip.samples)

    def test_stereo_round_trip(self):
        clip = tone_clip(seconds=0.5, channels=2)
        out = decode_wav(encode_wav(clip))
        assert out.channels == 2
        assert out.samples.shape == clip.samples.shape

    def test_malformed_header(self):
        with pytest.raises(DecodeError):
            decode_wav(b"OGGS" + b"\x00" * 40)
        with pytest.raises(DecodeError):
            decode_wav(b"RIFF\x00\x00\x00\x00NOPE")

    def test_zero_length_data_chunk(self):
        data = bytearray(encode_wav(tone_clip(seconds=0.1)))
        # truncate payload and patch sizes so only an empty data chunk remains
        data = data[:44]
        data[40:44] = (0).to_bytes(4, "little")
        data[4:8] = (36).to_bytes(4, "little")
        with pytest.raises(DecodeError):
            decode_wav(bytes(data))

    def test_float_encoding_unsupported(self):
        data = bytearray(encode_wav(tone_clip(seconds=0.1)))
        data[20:22] = (3).to_bytes(2, "little")  # IEEE float format tag
        with pytest.raises(UnsupportedFormatError):
            decode_wav(bytes(data))

    def test_compressed_encoding_unsupported(self):
        data = bytearray(encode_wav(tone_clip(seconds=0.1)))
        data[20:22] = (85).to_bytes(2, "little")  # MP3 format tag
        with pytest.raises(UnsupportedFormatError):
            decode_wav(bytes(data))

    def test_non_16bit_unsupported(self):
        data = bytearray(encode_wav(tone_clip(seconds=0.1)))
        data[34:36] = (8).to_bytes(2, "little")
        with pytest.raises(UnsupportedFormatError):
            decode_wav(bytes(data))

    def test_truncated_chunk(self):
        data = encode_wav(tone_clip(seconds=0.1))
        with pytest.raises(DecodeError):
            decode_wav(data[: len(data) // 2])


class TestSegmenter:
    def test_25_seconds_gives_two_clips_and_buffer(self):
        seg = StreamSegmenter(sample_rate=1000, channels=1, window_seconds=10)
        clips = seg.push(np.zeros(25_000, dtype=np.int16))
        assert len(clips) == 2
        assert seg.buffered_frames == 5_000

    def test_exact_window_boundary(self):
        seg = StreamSegmenter(sample_rate=1000, channels=1, window_seconds=10)
        clips = seg.push(np.zeros(10_000, dtype=np.int16))
        assert len(clips) == 1
        assert seg.buffered_frames == 0
        assert seg.flush() is None

    def test_flush_zero_pads_partial_window(self):
        seg = StreamSegmenter(sample_rate=1000, channels=1, window_seconds=10)
        assert seg.push(np.ones(9_900, dtype=np.int16)) == []
        final = seg.flush()
        assert final is not None
        assert final.n_frames == 10_000
        assert np.all(final.samples[:9_900] == 1)
        assert np.all(final.samples[9_900:] == 0)
        assert seg.buffered_frames == 0

    def test_rate_change_mid_stream_rejected(self):
        chunks = [tone_clip(seconds=1.0, rate=22050), tone_clip(seconds=1.0, rate=44100)]
        with pytest.raises(SessionFormatError):
            list(segment_stream(chunks, window_seconds=10))

    def test_segment_stream_with_flush(self):
        chunks = [tone_clip(seconds=4.0, rate=1000)] * 3  # 12 s total
        out = list(segment_stream(chunks, window_seconds=10, flush=True))
        assert len(out) == 2
        assert all(c.n_frames == 10_000 for c in out)

    @given(st.lists(st.integers(1, 5000), min_size=1, max_size=12))
    @settings(max_examples=40, deadline=None)
    def test_sample_conservation(self, sizes):
        seg = StreamSegmenter(sample_rate=1000, channels=1, window_seconds=3)
        emitted = 0
        received = 0
        for size in sizes:
            received += size
            for clip in seg.push(np.zeros(size, dtype=np.int16)):
                emitted += clip.n_frames
        assert emitted + seg.buffered_frames == received
        assert seg.frames_received == received
        assert seg.frames_emitted == emitted


class TestMelSpectrogram:
    def test_silence_is_exactly_zero(self):
        clip = AudioClip(np.zeros(22050 * 2, dtype=np.int16), 22050, 1)
        grid = to_mel_spectrogram(clip, DESK).grid
        assert grid.shape == DESK.shape
        assert np.all(grid == 0.0)

    def test_default_frame_count_and_padding(self):
        # 10 s at 22050 with hop 512: 1 + floor(220500/512) = 431 frames,
        # padded to 432 on the time axis
        assert n_stft_frames(220_500, 512) == 431
        params = SpectrogramParams()
        clip = tone_clip(seconds=10.0, rate=22050)
        grid = to_mel_spectrogram(clip, params).grid
        assert grid.shape == (128, 432)
        assert np.all(grid[:, 431] == 0.0)  # the single padded frame
        assert np.any(grid[:, 430] > 0.0)

    def test_shape_constant_across_clips(self):
        shapes = {
            to_mel_spectrogram(tone_clip(seconds=s, rate=r), DESK).grid.shape
            for s, r in [(1.0, 22050), (4.0, 22050), (2.0, 44100), (3.0, 8000)]
        }
        assert shapes == {DESK.shape}

    def test_cells_stay_in_unit_interval(self):
        rng = np.random.default_rng(0)
        loud = AudioClip(
            (rng.uniform(-1, 1, 22050) * 32767).astype(np.int16), 22050, 1
        )
        grid = to_mel_spectrogram(loud, DESK).grid
        assert grid.min() >= 0.0 and grid.max() <= 1.0

    def test_sine_lands_in_the_mel_band_containing_its_frequency(self):
        params = SpectrogramParams()
        freq = 440.0
        grid = to_mel_spectrogram(tone_clip(freq=freq, seconds=3.0), params).grid
        got = int(grid.mean(axis=1).argmax())
        # independent re-derivation of the triangle responses at 440 Hz
        def mel(f):
            return 2595.0 * np.log10(1.0 + f / 700.0)

        def mel_inv(m):
            return 700.0 * (10 ** (m / 2595.0) - 1.0)

        edges = mel_inv(np.linspace(mel(0.0), mel(params.target_rate / 2), params.mel_bands + 2))
        responses = []
        for k in range(params.mel_bands):
            lo, mid, hi = edges[k], edges[k + 1], edges[k + 2]
            responses.append(
                max(0.0, min((freq - lo) / (mid - lo), (hi - freq) / (hi - mid)))
            )
        assert got == int(np.argmax(responses))

    def test_gain_monotonicity_below_ceiling(self):
        rng = np.random.default_rng(1)
        quiet = rng.uniform(-0.05, 0.05, 22050 * 2)
        low = AudioClip((quiet * 32767).astype(np.int16), 22050, 1)
        high = AudioClip((quiet * 4 * 32767).astype(np.int16), 22050, 1)
        g_low = to_mel_spectrogram(low, DESK).grid
        g_high = to_mel_spectrogram(high, DESK).grid
        below_ceiling = g_high < 1.0
        assert np.all(g_high[below_ceiling] >= g_low[below_ceiling] - 1e-6)

    def test_too_short_clip_rejected(self):
        clip = AudioClip(np.zeros(100, dtype=np.int16), 22050, 1)
        with pytest.raises(ValueError):
            to_mel_spectrogram(clip, DESK)

    def test_stereo_downmix_is_channel_mean(self):
        mono = tone_clip(seconds=1.0)
        stereo = tone_clip(seconds=1.0, channels=2)
        a = to_mel_spectrogram(mono, DESK).grid
        b = to_mel_spectrogram(stereo, DESK).grid
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_filterbank_shape(self):
        fb = mel_filterbank(32, 22050, 1024)
        assert fb.shape == (32, 513)
        assert fb.min() >= 0.0


class TestParams:
    def test_invariants(self):
        with pytest.raises(ValueError):
            SpectrogramParams(hop=2049)
        with pytest.raises(ValueError):
            SpectrogramParams(mel_bands=0)
        with pytest.raises(ValueError):
            SpectrogramParams(db_floor=0.0, db_ceiling=0.0)
