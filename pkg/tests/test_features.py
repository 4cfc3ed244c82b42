import io
import math
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from suprahmm.errors import (
    AudioFormatError,
    DegenerateSegmentError,
    DocumentError,
    EmptyInputError,
    TooShortError,
)
from suprahmm.features import (
    FEATURE_DIM,
    LOG_FLOOR,
    AudioClip,
    FeatureSequence,
    FrameSpec,
    decode_matrix,
    delta_append,
    encode_matrix,
    frame_count,
    frame_signal,
    mfcc_extract,
    preemphasize,
    prosodic_contour,
    prosodic_extract,
    prosodic_from_contour,
    read_features,
    read_wav,
    static_mfcc,
    write_features,
    write_wav,
)


def noise_clip(seconds=0.5, seed=0, rate=16000):
    rng = np.random.default_rng(seed)
    return AudioClip(np.round(3000 * rng.standard_normal(int(seconds * rate))), rate)


def reference_static_mfcc(frame, rate=16000, n_fft=512, n_filters=26, n_keep=16, floor=1e-10):
    """Textbook MFCC of one already pre-emphasised frame, written with
    explicit loops: direct DFT, per-bin triangle weights, explicit DCT-II."""
    n = len(frame)
    win = [0.54 - 0.46 * math.cos(2 * math.pi * i / (n - 1)) for i in range(n)]
    x = [frame[i] * win[i] for i in range(n)] + [0.0] * (n_fft - n)
    mags = []
    for k in range(n_fft // 2 + 1):
        re = sum(x[i] * math.cos(2 * math.pi * k * i / n_fft) for i in range(n_fft))
        im = sum(x[i] * math.sin(2 * math.pi * k * i / n_fft) for i in range(n_fft))
        mags.append(math.hypot(re, im))

    def mel(f):
        return 2595 * math.log10(1 + f / 700)

    def hz(m):
        return 700 * (10 ** (m / 2595) - 1)

    top = mel(rate / 2)
    edges = [hz(top * i / (n_filters + 1)) for i in range(n_filters + 2)]
    log_e = []
    for f in range(n_filters):
        lo, mid, hi = edges[f], edges[f + 1], edges[f + 2]
        total = 0.0
        for k, mag in enumerate(mags):
            freq = k * rate / n_fft
            if lo < freq < hi:
                w = (freq - lo) / (mid - lo) if freq <= mid else (hi - freq) / (hi - mid)
                total += w * mag
        log_e.append(math.log(max(total, floor)))
    out = []
    for c in range(1, n_keep + 1):
        scale = math.sqrt(2.0 / n_filters)
        out.append(scale * sum(log_e[f] * math.cos(math.pi * c * (2 * f + 1) / (2 * n_filters))
                               for f in range(n_filters)))
    return np.array(out)


class TestAudioClip:
    def test_rejects_stereo(self):
        with pytest.raises(AudioFormatError):
            AudioClip(np.zeros((10, 2)))

    def test_rejects_bad_rate(self):
        with pytest.raises(AudioFormatError):
            AudioClip(np.zeros(10), 0)


class TestFrameSpec:
    def test_default_lengths(self):
        spec = FrameSpec()
        assert spec.frame_length(16000) == 256
        assert spec.hop_length(16000) == 112

    @pytest.mark.parametrize("frame_ms,overlap_ms", [(16, 16), (16, 0), (16, 20)])
    def test_invalid_overlap(self, frame_ms, overlap_ms):
        with pytest.raises(ValueError):
            FrameSpec(frame_ms, overlap_ms)


class TestPreemphasis:
    def test_zero_coefficient_is_identity(self):
        clip = noise_clip(0.05)
        np.testing.assert_array_equal(preemphasize(clip, 0.0).samples, clip.samples)

    def test_constant_signal(self):
        out = preemphasize(AudioClip(np.full(50, 100.0)), 0.97).samples
        assert out[0] == 100.0
        np.testing.assert_allclose(out[1:], 3.0, atol=1e-12)

    def test_impulse(self):
        x = np.zeros(20)
        x[7] = 1.0
        out = preemphasize(AudioClip(x), 0.97).samples
        expected = np.zeros(20)
        expected[7], expected[8] = 1.0, -0.97
        np.testing.assert_allclose(out, expected)

    def test_empty_clip(self):
        with pytest.raises(EmptyInputError):
            preemphasize(AudioClip(np.zeros(0)))

    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
    @settings(max_examples=50, deadline=None)
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal(64), rng.standard_normal(64)
        lhs = preemphasize(AudioClip(a * x + b * y)).samples
        rhs = a * preemphasize(AudioClip(x)).samples + b * preemphasize(AudioClip(y)).samples
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestFraming:
    def test_one_second(self):
        frames = frame_signal(AudioClip(np.zeros(16000)))
        assert frames.shape == (141, 256)
        # direct count of frame starts that fit
        assert frames.shape[0] == len(range(0, 16000 - 256 + 1, 112))

    def test_exactly_one_frame(self):
        assert frame_signal(AudioClip(np.arange(256.0))).shape == (1, 256)

    def test_frame_plus_hop(self):
        frames = frame_signal(AudioClip(np.arange(256.0 + 112)))
        assert frames.shape == (2, 256)
        assert frames[1, 0] == 112.0

    def test_too_short(self):
        with pytest.raises(TooShortError):
            frame_signal(AudioClip(np.zeros(255)))

    @given(st.integers(256, 20000))
    @settings(max_examples=100, deadline=None)
    def test_count_formula(self, n):
        frames = frame_signal(AudioClip(np.zeros(n)))
        assert frames.shape[0] == (n - 256) // 112 + 1 == frame_count(n, 256, 112)
        # the last frame ends inside the clip and one more hop would not fit
        assert 112 * (frames.shape[0] - 1) + 256 <= n < 112 * frames.shape[0] + 256


class TestDeltas:
    def test_constant_input(self):
        out = delta_append(np.tile([1.0, -2.0, 3.0], (7, 1)))
        np.testing.assert_array_equal(out[:, 3:], 0.0)

    def test_ramp(self):
        u = np.array([0.5, -1.0])
        static = np.arange(10)[:, None] * u
        delta = delta_append(static)[:, 2:]
        np.testing.assert_allclose(delta[2:-2], np.tile(u, (6, 1)), atol=1e-12)

    def test_direct_formula(self):
        static = np.random.default_rng(4).standard_normal((5, 3))
        n = static.shape[0]

        def at(t):
            return static[min(max(t, 0), n - 1)]

        expected = np.array([sum(d * (at(t + d) - at(t - d)) for d in (1, 2)) / 10.0 for t in range(n)])
        np.testing.assert_allclose(delta_append(static)[:, 3:], expected, atol=1e-12)

    def test_single_frame(self):
        np.testing.assert_array_equal(delta_append(np.ones((1, 4)))[:, 4:], 0.0)

    @given(st.integers(1, 12), st.integers(1, 6), st.floats(-1e3, 1e3))
    @settings(max_examples=50, deadline=None)
    def test_constant_matrix_property(self, t, d, value):
        out = delta_append(np.full((t, d), value))
        assert out.shape == (t, 2 * d)
        np.testing.assert_array_equal(out[:, d:], 0.0)


class TestMfcc:
    def test_matches_reference_pipeline(self):
        clip = noise_clip(0.5, seed=11)
        ours = static_mfcc(clip)[0]
        emphasized = preemphasize(clip, 0.97).samples[:256]
        np.testing.assert_allclose(ours, reference_static_mfcc(list(emphasized)), atol=1e-6)

    def test_dimension(self):
        feats = mfcc_extract(noise_clip(0.3))
        assert feats.dim == FEATURE_DIM == 32
        assert feats.frame_count == (4800 - 256) // 112 + 1

    def test_silence(self):
        feats = mfcc_extract(AudioClip(np.zeros(4000))).frames
        assert np.all(np.isfinite(feats))
        # every filter sits on the same floored log value, so the DCT puts
        # all of it into the discarded coefficient 0
        np.testing.assert_allclose(feats[:, :16], 0.0, atol=1e-9)
        np.testing.assert_array_equal(feats[:, 16:], 0.0)

    def test_source_id(self):
        assert mfcc_extract(noise_clip(0.1), source_id="u1").source_id == "u1"

    @given(st.integers(0, 2**31), st.floats(0, 30000))
    @settings(max_examples=20, deadline=None)
    def test_finite_output(self, seed, scale):
        x = scale * np.random.default_rng(seed).uniform(-1, 1, 600)
        assert np.all(np.isfinite(mfcc_extract(AudioClip(x)).frames))


class TestFeatureSequence:
    def test_read_only(self):
        seq = FeatureSequence(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            seq.frames[0, 0] = 1.0

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            FeatureSequence(np.zeros((0, 3)))


class TestProsody:
    def test_whole_clip_fraction(self):
        clip = noise_clip(0.2)
        seq = prosodic_extract(clip, [(0, len(clip))])
        assert seq.segment_count == 1
        assert seq.segments[0, 4] == 1.0

    def test_halves(self):
        clip = noise_clip(0.2)
        half = len(clip) // 2
        seq = prosodic_extract(clip, [(0, half), (half, len(clip))])
        np.testing.assert_allclose(seq.segments[:, 4], [0.5, 0.5])

    def test_silence(self):
        seq = prosodic_extract(AudioClip(np.zeros(2000)), [(0, 2000)])
        mean_e, var_e, pitch, pitch_var, _, zcr = seq.segments[0]
        assert mean_e == pytest.approx(np.log(LOG_FLOOR))
        assert var_e == 0.0 and pitch == 0.0 and pitch_var == 0.0 and zcr == 0.0

    def test_pitch_of_sine(self):
        t = np.arange(8000) / 16000
        clip = AudioClip(8000 * np.sin(2 * np.pi * 200 * t))
        seq = prosodic_extract(clip, [(0, 8000)])
        assert seq.segments[0, 2] == pytest.approx(200.0, rel=0.02)

    def test_empty_range(self):
        with pytest.raises(DegenerateSegmentError):
            prosodic_extract(noise_clip(0.1), [(100, 100)])

    def test_overlapping_ranges(self):
        with pytest.raises(DegenerateSegmentError):
            prosodic_extract(noise_clip(0.1), [(0, 600), (500, 900)])

    def test_short_range(self):
        seq = prosodic_extract(noise_clip(0.1), [(0, 100), (100, 1600)])
        assert seq.segment_count == 2
        assert np.all(np.isfinite(seq.segments))

    def test_contour_pooling_matches_audio_path(self):
        clip = noise_clip(0.3, seed=2)
        contour = prosodic_contour(clip)
        n = contour.shape[0]
        from_contour = prosodic_from_contour(contour, [(0, n)])
        np.testing.assert_allclose(from_contour.segments[0, [0, 1, 2, 3, 5]],
                                   prosodic_extract(clip, [(0, len(clip))]).segments[0, [0, 1, 2, 3, 5]])

    @given(st.lists(st.integers(1, 10), min_size=1, max_size=6))
    @settings(max_examples=50, deadline=None)
    def test_duration_fractions_sum_to_one(self, lengths):
        contour = np.random.default_rng(0).standard_normal((sum(lengths), 3))
        bounds = np.cumsum([0] + lengths)
        seq = prosodic_from_contour(contour, list(zip(bounds[:-1], bounds[1:])))
        assert seq.segments[:, 4].sum() == pytest.approx(1.0)


class TestWav:
    def test_round_trip(self, tmp_path):
        clip = noise_clip(0.1)
        write_wav(tmp_path / "a.wav", clip)
        np.testing.assert_array_equal(read_wav(tmp_path / "a.wav").samples, clip.samples)

    def test_rejects_other_rate(self, tmp_path):
        write_wav(tmp_path / "a.wav", AudioClip(np.zeros(800), 8000))
        with pytest.raises(AudioFormatError, match="8000"):
            read_wav(tmp_path / "a.wav")

    def test_rejects_stereo_file(self, tmp_path):
        with wave.open(str(tmp_path / "s.wav"), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(16000)
            wf.writeframes(b"\0" * 400)
        with pytest.raises(AudioFormatError, match="mono"):
            read_wav(tmp_path / "s.wav")

    def test_rejects_garbage(self, tmp_path):
        (tmp_path / "bad.wav").write_bytes(b"not a wave file at all")
        with pytest.raises(AudioFormatError):
            read_wav(tmp_path / "bad.wav")

    def test_reads_file_object(self, tmp_path):
        buf = io.BytesIO()
        with wave.open(buf, "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(16000)
            wf.writeframes(np.arange(300, dtype="<i2").tobytes())
        buf.seek(0)
        np.testing.assert_array_equal(read_wav(buf).samples, np.arange(300.0))


class TestFeatureFiles:
    def test_bit_exact_round_trip(self, tmp_path):
        m = np.random.default_rng(1).standard_normal((7, 32)).astype(np.float32)
        write_features(tmp_path / "x.feat", m)
        back = read_features(tmp_path / "x.feat")
        assert back.shape == (7, 32)
        assert back.astype(np.float32).tobytes() == m.tobytes()

    def test_header(self):
        blob = encode_matrix(np.zeros((3, 2)))
        assert blob.startswith(b"SUPRAHMM-FEAT v1 3 2\n")
        assert len(blob) == len(b"SUPRAHMM-FEAT v1 3 2\n") + 24

    def test_truncated_payload(self):
        with pytest.raises(DocumentError):
            decode_matrix(encode_matrix(np.zeros((3, 2)))[:-1])

    def test_wrong_magic(self):
        with pytest.raises(DocumentError):
            decode_matrix(b"OTHER v1 1 1\n\0\0\0\0")
