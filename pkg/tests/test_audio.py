import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acunet import audio
from acunet.audio import AudioSignal, excerpt, spectrogram, stft_magnitude
from oracles import dft_magnitude

SR = audio.SAMPLE_RATE


def sine(freq, seconds=1.0, amp=1.0, phase=0.0):
    t = np.arange(int(seconds * SR)) / SR
    return AudioSignal(amp * np.sin(2 * np.pi * freq * t + phase))


def test_silence_gives_zero_magnitudes_and_spectrogram():
    sig = AudioSignal(np.zeros(SR))
    assert not stft_magnitude(sig).any()
    assert not spectrogram(sig).values.any()


def test_one_second_is_twenty_frames():
    mag = stft_magnitude(AudioSignal(np.zeros(SR)))
    assert mag.shape == (20, 1025)
    assert spectrogram(AudioSignal(np.zeros(SR))).values.shape == (78, 20)


def test_frame_centres_follow_fractional_hop():
    np.testing.assert_array_equal(audio.frame_centers(SR)[:5], [0, 1103, 2205, 3308, 4410])


def test_440hz_peaks_at_bin_41():
    mag = stft_magnitude(sine(440.0))
    assert np.all(mag[2:-2].argmax(axis=1) == round(440 * 2048 / 22050))


def test_stft_frame_matches_direct_dft():
    sig = sine(440.0, phase=0.3)
    t = 7
    c = audio.frame_centers(len(sig.samples))[t]
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(2048) / 2048)
    frame = sig.samples[c - 1024 : c + 1024] * window
    np.testing.assert_allclose(stft_magnitude(sig)[t], dft_magnitude(frame), atol=1e-8)


def test_reflect_padding_at_start():
    sig = sine(300.0, phase=1.0)
    padded = np.pad(sig.samples, 1024, mode="reflect")
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(2048) / 2048)
    np.testing.assert_allclose(stft_magnitude(sig)[0], np.abs(np.fft.rfft(padded[:2048] * window)), atol=1e-9)


def test_wrong_sample_rate_rejected():
    with pytest.raises(ValueError, match="22050"):
        AudioSignal(np.zeros(100), sample_rate=44100)


def test_stereo_rejected_as_signal():
    with pytest.raises(ValueError):
        AudioSignal(np.zeros((100, 2)))


def test_empty_signal_rejected():
    with pytest.raises(ValueError):
        stft_magnitude(AudioSignal(np.zeros(0)))


class TestFilterbank:
    bank = audio.build_log_filterbank()

    def test_shape(self):
        assert self.bank.shape == (78, 1025)

    def test_rows_sum_to_one(self):
        np.testing.assert_allclose(self.bank.sum(axis=1), 1.0, atol=1e-9)

    def test_non_negative(self):
        assert (self.bank >= 0).all()

    def test_support_within_range(self):
        support = np.nonzero(self.bank.any(axis=0))[0]
        hz = support * SR / 2048
        # bins partially covered by the outermost triangles
        assert hz.min() >= 60.0 - SR / 2048 and hz.max() <= 6000.0 + SR / 2048

    def test_centres_ascending_and_log_spaced(self):
        c = audio.filter_centers()
        assert len(c) == 78
        ratios = c[1:] / c[:-1]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)
        assert 60.0 < c[0] < c[-1] < 6000.0

    def test_weighted_centre_ascending(self):
        bins = np.arange(1025)
        centroid = self.bank @ bins
        assert np.all(np.diff(centroid) >= 0)

    def test_returned_copy_is_independent(self):
        b = audio.build_log_filterbank()
        b[:] = 0
        assert audio.build_log_filterbank().sum() > 0


def test_440hz_spectrogram_argmax_is_nearest_filter():
    values = spectrogram(sine(440.0)).values
    nearest = int(np.argmin(np.abs(audio.filter_centers() - 440.0)))
    assert np.all(values[:, 2:-2].argmax(axis=0) == nearest)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_spectrogram_non_negative(seed):
    x = np.random.default_rng(seed).uniform(-1, 1, 4000)
    assert (spectrogram(AudioSignal(x)).values >= 0).all()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.0))
def test_amplitude_scaling_never_increases(seed, alpha):
    x = np.random.default_rng(seed).uniform(-1, 1, 6000)
    full = spectrogram(AudioSignal(x)).values
    scaled = spectrogram(AudioSignal(alpha * x)).values
    assert np.all(scaled <= full + 1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_time_shift_moves_columns(seed, half_k):
    k = 2 * half_k  # even frame counts are whole-sample shifts
    shift = int(k * audio.HOP)
    x = np.random.default_rng(seed).uniform(-1, 1, 3 * SR)
    base = spectrogram(AudioSignal(x)).values
    moved = spectrogram(AudioSignal(np.concatenate([np.zeros(shift), x]))).values
    interior = slice(2, base.shape[1] - 2)
    np.testing.assert_allclose(moved[:, k:][:, interior], base[:, interior], atol=1e-9)


def test_concatenation_interior_frames_match_parts():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(-1, 1, 10 * 2205), rng.uniform(-1, 1, 8 * 2205)
    whole = spectrogram(AudioSignal(np.concatenate([a, b]))).values
    sa, sb = spectrogram(AudioSignal(a)).values, spectrogram(AudioSignal(b)).values
    ca, cb = audio.frame_centers(len(a)), audio.frame_centers(len(b))
    inner_a = [t for t, c in enumerate(ca) if c >= 1024 and c + 1024 <= len(a)]
    inner_b = [t for t, c in enumerate(cb) if c >= 1024 and c + 1024 <= len(b)]
    offset = len(ca)
    assert inner_a and inner_b
    np.testing.assert_allclose(whole[:, inner_a], sa[:, inner_a], atol=1e-9)
    np.testing.assert_allclose(whole[:, [t + offset for t in inner_b]], sb[:, inner_b], atol=1e-9)


class TestExcerpt:
    spec = audio.Spectrogram(np.arange(78 * 60, dtype=float).reshape(78, 60) + 1.0)

    def test_no_padding_at_39(self):
        ex = excerpt(self.spec, 39)
        np.testing.assert_array_equal(ex.values, self.spec.values[:, :40])
        assert ex.end_frame == 39

    def test_left_zero_fill(self):
        ex = excerpt(self.spec, 10)
        assert not ex.values[:, :29].any()
        np.testing.assert_array_equal(ex.values[:, 29:], self.spec.values[:, :11])

    def test_last_frame(self):
        np.testing.assert_array_equal(excerpt(self.spec, 59).values, self.spec.values[:, -40:])

    @pytest.mark.parametrize("end", [-1, 60, 1000])
    def test_out_of_range(self, end):
        with pytest.raises(IndexError):
            excerpt(self.spec, end)

    @given(st.integers(0, 59))
    def test_shape_always_78_by_40(self, end):
        assert excerpt(self.spec, end).values.shape == (78, 40)


class TestWav:
    def test_float_round_trip_exact(self, tmp_path):
        sig = AudioSignal(np.random.default_rng(0).uniform(-1, 1, 1000))
        audio.write_wav(tmp_path / "a.wav", sig)
        np.testing.assert_array_equal(audio.read_wav(tmp_path / "a.wav").samples, sig.samples)

    def test_pcm16_stereo_downmixed(self, tmp_path):
        from scipy.io import wavfile

        data = np.stack([np.full(100, 16384, np.int16), np.full(100, -16384, np.int16) // 2], axis=1)
        wavfile.write(tmp_path / "s.wav", SR, data)
        np.testing.assert_allclose(audio.read_wav(tmp_path / "s.wav").samples, (0.5 - 0.25) / 2)

    def test_wrong_rate_rejected(self, tmp_path):
        from scipy.io import wavfile

        wavfile.write(tmp_path / "r.wav", 16000, np.zeros(10, np.int16))
        with pytest.raises(ValueError, match="sample rate"):
            audio.read_wav(tmp_path / "r.wav")
