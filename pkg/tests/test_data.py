import numpy as np
import pytest
import scipy.io.wavfile
from hypothesis import given, settings, strategies as st

from sparseinv.data import (
    FormatError,
    ImageSpec,
    NoiseSpec,
    SignalSpec,
    add_noise,
    circular_fov,
    ingest_image,
    ingest_wav,
    normalize_signal,
    read_pgm,
    resize_bilinear,
    sample_mask,
    shepp_logan,
    synth_signal,
    write_pgm,
)
from sparseinv.transforms import dct_analyze


class TestSynth:
    def test_starts_at_zero_before_normalization(self):
        x = synth_signal()
        # sin(0) + sin(0) = 0 maps to -mean/std of the raw samples
        t = np.arange(2000) / 16000.0
        raw = np.sin(1392 * np.pi * t) + np.sin(3264 * np.pi * t)
        assert raw[0] == 0.0
        assert x[0] == pytest.approx(-raw.mean() / raw.std(), abs=1e-12)

    def test_normalized(self):
        x = synth_signal()
        assert x.size == 2000
        assert abs(x.mean()) < 1e-12
        assert abs(x.var() - 1.0) < 1e-12

    def test_energy_at_two_tones(self):
        # sines on the 4 Hz grid leak into the neighbouring DCT-II bins
        p = dct_analyze(synth_signal()) ** 2
        near = np.zeros(p.size, dtype=bool)
        for k in (174, 408):
            near[k - 4 : k + 5] = True
        assert p[near].sum() > 0.9 * p.sum()
        top = set(np.argsort(p)[::-1][:4])
        assert top == {173, 175, 407, 409}

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SignalSpec(1)
        with pytest.raises(ValueError):
            SignalSpec(10, 0.0)

    def test_zero_variance_refused(self):
        with pytest.raises(ValueError, match="zero variance"):
            normalize_signal(np.ones(10))

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200))
    def test_normalize_property(self, vals):
        x = np.asarray(vals)
        if np.ptp(x) < 1e-6:
            return
        y = normalize_signal(x)
        assert abs(y.mean()) < 1e-10
        assert abs(y.var() - 1.0) < 1e-10


def write_wav(path, rate, data):
    scipy.io.wavfile.write(path, rate, data)
    return path


class TestWav:
    def test_pure_tone_bin(self, tmp_path):
        fs, n = 16000, 2500
        t = np.arange(4 * fs) / fs
        data = (0.5 * np.cos(2 * np.pi * 784 * t) * 32767).astype(np.int16)
        x = ingest_wav(write_wav(tmp_path / "a.wav", fs, data), 2.5, SignalSpec(n))
        assert x.size == n
        assert np.argmax(np.abs(dct_analyze(x))) == round(784 * 2 * n / fs)

    def test_resampled_tone_bin(self, tmp_path):
        fs, n = 44100, 2500
        t = np.arange(4 * fs) / fs
        data = np.cos(2 * np.pi * 784 * t).astype(np.float32)
        x = ingest_wav(write_wav(tmp_path / "b.wav", fs, data), 2.5, SignalSpec(n))
        assert np.argmax(np.abs(dct_analyze(x))) == round(784 * 2 * n / 16000)
        assert abs(x.mean()) < 1e-10 and abs(x.std() - 1) < 1e-10

    def test_stereo_uses_first_channel(self, tmp_path):
        fs = 16000
        t = np.arange(3 * fs) / fs
        left = (np.sin(2 * np.pi * 500 * t) * 20000).astype(np.int16)
        right = (np.sin(2 * np.pi * 900 * t) * 20000).astype(np.int16)
        stereo = write_wav(tmp_path / "s.wav", fs, np.stack([left, right], axis=1))
        mono = write_wav(tmp_path / "m.wav", fs, left)
        np.testing.assert_array_equal(ingest_wav(stereo, 0.5, SignalSpec(1000)),
                                      ingest_wav(mono, 0.5, SignalSpec(1000)))

    def test_constant_refused(self, tmp_path):
        path = write_wav(tmp_path / "c.wav", 16000, np.full(48000, 1000, dtype=np.int16))
        with pytest.raises(ValueError, match="zero variance"):
            ingest_wav(path, 0.5, SignalSpec(1000))

    def test_segment_past_end(self, tmp_path):
        path = write_wav(tmp_path / "short.wav", 16000, np.arange(1000, dtype=np.int16))
        with pytest.raises(IndexError):
            ingest_wav(path, 2.5, SignalSpec(2500))

    def test_missing_and_garbage(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ingest_wav(tmp_path / "none.wav")
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"not a wav file at all")
        with pytest.raises(FormatError):
            ingest_wav(bad)


class TestPhantom:
    def test_background_and_range(self):
        img = shepp_logan(128)
        assert img[0, 0] == 0.0 and img[64, 2] == 0.0
        assert img.min() >= 0.0 and img.max() == pytest.approx(1.0)

    def test_mirror_symmetry(self):
        img = shepp_logan(128)
        assert np.abs(img - img[:, ::-1]).sum() / img.sum() < 0.02

    def test_area_scaling(self):
        assert shepp_logan(256).sum() / shepp_logan(128).sum() == pytest.approx(4.0, rel=0.02)

    def test_zero_outside_fov(self):
        img = shepp_logan(64)
        assert np.all(img[circular_fov(64) == 0] == 0)

    def test_rejects_small(self):
        with pytest.raises(ValueError):
            shepp_logan(8)


class TestFov:
    def test_centre_and_corner(self):
        m = circular_fov(65)
        assert m[32, 32] == 1 and m[0, 0] == 0

    @pytest.mark.parametrize("n", [64, 101, 128])
    def test_area(self, n):
        assert circular_fov(n).mean() == pytest.approx(np.pi / 4, rel=0.02)


class TestImages:
    def test_pgm_round_trip(self, tmp_path):
        img = np.linspace(0, 1, 30).reshape(5, 6)
        write_pgm(tmp_path / "a.pgm", img, bits=16)
        back = read_pgm(tmp_path / "a.pgm") / 65535
        np.testing.assert_allclose(back, img, atol=1e-5)

    def test_ascii_pgm_with_comment(self, tmp_path):
        path = tmp_path / "b.pgm"
        path.write_bytes(b"P2\n# note\n3 2\n255\n0 128 255\n1 2 3\n")
        np.testing.assert_array_equal(read_pgm(path), [[0, 128, 255], [1, 2, 3]])

    def test_truncated_pgm(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(5))
        with pytest.raises(FormatError):
            read_pgm(path)

    def test_constant_image_is_zero(self, tmp_path):
        write_pgm(tmp_path / "c.pgm", np.full((20, 20), 0.5))
        np.testing.assert_array_equal(ingest_image(tmp_path / "c.pgm", ImageSpec(16)), 0.0)

    def test_disk_unchanged(self, tmp_path):
        disk = circular_fov(32)
        write_pgm(tmp_path / "d.pgm", disk)
        np.testing.assert_array_equal(ingest_image(tmp_path / "d.pgm", ImageSpec(32)), disk)

    def test_checkerboard_downsample(self):
        board = (np.add.outer(np.arange(64), np.arange(64)) % 2).astype(float)
        np.testing.assert_allclose(resize_bilinear(board, 32), 0.5, atol=1e-6)

    def test_png(self, tmp_path):
        Image = pytest.importorskip("PIL.Image")
        arr = (np.linspace(0, 255, 256).reshape(16, 16)).astype(np.uint8)
        Image.fromarray(arr).save(tmp_path / "g.png")
        img = ingest_image(tmp_path / "g.png", ImageSpec(16, fov=False))
        np.testing.assert_allclose(img, (arr - arr.min()) / float(arr.max() - arr.min()))

    def test_rgb_png_refused(self, tmp_path):
        Image = pytest.importorskip("PIL.Image")
        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(tmp_path / "rgb.png")
        with pytest.raises(FormatError):
            ingest_image(tmp_path / "rgb.png")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ingest_image(tmp_path / "x.pgm")


class TestMasksAndNoise:
    def test_full_ratio(self):
        np.testing.assert_array_equal(sample_mask(50, 1.0, 0).observed_indices, np.arange(50))

    def test_count(self):
        assert sample_mask(2000, 0.05, 1).observed_indices.size == 100

    def test_seeds(self):
        a, b = sample_mask(500, 0.3, 1), sample_mask(500, 0.3, 1)
        np.testing.assert_array_equal(a.observed_indices, b.observed_indices)
        assert not np.array_equal(a.observed_indices, sample_mask(500, 0.3, 2).observed_indices)

    def test_empty_refused(self):
        with pytest.raises(ValueError):
            sample_mask(10, 0.01, 0)
        with pytest.raises(ValueError):
            sample_mask(10, 0.0, 0)

    @given(st.integers(1, 400), st.floats(0.01, 1.0), st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_indices_sorted_unique(self, n, ratio, seed):
        if round(ratio * n) == 0:
            return
        idx = sample_mask(n, ratio, seed).observed_indices
        assert np.all(np.diff(idx) > 0)
        assert idx.min() >= 0 and idx.max() < n
        assert idx.size == int(np.floor(ratio * n + 0.5))

    def test_zero_noise(self):
        x = np.arange(5.0)
        np.testing.assert_array_equal(add_noise(x, NoiseSpec(0.0, 3)), x)

    def test_noise_std(self):
        x = np.zeros(100_000)
        assert np.std(add_noise(x, NoiseSpec(0.1, 0))) == pytest.approx(0.1, rel=0.02)

    def test_noise_seeded(self):
        x = np.zeros(10)
        np.testing.assert_array_equal(add_noise(x, NoiseSpec(1.0, 5)), add_noise(x, NoiseSpec(1.0, 5)))

    def test_negative_alpha(self):
        with pytest.raises(ValueError):
            NoiseSpec(-0.1)
