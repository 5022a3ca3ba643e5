import math

import numpy as np
import pytest

from tmimi import metrics as mt
from tmimi.errors import ShapeError, ValidationError
from tmimi.numerics import Rng

from oracles import reference_multiscale_mel_l1


class TestSiSdr:
    def test_identity_hits_cap(self):
        x = Rng(0).next_uniform(500, -1, 1)
        assert mt.si_sdr(x, x) == 100.0

    def test_scale_invariance(self):
        x = Rng(1).next_uniform(500, -1, 1).astype(np.float64)
        for alpha in (2.0, 0.25, 7.5):
            assert mt.si_sdr(x, alpha * x) == 100.0

    def test_hand_computed_zero_db(self):
        # target [1,0], residual [0,1]: equal energies -> exactly 0 dB
        val = mt.si_sdr([1.0, 0.0], [1.0, 1.0])
        assert abs(val) <= 1e-6

    def test_hand_computed_negative(self):
        # est [1,2] vs ref [1,0]: target [1,0], residual [0,2] -> -6.02 dB
        val = mt.si_sdr([1.0, 0.0], [1.0, 2.0])
        assert abs(val - 10 * math.log10(1.0 / 4.0)) <= 1e-9

    def test_orthogonal_estimate_is_minus_inf(self):
        assert mt.si_sdr([1.0, 0.0], [0.0, 1.0]) == float("-inf")

    def test_noise_reduces_score(self):
        rng = Rng(2)
        x = rng.next_uniform(2000, -1, 1).astype(np.float64)
        small = x + 1e-4 * rng.next_uniform(2000, -1, 1)
        big = x + 1e-1 * rng.next_uniform(2000, -1, 1)
        assert mt.si_sdr(x, small) > mt.si_sdr(x, big) > 0

    def test_zero_reference_rejected(self):
        with pytest.raises(ValidationError):
            mt.si_sdr([0.0, 0.0], [1.0, 1.0])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            mt.si_sdr([1.0, 0.0], [1.0])


class TestMelConfig:
    def test_defaults(self):
        cfg = mt.MelConfig()
        assert cfg.fft_sizes == (2048, 1024, 512, 256, 128, 64)
        assert cfg.hop(2048) == 512

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValidationError):
            mt.MelConfig(fft_sizes=(100,), n_mels=(8,))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValidationError):
            mt.MelConfig(fft_sizes=(64, 128), n_mels=(8,))


class TestFilterbank:
    @pytest.mark.parametrize("n_mels,fft", [(80, 2048), (64, 512), (8, 64)])
    def test_rows_positive_and_band_covered(self, n_mels, fft):
        fb = mt.mel_filterbank(n_mels, fft, 24000)
        assert fb.shape == (n_mels, fft // 2 + 1)
        assert (fb.sum(axis=1) > 0).all()
        # interior bins fall under at least one filter
        covered = fb.sum(axis=0) > 0
        assert covered[1:-1].mean() > 0.95

    def test_too_many_mels_rejected(self):
        with pytest.raises(ValidationError):
            mt.mel_filterbank(64, 64, 24000)


class TestMultiscaleMelL1:
    def test_zero_on_identical(self):
        x = Rng(3).next_uniform(4096, -1, 1).astype(np.float64)
        assert mt.multiscale_mel_l1(x, x) == 0.0

    def test_symmetric(self):
        rng = Rng(4)
        a = rng.next_uniform(4096, -1, 1).astype(np.float64)
        b = rng.next_uniform(4096, -1, 1).astype(np.float64)
        assert mt.multiscale_mel_l1(a, b) == pytest.approx(mt.multiscale_mel_l1(b, a), abs=1e-12)

    def test_nonnegative_and_monotone_under_noise(self):
        rng = Rng(5)
        x = rng.next_uniform(4096, -1, 1).astype(np.float64)
        n = rng.next_uniform(4096, -1, 1).astype(np.float64)
        d_small = mt.multiscale_mel_l1(x, x + 0.01 * n)
        d_big = mt.multiscale_mel_l1(x, x + 0.3 * n)
        assert 0 < d_small < d_big

    def test_white_noise_vs_silence_matches_reference(self):
        rng = Rng(6)
        noise = rng.next_uniform(4096, -1, 1).astype(np.float64)
        silence = np.full(4096, 1e-7)
        cfg = mt.MelConfig()
        got = mt.multiscale_mel_l1(noise, silence, cfg)
        expect = reference_multiscale_mel_l1(noise, silence, cfg.fft_sizes,
                                             cfg.n_mels, cfg.sample_rate)
        assert abs(got - expect) <= 1e-6

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_reference_on_random_signals(self, seed):
        rng = Rng(100 + seed)
        a = rng.next_uniform(2560, -1, 1).astype(np.float64)
        b = rng.next_uniform(2560, -1, 1).astype(np.float64)
        cfg = mt.MelConfig()
        got = mt.multiscale_mel_l1(a, b, cfg)
        expect = reference_multiscale_mel_l1(a, b, cfg.fft_sizes, cfg.n_mels,
                                             cfg.sample_rate)
        assert abs(got - expect) <= 1e-6

    def test_too_short_rejected(self):
        x = np.zeros(1024)
        with pytest.raises(ValidationError):
            mt.multiscale_mel_l1(x, x)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            mt.multiscale_mel_l1(np.zeros(2048), np.zeros(2049))


class TestSilenceRms:
    def test_zero_signal(self):
        assert mt.silence_noise_rms(np.zeros(100), [(0, 50)]) == 0.0

    def test_constant_region(self):
        w = np.zeros(100)
        w[10:30] = 0.5
        assert mt.silence_noise_rms(w, [(10, 30)]) == pytest.approx(0.5)

    def test_sine_outside_regions(self):
        n = np.arange(1000)
        w = np.sin(2 * np.pi * n / 50.0)
        w[:200] = 0.0
        w[800:] = 0.0
        assert mt.silence_noise_rms(w, [(0, 200), (800, 1000)]) == 0.0

    def test_overlapping_regions_counted_once(self):
        w = np.ones(10)
        assert mt.silence_noise_rms(w, [(0, 6), (4, 10)]) == pytest.approx(1.0)

    def test_empty_region_list(self):
        with pytest.raises(ValidationError):
            mt.silence_noise_rms(np.zeros(10), [])

    def test_out_of_bounds_region(self):
        with pytest.raises(ValidationError):
            mt.silence_noise_rms(np.zeros(10), [(5, 11)])
