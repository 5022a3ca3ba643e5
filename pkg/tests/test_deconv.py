import numpy as np
import pytest

from tmimi import deconv as dc
from tmimi import model as md
from tmimi.errors import ValidationError
from tmimi.numerics import Rng, count_macs

from oracles import zero_stuff_deconv


def _toy_cfg(**kw):
    defaults = dict(in_channels=6, channels=(4, 1), strides=(4, 5),
                    kernel_sizes=(8, 10), context_window=3)
    defaults.update(kw)
    return dc.DeconvConfig(**defaults)


class TestTransposedConv:
    def test_single_tap_scatters_input(self):
        # kernel with one leading tap: output is the zero-stuffed input.
        stride = 4
        kernel = np.zeros((1, 1, stride), dtype=np.float32)
        kernel[0, 0, 0] = 1.0
        x = np.array([[1.0], [2.0], [3.0]], dtype=np.float32)
        out = dc.transposed_conv1d(x, kernel, stride)
        expect = np.zeros((12, 1), dtype=np.float32)
        expect[0::stride, 0] = [1.0, 2.0, 3.0]
        np.testing.assert_array_equal(out, expect)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_zero_stuffing_oracle(self, seed):
        rng = Rng(seed)
        n, cin, cout, stride = 5, 3, 2, 4
        k = 2 * stride
        x = rng.next_uniform(n * cin, -1, 1).reshape(n, cin)
        kernel = rng.next_uniform(cout * cin * k, -1, 1).reshape(cout, cin, k)
        got = dc.transposed_conv1d(x, kernel, stride)
        expect = zero_stuff_deconv(x, kernel, stride)
        assert np.abs(got - expect).max() <= 1e-6

    def test_output_length(self):
        rng = Rng(3)
        x = rng.next_uniform(7 * 2, -1, 1).reshape(7, 2)
        kernel = rng.next_uniform(1 * 2 * 6, -1, 1).reshape(1, 2, 6)
        assert dc.transposed_conv1d(x, kernel, 3).shape == (21, 1)

    def test_kernel_stride_mismatch(self):
        with pytest.raises(ValidationError):
            dc.transposed_conv1d(np.zeros((2, 1), np.float32),
                                 np.zeros((1, 1, 5), np.float32), 3)


class TestDeconvForward:
    def test_output_length_invariant(self):
        cfg = _toy_cfg()
        w = dc.init_deconv_weights(cfg, 0)
        rng = Rng(4)
        lat = rng.next_uniform(6 * cfg.in_channels, -1, 1).reshape(6, cfg.in_channels)
        out = dc.deconv_forward(lat, w)
        assert out.shape == (6 * cfg.upsampling_factor,)

    def test_full_context_matches_unwindowed_stack(self):
        # context >= receptive field reproduces the full-history output
        cfg = _toy_cfg(context_window=6)
        w = dc.init_deconv_weights(cfg, 1)
        rng = Rng(5)
        lat = rng.next_uniform(6 * cfg.in_channels, -1, 1).reshape(6, cfg.in_channels)
        windowed = dc.deconv_forward(lat, w)
        full = dc._run_stack(lat, w)[:, 0]
        assert np.abs(windowed - full).max() <= 1e-6

    def test_context_window_changes_influence(self):
        # With win=5 a frame two steps back still matters; with win=2 it
        # cannot (the stack never sees it).
        cfg5 = _toy_cfg(context_window=5)
        cfg2 = _toy_cfg(context_window=2)
        w = dc.init_deconv_weights(cfg5, 2)
        rng = Rng(6)
        lat = rng.next_uniform(4 * cfg5.in_channels, -1, 1).reshape(4, cfg5.in_channels)
        altered = lat.copy()
        altered[1] += 0.5  # frame t-2 relative to the last frame (t=3)
        up = cfg5.upsampling_factor
        out5 = dc.deconv_forward(lat, w, context_window=5)
        out5b = dc.deconv_forward(altered, w, context_window=5)
        assert not np.array_equal(out5[3 * up :], out5b[3 * up :])
        out2 = dc.deconv_forward(lat, w, context_window=2)
        out2b = dc.deconv_forward(altered, w, context_window=2)
        assert np.array_equal(out2[3 * up :], out2b[3 * up :])

    def test_stream_matches_forward(self):
        cfg = _toy_cfg()
        w = dc.init_deconv_weights(cfg, 3)
        rng = Rng(7)
        lat = rng.next_uniform(7 * cfg.in_channels, -1, 1).reshape(7, cfg.in_channels)
        stream = dc.DeconvStream(w)
        got = np.concatenate([stream.step(row) for row in lat])
        np.testing.assert_array_equal(got, dc.deconv_forward(lat, w))

    def test_empty_input_rejected(self):
        cfg = _toy_cfg()
        w = dc.init_deconv_weights(cfg, 0)
        with pytest.raises(ValidationError):
            dc.deconv_forward(np.zeros((0, cfg.in_channels), np.float32), w)


class TestDeconvAccounting:
    def test_default_stack_composes_to_frame_length(self):
        cfg = dc.DeconvConfig()
        assert cfg.upsampling_factor == 1920

    def test_default_roughly_parameter_matches_linear_head(self):
        cfg = dc.DeconvConfig()
        head = md.head_flops_per_frame(md.DecoderConfig())  # == head params (no bias)
        ratio = dc.deconv_param_count(cfg) / head
        assert 0.9 <= ratio <= 1.15

    def test_flops_analytic_matches_instrumented(self):
        cfg = _toy_cfg(context_window=3)
        w = dc.init_deconv_weights(cfg, 4)
        rng = Rng(8)
        stream = dc.DeconvStream(w)
        rows = rng.next_uniform(5 * cfg.in_channels, -1, 1).reshape(5, cfg.in_channels)
        for row in rows[:3]:
            stream.step(row)  # fill the context window
        with count_macs() as c:
            stream.step(rows[3])
        assert c.macs == dc.deconv_flops_per_frame(cfg)

    def test_flops_scale_with_context(self):
        cfg = _toy_cfg()
        assert dc.deconv_flops_per_frame(cfg, 5) == 5 * dc.deconv_flops_per_frame(cfg, 1)

    def test_deconv_head_costs_more_than_linear_head(self):
        dcfg = dc.DeconvConfig()
        mcfg = md.DecoderConfig()
        assert dc.deconv_flops_per_frame(dcfg) > md.head_flops_per_frame(mcfg)
        # direction holds even without any context recomputation
        assert dc.deconv_flops_per_frame(dcfg, 1) > md.head_flops_per_frame(mcfg)
