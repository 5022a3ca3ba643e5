import numpy as np
import pytest

from tmimi import model as md
from tmimi import quantization as qz
from tmimi import streaming as st
from tmimi import weightstore as ws
from tmimi.numerics import Rng

from conftest import toy_config, random_toy_config


def _decode_stream(state, frames):
    return np.concatenate([st.step(state, f) for f in frames])


class TestStreamState:
    def test_fresh_state_empty(self, toy_weights):
        w, cfg = toy_weights
        state = st.new_stream(w)
        assert state.valid_len == 0
        assert state.absolute_position == 0

    def test_valid_len_saturates_at_window(self, toy_weights):
        w, cfg = toy_weights
        state = st.new_stream(w)
        frames = ws.random_frames(cfg, cfg.attention_window + 3, 0)
        for i, f in enumerate(frames):
            st.step(state, f)
            assert state.valid_len == min(i + 1, cfg.attention_window)
        assert state.absolute_position == len(frames)

    def test_state_size_formula(self, toy_weights):
        w, cfg = toy_weights
        state = st.new_stream(w)
        assert state.kv_bytes() == cfg.num_layers * 2 * cfg.attention_window * cfg.model_dim * 4

    def test_two_fresh_states_decode_identically(self, toy_weights):
        w, cfg = toy_weights
        frames = ws.random_frames(cfg, 6, 1)
        a = _decode_stream(st.new_stream(w), frames)
        b = _decode_stream(st.new_stream(w), frames)
        assert np.array_equal(a, b)


class TestStepContract:
    def test_first_step_bit_identical_to_offline(self, toy_weights):
        w, cfg = toy_weights
        frames = ws.random_frames(cfg, 1, 2)
        got = st.step(st.new_stream(w), frames[0])
        expect = md.forward_offline(frames, w)
        assert np.array_equal(got, expect)

    def test_step_output_shape(self, toy_weights):
        w, cfg = toy_weights
        out = st.step(st.new_stream(w), ws.random_frames(cfg, 1, 3)[0])
        assert out.shape == (cfg.samples_per_frame,)
        assert out.dtype == np.float32

    def test_hundred_frames_match_offline(self):
        cfg = toy_config(num_layers=2, attention_window=5)
        w = ws.init_random(cfg, 8)
        frames = ws.random_frames(cfg, 100, 9)
        stream_out = _decode_stream(st.new_stream(w), frames)
        offline_out = md.forward_offline(frames, w)
        assert np.abs(stream_out - offline_out).max() <= 1e-4

    def test_eviction_window_single_layer(self):
        # One layer, window W: frame W+1 (0-based index W) is independent
        # of frame 1 once frame 1 leaves the ring.
        cfg = toy_config(num_layers=1, attention_window=3)
        w = ws.init_random(cfg, 10)
        frames = ws.random_frames(cfg, cfg.attention_window + 1, 11)
        altered = list(frames)
        tok = np.array(altered[0].tokens)
        tok[0] = (tok[0] + 1) % cfg.codebook_size
        altered[0] = md.FrameInput.from_tokens(tok)
        a = _decode_stream(st.new_stream(w), frames)
        b = _decode_stream(st.new_stream(w), altered)
        spf = cfg.samples_per_frame
        last = cfg.attention_window * spf
        assert np.array_equal(a[last:], b[last:])
        assert not np.array_equal(a[:spf], b[:spf])

    def test_streaming_offline_equivalence_quantized(self):
        cfg = toy_config(num_layers=3, attention_window=4)
        w = ws.init_random(cfg, 12)
        frames = ws.random_frames(cfg, 20, 13)
        plan = qz.PrecisionPlan([qz.INT8, qz.INT4_G32, qz.FP32], qz.INT8)
        stream_out = _decode_stream(st.new_stream(w, plan), frames)
        offline_out = md.forward_offline(frames, w, plan)
        assert np.abs(stream_out - offline_out).max() <= 1e-4

    def test_activation_quant_runs_and_is_deterministic(self):
        cfg = toy_config(num_layers=2)
        w = ws.init_random(cfg, 14)
        frames = ws.random_frames(cfg, 5, 15)
        plan = qz.PrecisionPlan.uniform(cfg.num_layers, qz.INT8)
        plan.activation_quant = True
        a = _decode_stream(st.new_stream(w, plan), frames)
        b = _decode_stream(st.new_stream(w, plan), frames)
        assert np.array_equal(a, b)
        assert np.isfinite(a).all()


class TestReset:
    def test_reset_equals_fresh(self, toy_weights):
        w, cfg = toy_weights
        s1 = ws.random_frames(cfg, 5, 20)
        s2 = ws.random_frames(cfg, 5, 21)
        state = st.new_stream(w)
        _decode_stream(state, s1)
        st.reset(state)
        after_reset = _decode_stream(state, s2)
        fresh = _decode_stream(st.new_stream(w), s2)
        assert np.array_equal(after_reset, fresh)

    def test_reset_idempotent(self, toy_weights):
        w, cfg = toy_weights
        frames = ws.random_frames(cfg, 4, 22)
        state = st.new_stream(w)
        _decode_stream(state, frames)
        st.reset(state)
        st.reset(state)
        assert state.valid_len == 0
        a = _decode_stream(state, frames)
        assert np.array_equal(a, _decode_stream(st.new_stream(w), frames))

    def test_reset_then_first_step_bit_identical_to_offline(self, toy_weights):
        w, cfg = toy_weights
        frames = ws.random_frames(cfg, 3, 23)
        state = st.new_stream(w)
        _decode_stream(state, frames)
        st.reset(state)
        got = st.step(state, frames[0])
        assert np.array_equal(got, md.forward_offline(frames[:1], w))


class TestIsolation:
    def test_interleaved_streams_match_separate_runs(self):
        cfg = toy_config(num_layers=2, attention_window=3)
        w = ws.init_random(cfg, 30)
        fa = ws.random_frames(cfg, 8, 31)
        fb = ws.random_frames(cfg, 8, 32)
        sa, sb = st.new_stream(w), st.new_stream(w)
        inter_a, inter_b = [], []
        for x, y in zip(fa, fb):
            inter_a.append(st.step(sa, x))
            inter_b.append(st.step(sb, y))
        sep_a = _decode_stream(st.new_stream(w), fa)
        sep_b = _decode_stream(st.new_stream(w), fb)
        assert np.array_equal(np.concatenate(inter_a), sep_a)
        assert np.array_equal(np.concatenate(inter_b), sep_b)


class TestEquivalenceSweep:
    @pytest.mark.parametrize("window", [4, 8, 250])
    def test_windows_against_offline(self, window):
        rng = Rng(1000 + window)
        for case in range(4):
            cfg = random_toy_config(rng)
            cfg = md.DecoderConfig(**{**cfg.__dict__, "attention_window": window})
            w = ws.init_random(cfg, int(rng.next_ints(1, 1 << 31)[0]))
            n = int(rng.next_ints(1, 64)[0]) + 1
            frames = ws.random_frames(cfg, n, int(rng.next_ints(1, 1 << 31)[0]))
            stream_out = _decode_stream(st.new_stream(w), frames)
            offline_out = md.forward_offline(frames, w)
            assert np.abs(stream_out - offline_out).max() <= 1e-4
