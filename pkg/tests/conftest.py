import numpy as np
import pytest

from tmimi import model as md
from tmimi import weightstore as ws
from tmimi.numerics import Rng


def toy_config(num_layers=2, model_dim=32, ffn_dim=48, num_heads=4,
               attention_window=4, head_hidden_dim=24, samples_per_frame=20,
               num_codebooks=3, codebook_size=17):
    """Small decoder config with a consistent sample_rate/frame_rate pair."""
    return md.DecoderConfig(
        num_layers=num_layers,
        model_dim=model_dim,
        ffn_dim=ffn_dim,
        num_heads=num_heads,
        attention_window=attention_window,
        head_hidden_dim=head_hidden_dim,
        samples_per_frame=samples_per_frame,
        sample_rate=samples_per_frame * 10,
        frame_rate=10.0,
        num_codebooks=num_codebooks,
        codebook_size=codebook_size,
    )


def random_toy_config(rng: Rng):
    """Structurally varied small config drawn from a seeded stream."""
    heads = int(rng.next_ints(1, 3)[0]) + 1          # 1..3
    head_dim = 2 * (int(rng.next_ints(1, 6)[0]) + 2)  # 6..16, even
    return toy_config(
        num_layers=int(rng.next_ints(1, 3)[0]) + 1,   # 1..3
        model_dim=heads * head_dim,
        ffn_dim=int(rng.next_ints(1, 40)[0]) + 9,     # 9..48
        num_heads=heads,
        attention_window=int(rng.next_ints(1, 6)[0]) + 1,  # 1..6
        head_hidden_dim=int(rng.next_ints(1, 30)[0]) + 4,  # 4..33
        samples_per_frame=4 * (int(rng.next_ints(1, 10)[0]) + 1),  # 8..44
        num_codebooks=int(rng.next_ints(1, 4)[0]) + 1,  # 1..4
        codebook_size=int(rng.next_ints(1, 60)[0]) + 4,  # 4..63
    )


def random_tensor(rng: Rng, rows: int, cols: int, scale: float = 1.0):
    return rng.next_uniform(rows * cols, -scale, scale).reshape(rows, cols)


@pytest.fixture(scope="session")
def default_config():
    return md.DecoderConfig()


@pytest.fixture(scope="session")
def default_weights(default_config):
    return ws.init_random(default_config, 0)


@pytest.fixture()
def toy_weights():
    cfg = toy_config()
    return ws.init_random(cfg, 11), cfg
