import pytest
import torch

from calib_export.model import ModelConfig, TinyTransformer


@pytest.fixture
def tiny_model():
    torch.manual_seed(7)
    return TinyTransformer(ModelConfig(vocab_size=32, d_model=32, n_heads=2, d_ff=64, n_layers=2))
