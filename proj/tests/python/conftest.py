import pytest

TINY = {
    "backbone": {"image_size": 8, "patch_size": 4, "dim": 8, "layers": 2, "heads": 2, "mlp_ratio": 2},
    "head": {"llm_dim": 8},
    "task": {"image_size": 8},
    "train": {"batch_size": 2, "total_steps": 4, "pretrain_steps": 3, "checkpoint_every": 2, "lr_max": 0.01},
}


@pytest.fixture
def tiny_config():
    return {section: dict(values) for section, values in TINY.items()}
