import numpy as np
import pytest

from stssm.model import ModelConfig, weight_shapes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_config(**overrides) -> ModelConfig:
    """Smallest config that exercises every weight tensor."""
    base = dict(blocks=2, dim=8, state_dim=3, tubelet=(2, 8, 8), frames=4,
                height=16, width=16, channels=1, num_classes=3, delta_rank=2,
                dtype="f64")
    base.update(overrides)
    return ModelConfig(**base)


def toy_config(**overrides) -> ModelConfig:
    """The synthetic-training model size."""
    base = dict(blocks=2, dim=32, state_dim=8, tubelet=(2, 8, 8), frames=8,
                height=32, width=32, channels=1, num_classes=4, dtype="f32")
    base.update(overrides)
    return ModelConfig(**base)


def random_weights(cfg: ModelConfig, rng: np.random.Generator, scale: float = 0.4) -> dict:
    """Weights sized for gradient checks: larger than training init so no
    parameter's influence on the loss drowns in finite-difference noise."""
    w = {}
    for name, shape in weight_shapes(cfg).items():
        leaf = name.split(".")[-1]
        if leaf == "a_log":
            w[name] = np.log(np.arange(1, cfg.state_dim + 1))[None, :] + 0.3 * rng.normal(size=shape)
        elif leaf == "dt_bias":
            w[name] = np.log(np.expm1(rng.uniform(0.05, 0.5, size=shape)))
        elif leaf == "gamma":
            w[name] = 1.0 + 0.2 * rng.normal(size=shape)
        else:
            w[name] = scale * rng.normal(size=shape)
        w[name] = w[name].astype(cfg.np_dtype)
    return w
