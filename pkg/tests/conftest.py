import numpy as np
import pytest

from src.encoders import ClipFeatureSequence, ModelConfig, TokenSequence, init_params
from src.proposal_map import TemporalInterval
from src.synthbench import GroundingSample, IntervalComponent, ScenarioSpec, generate


@pytest.fixture
def tiny_spec():
    return ScenarioSpec(
        name="tiny",
        n_concepts=3,
        interval_prior=[IntervalComponent(0.25, 0.5, 0.02), IntervalComponent(0.75, 0.5, 0.02)],
        noise_sigma=0.3,
        n_clips=4,
        dim=4,
        vocab_size=8,
        n_distractor_tokens=1,
        seed=7,
    )


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(n_clips=4, dim_v=4, dim_s=4, vocab_size=8, bm_samples=4)


@pytest.fixture
def tiny_dataset(tiny_spec):
    return generate(tiny_spec, 12)


@pytest.fixture
def gradcheck_case():
    """Random three-clip sample and parameters with non-zero per-cell head biases."""
    cfg = ModelConfig(n_clips=3, dim_v=4, dim_s=4, vocab_size=6, bm_samples=4)
    rng = np.random.default_rng(11)
    params = init_params(cfg, seed=5)
    for head in ("visual_head", "fusion_head"):
        params[f"{head}.cell_bias"] = 0.1 * rng.standard_normal(cfg.grid.size)
    sample = GroundingSample(
        video=ClipFeatureSequence(rng.standard_normal((3, 4))),
        query=TokenSequence([2, 4, 2]),
        gt=TemporalInterval(0.1, 0.6),
    )
    return sample, cfg, params
