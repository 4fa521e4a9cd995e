import numpy as np
import pytest

from contseg import backbone as bb
from contseg import engine
from contseg.embeddings import EmbeddingProvider
from contseg.phantoms import make_staged_dataset, tumor_spec, two_stage_plan

TINY_CONFIG = bb.BackboneConfig(in_channels=1, enc_channels=(4, 8, 16),
                                enc_strides=(1, 2, 2), dec_channels=(8, 8),
                                kernel=3)


@pytest.fixture
def tiny_dataset():
    """Two-stage trajectory at 32x32 with a handful of samples."""
    return make_staged_dataset(two_stage_plan(),
                               tumor_spec(height=32, width=32),
                               n_per_stage=8, seed=7, n_val=2, n_test=2,
                               n_eval=4)


@pytest.fixture
def provider():
    return EmbeddingProvider("hash", 8, seed=11)


@pytest.fixture
def tiny_model(provider):
    """Stage-1 model over the three organ classes, untrained."""
    model = engine.build_model(TINY_CONFIG, embedding_dim=8,
                               provider_kind="hash", head_kernel=1,
                               hyper_hidden=16, seed=5)
    registry = model.registry.extend(["liver", "spleen", "kidney"], 1, provider)
    return engine.extend_model(model, list(registry.classes))


def stage_targets(sample):
    return {c: p.astype(np.float32) for c, p in sample.mask.planes.items()}
