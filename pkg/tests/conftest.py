import pytest

from damagefv import pipeline
from damagefv.synth import SceneSpec, generate_corpus

# small but complete settings for the end-to-end tests
FAST = dict(gmm_k=8, crf_iters=3, unary_epochs=100, svm_epochs=200, gmm_max_iters=100)


@pytest.fixture(scope="session")
def corpus12(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus12")
    return generate_corpus(12, SceneSpec().noise_free(), 0, out)


@pytest.fixture(scope="session")
def trained(corpus12, tmp_path_factory):
    model_dir = tmp_path_factory.mktemp("models")
    cfg = pipeline.load_config(overrides=dict(FAST, manifest=corpus12, model_dir=str(model_dir)))
    pipeline.run_training(cfg)
    return cfg


@pytest.fixture(scope="session")
def trained_default(tmp_path_factory):
    # default config on a corpus large enough to separate all three classes
    out = tmp_path_factory.mktemp("corpus30")
    manifest = generate_corpus(30, SceneSpec().noise_free(), 0, out)
    cfg = pipeline.load_config(overrides=dict(manifest=manifest, model_dir=str(out / "models")))
    pipeline.run_training(cfg)
    return cfg
