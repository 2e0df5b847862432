import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from ptner import corpus, encoder, synthetic, trainer  # noqa: E402

settings.register_profile(
    "default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def toy_corpus():
    return synthetic.make_corpus(200, seed=1)


@pytest.fixture(scope="session")
def toy_vocab(toy_corpus):
    return corpus.build_vocab(toy_corpus)


@pytest.fixture(scope="session")
def toy_config(toy_vocab):
    return encoder.preset("toy", vocab_size=len(toy_vocab), max_position=64)


@pytest.fixture
def toy_tagger(toy_config):
    return trainer.assemble_tagger(toy_config, synthetic.TAGSET, seed=0)


@pytest.fixture(scope="session")
def overfit_run(toy_corpus, toy_vocab, toy_config):
    """The 200-sentence / 30-epoch / lr 1e-3 fine-tuning run, shared by several tests."""
    import time

    t0 = time.perf_counter()
    model = trainer.assemble_tagger(toy_config, synthetic.TAGSET, seed=0)
    cfg = trainer.TrainConfig(epochs=30, learning_rate=1e-3, max_len=64)
    history = trainer.finetune(model, toy_corpus, cfg, toy_vocab)
    model.eval()
    return model, history, time.perf_counter() - t0
