import os
import sys
from pathlib import Path

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

sys.path.insert(0, str(Path(__file__).parent))

import pytest

import helpers


def _quiet_transformers():
    import transformers

    transformers.utils.logging.set_verbosity_error()
    try:
        transformers.utils.logging.disable_progress_bar()
    except Exception:
        pass


@pytest.fixture(scope="session")
def tiny_encoder(tmp_path_factory) -> str:
    """Small randomly initialized encoder + tokenizer, saved to disk."""
    _quiet_transformers()
    dest = tmp_path_factory.mktemp("tiny-encoder")
    return helpers.build_tiny_encoder(dest)


@pytest.fixture(scope="session")
def separable_corpus():
    return helpers.make_separable_corpus(n=50, seed=7)


@pytest.fixture(scope="session")
def overfit_run(tiny_encoder, separable_corpus):
    """fine_tune on the separable corpus until it memorizes; shared read-only."""
    from fewner.tagger import EncoderHandle, TrainingConfig, fine_tune

    config = TrainingConfig(
        learning_rate=5e-3,
        epochs=20,
        batch_size=8,
        seed=42,
        checkpoints_per_run=5,
    )
    best, checkpoints = fine_tune(
        EncoderHandle(tiny_encoder), separable_corpus, separable_corpus, config
    )
    return {"best": best, "checkpoints": checkpoints, "config": config}


@pytest.fixture(scope="session")
def overfit_model(overfit_run):
    from fewner.tagger import restore_model

    return restore_model(overfit_run["best"])


@pytest.fixture(scope="session")
def viem_root():
    """Path to the public dataset release, if provided via VIEM_ROOT."""
    root = os.environ.get("VIEM_ROOT")
    if not root or not Path(root).is_dir():
        pytest.skip("public dataset release not available (set VIEM_ROOT to run)")
    return root
