import subprocess
import sys

import pytest


def harness(*args) -> subprocess.CompletedProcess:
    """Invoke the evaluation harness CLI (its external interface)."""
    return subprocess.run(
        [sys.executable, "-m", "vissyn.cli", *map(str, args)],
        capture_output=True,
        text=True,
    )


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """12 correct 96px scenes; enough for fast unit-level training."""
    corpus = tmp_path_factory.mktemp("nb") / "tiny"
    proc = harness(
        "generate", "--grammar", "face", "--count", "12", "--out", corpus,
        "--image-size", "96", "--center-sigma", "0.03", "--seed", "11",
    )
    assert proc.returncode == 0, proc.stderr
    return corpus


@pytest.fixture(scope="session")
def tiny_checkpoints(tmp_path_factory, tiny_corpus):
    """Quickly trained (low quality) checkpoints for protocol tests."""
    from vissyn_backend.training import (
        DetectorConfig,
        TrainingConfig,
        train_detector,
        train_reconstructor,
    )

    out = tmp_path_factory.mktemp("nb") / "models"
    mae_path, _ = train_reconstructor(
        tiny_corpus, TrainingConfig(epochs=2, batch_size=8, seed=1), out / "mae.pt"
    )
    det_path = train_detector(
        tiny_corpus, DetectorConfig(epochs=10, batch_size=8, seed=1), out / "det.pt"
    )
    return mae_path, det_path
