import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sketchgen import models as M  # noqa: E402
from sketchgen.data import generate_dataset, split_dataset  # noqa: E402
from sketchgen.training import (ClassifierFitConfig, pretrain_encoder, pretrain_loss_classifier,  # noqa: E402
                                train_eval_classifier)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data():
    """8 classes x 6 images x 3 sketches at 32 px."""
    samples = generate_dataset(seed=5, num_classes=8, images_per_class=6, sketches_per_image=3, size=32)
    return samples, split_dataset(samples, 0.75, seed=5)


@pytest.fixture(scope="session")
def tiny_models(tiny_data):
    """Briefly pretrained, frozen encoder / loss trunk / evaluation classifier."""
    samples, split = tiny_data
    fit = ClassifierFitConfig(epochs=1, seed=0)
    enc, _ = pretrain_encoder(M.build_encoder(M.desk_scale_encoder(), 0), samples, split, fit)
    trunk, _, _, _ = pretrain_loss_classifier(M.build_feature_extractor(M.FeatureStackConfig(), 8, 0), samples, fit)
    clf, _, _, _ = train_eval_classifier(M.build_eval_classifier(M.EvalClassifierConfig(), 8, 0), samples, fit)
    return enc, trunk, clf


_ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
