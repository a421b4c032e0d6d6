import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from agtfusion.data import EmotionLabel, generate_synthetic

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def tiny_dataset():
    """90 labeled samples over three classes, widths (6, 5, 4)."""
    counts = {EmotionLabel.WORRY: 30, EmotionLabel.HAPPY: 30, EmotionLabel.SAD: 30}
    return generate_synthetic(counts, widths=(6, 5, 4), noise_sigma=0.2, seed=11)


@pytest.fixture(scope="session")
def six_class_dataset():
    counts = {lab: 12 for lab in EmotionLabel}
    return generate_synthetic(counts, widths=(8, 8, 8), noise_sigma=0.2, conflict_rate=0.1, seed=5)


@pytest.fixture(scope="session")
def small_hparams():
    return {"d_model": 8, "n_heads": 2, "d_ff": 8, "n_layers": 1, "hidden": 8}


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """criterion number -> (passed, detail); printed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(ACCEPTANCE_KEY, None)
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(log):
        passed, detail = log[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
