import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_prior():
    """A quickly trained low-capacity prior (voxel size 1) for pipeline tests."""
    from deepls.grid import LatentGrid
    from deepls.training import SamplerConfig, TrainConfig, build_patch_dataset, primitive_scenes, train_prior

    scenes = primitive_scenes(40, seed=0)
    ds = build_patch_dataset(scenes, LatentGrid(1.0, 16), SamplerConfig(samples_per_shape=3000,
                                                                         uniform_per_shape=300), seed=0)
    cfg = TrainConfig(steps=1500, batch_voxels=32, samples_per_voxel_per_step=48, code_dim=16, hidden_dim=48)
    return train_prior(ds, cfg), scenes


_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Criterion number -> (passed, detail); printed in the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    report = config.stash.get(_ACCEPTANCE_KEY, {})
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(report):
        passed, detail = report[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
