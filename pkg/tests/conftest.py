
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

torch.set_num_threads(1)

TEMPLATES = [
    "walk-forward",
    "turn-left",
    "turn-right",
    "look-down",
    "look-up",
    "crouch",
    "raise-left-hand",
    "raise-right-hand",
]


@pytest.fixture
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


@pytest.fixture(autouse=True)
def _run_root(tmp_path, monkeypatch):
    monkeypatch.setenv("EGOJOINT_RUN_ROOT", str(tmp_path / "runs"))


@pytest.fixture(scope="session")
def skeleton():
    from egojoint.kinematics import default_skeleton

    return default_skeleton()


@pytest.fixture(scope="session")
def toy_samples():
    from egojoint.synth import generate_dataset

    return generate_dataset(TEMPLATES, 8, scene_seed=0, seed=0)


@pytest.fixture(scope="session")
def toy_data_path(tmp_path_factory, toy_samples):
    from egojoint.synth import write_dataset

    p = tmp_path_factory.mktemp("data") / "toy.egtw"
    write_dataset(toy_samples, p)
    return p
