import pytest

from modules.settings_manager import profile_config
from modules.synth import synth_toy_dataset

TOY_SIZE = 32


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the slow toy experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config():
    """Smallest networks that still run on 32x32 crops."""
    return profile_config(
        "desk",
        generator={"base_width": 4, "n_residual_blocks": 1},
        discriminator={"base_width": 4, "n_layers": 2},
        augment={"load_size": 36, "crop_size": TOY_SIZE},
        epochs_total=2,
        pool_capacity=4,
        device="cpu",
        seed=3,
    )


@pytest.fixture
def toy_dataset(tmp_path):
    """2 pairs, 3 unpaired images per domain and 2 held-out pairs, 32x32."""
    root = tmp_path / "toy"
    manifest = synth_toy_dataset(n_paired=2, n_unpaired=3, image_size=TOY_SIZE, seed=7, out_dir=root, n_test=2)
    return root, manifest
