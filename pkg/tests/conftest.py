import numpy as np
import pytest

from winseg.encoders import EncoderConfig, reference_encoder
from winseg.synthetic import generate_toy_dataset

# Small profile keeps per-test forwards cheap; the default profile is used
# where a criterion pins the 15x15 grid.
SMALL_CONFIG = EncoderConfig(input_resolution=48, patch_size=8, grid=(6, 6),
                             d_image=32, d_text=48)


@pytest.fixture(scope="session")
def small_encoder():
    return reference_encoder(seed=0, config=SMALL_CONFIG)


@pytest.fixture(scope="session")
def default_encoder():
    return reference_encoder(seed=0)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("toyset")
    generate_toy_dataset(root, seed=0)
    return str(root)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_image(rng, encoder):
    res = encoder.config.input_resolution
    return rng.standard_normal((3, res, res))
