import numpy as np
import pytest

from histoseg.fixture import make_fixture
from histoseg.mask_codec import RawMask, SuperclassTable


@pytest.fixture
def basic_table() -> SuperclassTable:
    return SuperclassTable({"1": 1, "2": 2, "3": 3})


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "fixture"
    make_fixture(root, n_single=8, n_multi=2, side=32, seed=0)
    return root


def random_raw_mask(rng: np.random.Generator, max_side: int = 16) -> RawMask:
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    return RawMask(
        ch1=rng.integers(0, 256, (h, w), dtype=np.uint8),
        ch2=rng.integers(0, 6, (h, w), dtype=np.uint8),
        ch3=rng.integers(0, 6, (h, w), dtype=np.uint8),
    )
