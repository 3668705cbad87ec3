import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from condensesr.fixtures import write_fixture_dataset


@pytest.fixture(scope="session")
def fixture_dataset(tmp_path_factory):
    """(train_dir, val_dir) of deterministic synthetic images."""
    root = tmp_path_factory.mktemp("fixture_images")
    return write_fixture_dataset(root)
