import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from reference_data import make_all_datasets  # noqa: E402

from cwsd.corpus import write_word_dataset  # noqa: E402


@pytest.fixture(scope="session")
def reference_datasets():
    """All 20 synthesized word datasets, keyed by word."""
    return make_all_datasets()


@pytest.fixture(scope="session")
def reference_root(reference_datasets, tmp_path_factory):
    """The 20 datasets written out in the on-disk directory format."""
    root = tmp_path_factory.mktemp("data")
    for ds in reference_datasets.values():
        write_word_dataset(ds, root)
    return root
