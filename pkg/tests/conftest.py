import sys
from pathlib import Path

import pytest

from ct2ctpa import ingest
from ct2ctpa.phantom import PhantomSpec, generate_dataset

sys.path.insert(0, str(Path(__file__).parent))  # makes `oracles` importable


@pytest.fixture(scope="session")
def phantom_dir(tmp_path_factory) -> Path:
    """Small on-disk phantom dataset shared by ingest/training tests."""
    root = tmp_path_factory.mktemp("phantom_data")
    spec = PhantomSpec(image_size=64, n_slices=4, seed=1234, pe_lesion_probability=0.5)
    generate_dataset(spec, 6, root)
    return root


@pytest.fixture(scope="session")
def prep_dir(phantom_dir, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("prep")
    ingest.preprocess_dataset(phantom_dir, out, size=64)
    return out
