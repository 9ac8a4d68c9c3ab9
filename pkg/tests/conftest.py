import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from leafspec import BandManifest, MultiSpectralImage
from leafspec.synth import default_plate_spec, default_signatures, gen_dataset


@pytest.fixture(scope="session")
def manifest9():
    return BandManifest.default()


@pytest.fixture(scope="session")
def signatures(manifest9):
    return default_signatures(manifest9)


@pytest.fixture
def valid_image(manifest9):
    rng = np.random.default_rng(0)
    pixels = rng.random((9, 640, 640), dtype=np.float32)
    return MultiSpectralImage(pixels, manifest9, sample_id="s0")


@pytest.fixture(scope="session")
def micro_dataset(tmp_path_factory, manifest9, signatures):
    """Six 64x64 plates on disk with manifest, masks, and annotations."""
    root = tmp_path_factory.mktemp("micro")
    spec = default_plate_spec(frame_size=64, seed=11)
    gen_dataset(6, spec, root, signatures=signatures, manifest=manifest9)
    return root
