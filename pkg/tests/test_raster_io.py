import numpy as np
import pytest

from leafspec import BandManifest, MultiSpectralImage, SemanticMask
from leafspec.raster_io import (
    manifest_sidecar_path,
    read_image,
    read_manifest,
    read_mask,
    write_image,
    write_manifest,
    write_mask,
)


def test_float32_tiff_round_trip_exact(tmp_path, manifest9):
    rng = np.random.default_rng(3)
    img = MultiSpectralImage(rng.random((9, 32, 32), dtype=np.float32), manifest9, "a")
    path = tmp_path / "a.tif"
    write_image(img, path)
    back = read_image(path)
    assert (back.pixels == img.pixels).all()
    assert back.manifest.wavelengths_nm == manifest9.wavelengths_nm
    assert back.sample_id == "a"


def test_uint16_tiff_round_trip(tmp_path, manifest9):
    img = MultiSpectralImage(
        np.linspace(0, 1, 9 * 16 * 16, dtype=np.float32).reshape(9, 16, 16), manifest9
    )
    path = tmp_path / "b.tif"
    write_image(img, path, dtype="uint16")
    back = read_image(path)
    assert back.pixels.max() <= 1.0
    assert np.abs(back.pixels - img.pixels).max() <= 0.5 / 65535 + 1e-7


def test_write_is_deterministic(tmp_path, manifest9):
    img = MultiSpectralImage(
        np.random.default_rng(0).random((9, 16, 16), dtype=np.float32), manifest9
    )
    write_image(img, tmp_path / "x.tif")
    write_image(img, tmp_path / "y.tif")
    assert (tmp_path / "x.tif").read_bytes() == (tmp_path / "y.tif").read_bytes()


def test_manifest_sidecar_format(tmp_path, manifest9):
    path = tmp_path / "m.bands.txt"
    write_manifest(manifest9, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "1 470" and lines[1] == "2 530"
    assert read_manifest(path).wavelengths_nm == manifest9.wavelengths_nm


def test_manifest_rejects_gap_in_indices(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 470\n3 620\n")
    with pytest.raises(ValueError):
        read_manifest(path)


def test_mask_pgm_round_trip(tmp_path):
    labels = np.full((16, 16), 255, np.uint8)
    labels[2:5, 2:5] = 1
    labels[8:10, 8:10] = 3
    path = tmp_path / "m.pgm"
    write_mask(SemanticMask(labels), path)
    assert (read_mask(path).labels == labels).all()


def test_sidecar_path_convention():
    assert str(manifest_sidecar_path("d/img.tif")).endswith("d/img.bands.txt")
