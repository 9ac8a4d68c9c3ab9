"""On-disk formats: multi-band TIFF + plain-text manifest sidecar, mask PGM.

TIFF layout: one page per band, page order == band order, 32-bit float or
16-bit unsigned.  The sidecar has one line per band: ``<index> <wavelength_nm>``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageSequence

from .labels import BACKGROUND, N_CLASSES
from .spectral import BandManifest, MultiSpectralImage, SemanticMask


def manifest_sidecar_path(image_path: str | Path) -> Path:
    return Path(image_path).with_suffix(".bands.txt")


def write_manifest(manifest: BandManifest, path: str | Path) -> None:
    lines = [f"{i} {w:g}" for i, w in manifest.bands]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> BandManifest:
    entries: list[tuple[int, float]] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        idx_s, wl_s = line.split()
        entries.append((int(idx_s), float(wl_s)))
    entries.sort()
    indices = [i for i, _ in entries]
    if indices != list(range(1, len(entries) + 1)):
        raise ValueError(f"manifest indices must be contiguous 1..N, got {indices}")
    return BandManifest(tuple(w for _, w in entries))


def write_image(img: MultiSpectralImage, path: str | Path, dtype: str = "float32") -> None:
    """Write a multi-band TIFF plus its manifest sidecar."""
    path = Path(path)
    if dtype == "float32":
        planes = img.pixels.astype(np.float32)
        pages = [Image.fromarray(p, mode="F") for p in planes]
    elif dtype == "uint16":
        planes = np.clip(np.rint(img.pixels * 65535.0), 0, 65535).astype(np.uint16)
        pages = [Image.fromarray(p) for p in planes]
    else:
        raise ValueError(f"unsupported dtype {dtype!r}")
    pages[0].save(path, format="TIFF", save_all=True, append_images=pages[1:])
    write_manifest(img.manifest, manifest_sidecar_path(path))


def read_image(path: str | Path, manifest: BandManifest | None = None) -> MultiSpectralImage:
    """Read a multi-band TIFF; the manifest comes from the sidecar unless given."""
    path = Path(path)
    if manifest is None:
        manifest = read_manifest(manifest_sidecar_path(path))
    with Image.open(path) as im:
        planes = [np.asarray(page) for page in ImageSequence.Iterator(im)]
    pixels = np.stack(planes).astype(np.float32)
    if pixels.dtype != np.float32 or planes[0].dtype == np.uint16:
        pixels = pixels / 65535.0
    return MultiSpectralImage(pixels, manifest, sample_id=path.stem)


def write_mask(mask: SemanticMask, path: str | Path) -> None:
    """Write a semantic mask as an 8-bit portable graymap."""
    Image.fromarray(mask.labels, mode="L").save(Path(path), format="PPM")


def read_mask(path: str | Path) -> SemanticMask:
    arr = np.asarray(Image.open(Path(path)), dtype=np.uint8)
    return SemanticMask(arr)


def mask_codes_are_valid(arr: np.ndarray) -> bool:
    permitted = set(range(N_CLASSES)) | {BACKGROUND}
    return set(np.unique(arr).tolist()) <= permitted
