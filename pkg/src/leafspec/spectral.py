"""Core raster types: band manifests, multi-spectral images, semantic masks.

The band manifest is the spectral-ordering contract of the whole pipeline:
channel 1 is always 470 nm and channel 2 always 530 nm, so that every band
keeps a fixed physical meaning from ingestion through training and inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .labels import BACKGROUND, N_CLASSES

CANONICAL_SIZE = 640

# Default 9-band manifest (nm), visible through near-infrared.  The three
# bands used for the RGB baseline (470/530/620) are always present.
DEFAULT_WAVELENGTHS = (470, 530, 570, 620, 660, 700, 740, 780, 840)
RGB_WAVELENGTHS = (470, 530, 620)

# Anchor wavelengths of the fixed ordering contract.
_BAND1_NM = 470.0
_BAND2_NM = 530.0


@dataclass(frozen=True)
class BandManifest:
    """Ordered mapping from 1-based channel index to center wavelength (nm)."""

    wavelengths_nm: tuple[float, ...]

    def __post_init__(self):
        wl = tuple(float(w) for w in self.wavelengths_nm)
        object.__setattr__(self, "wavelengths_nm", wl)
        if len(wl) < 1:
            raise ValueError("manifest must contain at least one band")
        if any(b <= a for a, b in zip(wl, wl[1:])):
            raise ValueError("wavelengths must be strictly increasing")

    @property
    def count(self) -> int:
        return len(self.wavelengths_nm)

    @property
    def bands(self) -> list[tuple[int, float]]:
        """(index, wavelength) pairs with contiguous 1-based indices."""
        return [(i + 1, w) for i, w in enumerate(self.wavelengths_nm)]

    def index_of(self, wavelength_nm: float) -> int:
        """0-based channel index of a wavelength; KeyError if absent."""
        for i, w in enumerate(self.wavelengths_nm):
            if w == float(wavelength_nm):
                return i
        raise KeyError(f"manifest has no {wavelength_nm} nm band")

    @classmethod
    def default(cls) -> "BandManifest":
        return cls(DEFAULT_WAVELENGTHS)

    @classmethod
    def rgb(cls) -> "BandManifest":
        return cls(RGB_WAVELENGTHS)


@dataclass
class MultiSpectralImage:
    """A [C, H, W] reflectance raster tied to a band manifest.

    Construction is permissive; ``validate_image`` reports contract
    violations instead of raising, so malformed inputs can be inspected.
    """

    pixels: np.ndarray
    manifest: BandManifest
    sample_id: str = ""
    day: int | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3:
            raise ValueError(f"pixels must be [C, H, W], got shape {self.pixels.shape}")

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


@dataclass
class SemanticMask:
    """Pixel-level class raster [H, W]; codes are the four classes plus 255."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise ValueError(f"labels must be [H, W], got shape {self.labels.shape}")
        permitted = set(range(N_CLASSES)) | {BACKGROUND}
        present = set(np.unique(self.labels).tolist())
        if not present <= permitted:
            raise ValueError(f"mask contains forbidden codes {sorted(present - permitted)}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def class_pixel_counts(self) -> dict[int, int]:
        """Pixel count per class code (background excluded)."""
        return {c: int(np.count_nonzero(self.labels == c)) for c in range(N_CLASSES)}


def validate_image(img: MultiSpectralImage, expected_size: int = CANONICAL_SIZE) -> list[str]:
    """Check an image against the pipeline contract.

    Returns a list of human-readable violations; an empty list means valid.
    """
    report: list[str] = []
    wl = img.manifest.wavelengths_nm
    if img.channels != img.manifest.count:
        report.append(
            f"channel-count mismatch: raster has {img.channels} channels, "
            f"manifest lists {img.manifest.count} bands"
        )
    if img.manifest.count not in (3, 9):
        report.append(f"manifest has {img.manifest.count} bands; pipeline expects 3 or 9")
    if len(wl) >= 1 and wl[0] != _BAND1_NM:
        report.append(f"band 1 must be {_BAND1_NM:g} nm, got {wl[0]:g} nm")
    if len(wl) >= 2 and wl[1] != _BAND2_NM:
        report.append(f"band 2 must be {_BAND2_NM:g} nm, got {wl[1]:g} nm")
    if not np.isfinite(img.pixels).all():
        n_bad = int(np.count_nonzero(~np.isfinite(img.pixels)))
        report.append(f"non-finite values: {n_bad} NaN/Inf pixels")
    else:
        lo, hi = float(img.pixels.min()), float(img.pixels.max())
        if lo < 0.0 or hi > 1.0:
            report.append(f"values outside [0, 1]: range [{lo:.4g}, {hi:.4g}]")
    if img.height != expected_size or img.width != expected_size:
        report.append(
            f"wrong spatial size: {img.height}x{img.width}, expected "
            f"{expected_size}x{expected_size}"
        )
    return report


@dataclass
class NormalizeResult:
    image: MultiSpectralImage
    degenerate_bands: list[int] = field(default_factory=list)  # 0-based indices


def normalize(
    raw: np.ndarray,
    manifest: BandManifest,
    mode: str = "global_scale",
    divisor: float = 65535.0,
    sample_id: str = "",
    day: int | None = None,
) -> NormalizeResult:
    """Map raw sensor counts [C, H, W] into reflectance in [0, 1].

    ``global_scale`` divides by ``divisor`` (sensor bit depth) and clamps,
    preserving inter-band ratios.  ``per_band_minmax`` maps each band's min
    to 0 and max to 1; a constant band becomes all zeros and is flagged.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3:
        raise ValueError(f"raw raster must be [C, H, W], got shape {raw.shape}")
    if not np.isfinite(raw).all():
        raise ValueError("raw raster contains non-finite values")

    degenerate: list[int] = []
    if mode == "global_scale":
        if divisor <= 0:
            raise ValueError(f"divisor must be > 0, got {divisor}")
        out = np.clip(raw / divisor, 0.0, 1.0)
    elif mode == "per_band_minmax":
        out = np.empty_like(raw)
        for c in range(raw.shape[0]):
            lo, hi = raw[c].min(), raw[c].max()
            if hi == lo:
                out[c] = 0.0
                degenerate.append(c)
            else:
                out[c] = (raw[c] - lo) / (hi - lo)
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")

    img = MultiSpectralImage(out.astype(np.float32), manifest, sample_id=sample_id, day=day)
    return NormalizeResult(image=img, degenerate_bands=degenerate)


def extract_rgb(img: MultiSpectralImage) -> np.ndarray:
    """Pull the 620/530/470 nm planes as a [3, H, W] display raster (R, G, B).

    Values are copied unchanged.  Raises KeyError naming a missing band.
    """
    try:
        idx = [img.manifest.index_of(w) for w in (620.0, 530.0, 470.0)]
    except KeyError as exc:
        raise KeyError(f"cannot extract RGB: {exc.args[0]}") from None
    return img.pixels[idx].copy()


def select_bands(img: MultiSpectralImage, wavelengths_nm=RGB_WAVELENGTHS) -> MultiSpectralImage:
    """Restack a subset of bands (in manifest order) into a new image.

    Used to derive the 3-channel baseline input from the 9-band raster.
    """
    wl = tuple(sorted(float(w) for w in wavelengths_nm))
    idx = [img.manifest.index_of(w) for w in wl]
    return MultiSpectralImage(
        img.pixels[idx].copy(), BandManifest(wl), sample_id=img.sample_id, day=img.day
    )
