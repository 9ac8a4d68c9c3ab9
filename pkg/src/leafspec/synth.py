"""Synthetic 9-band plate generator with exact ground truth.

Plates mimic top-down dishes of flat thalli on a matte black background.
Per-class mean spectra encode the qualitative behaviour that motivates the
9-band pipeline: chlorotic tissue keeps near-normal visible reflectance but
drops sharply in the NIR, pigment accumulation absorbs green, and necrotic
tipburn is uniformly dark.  The visible-band contrast of chlorosis against
normal tissue is a tunable fraction of its NIR contrast
(``chlorosis_rgb_contrast``), which is what makes the 3-channel baseline
systematically blind to chlorosis while the 9-channel model is not.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .annotations import (
    AnnotationSet,
    PolygonAnnotation,
    annotation_to_labelme,
    build_semantic_mask,
    dataset_statistics,
    rasterize_polygon,
    write_statistics_csv,
)
from .labels import BACKGROUND, ClassLabel
from .raster_io import write_image, write_mask
from .spectral import BandManifest, MultiSpectralImage, SemanticMask

# Background (matte black) reflectance model.
BACKGROUND_MEAN = 0.015
BACKGROUND_SD = 0.004

# Outline perturbation: radius(theta) = r0 * (1 + sum_k a_k cos(k theta + phi_k)),
# harmonics k = 2..4, |a_k| <= _IRREGULARITY.
_IRREGULARITY = 0.12
_MAX_RADIUS_FACTOR = 1.0 + 3 * _IRREGULARITY
_N_VERTICES = 48

_RGB_BANDS = (470.0, 530.0, 620.0)
_NIR_BANDS = (780.0, 840.0)


@dataclass(frozen=True)
class SpectralSignature:
    """Per-class reflectance model.

    ``noise_sd`` is the total per-band deviation of a pixel from the class
    mean.  Part of it (``blob_sd``) is drawn once per lesion instance and
    shared by all its pixels -- biological variability that spatial
    averaging cannot remove -- and the remainder is independent pixel noise.
    """

    label: ClassLabel
    mean_reflectance: np.ndarray  # [n_bands] in [0, 1]
    noise_sd: np.ndarray  # [n_bands] total sd, >= 0
    blob_sd: np.ndarray | None = None  # [n_bands] instance-level share, <= noise_sd

    def __post_init__(self):
        mean = np.asarray(self.mean_reflectance, dtype=np.float64)
        sd = np.asarray(self.noise_sd, dtype=np.float64)
        blob = np.zeros_like(sd) if self.blob_sd is None else np.asarray(
            self.blob_sd, dtype=np.float64
        )
        object.__setattr__(self, "mean_reflectance", mean)
        object.__setattr__(self, "noise_sd", sd)
        object.__setattr__(self, "blob_sd", blob)
        if not (mean.shape == sd.shape == blob.shape):
            raise ValueError("mean, noise, and blob vectors must have the same length")
        if mean.min() < 0 or mean.max() > 1:
            raise ValueError("mean reflectance must lie in [0, 1]")
        if sd.min() < 0:
            raise ValueError("noise_sd must be non-negative")
        if (blob < 0).any() or (blob > sd + 1e-12).any():
            raise ValueError("blob_sd must lie in [0, noise_sd] per band")

    @property
    def pixel_sd(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.noise_sd**2 - self.blob_sd**2, 0.0))


def default_signatures(
    manifest: BandManifest, chlorosis_rgb_contrast: float = 0.4
) -> dict[ClassLabel, SpectralSignature]:
    """Per-class signatures for the canonical 9-band manifest.

    Guarantees, by construction:
      * chlorosis NIR (780/840 nm) below normal NIR;
      * chlorosis visible bands elevated over normal, with mean 470/530/620
        gap equal to ``chlorosis_rgb_contrast`` times the mean NIR gap;
      * pigment accumulation 530 nm below normal (green absorption);
      * tipburn at or below every other class in every band.
    """
    if manifest.wavelengths_nm != BandManifest.default().wavelengths_nm:
        raise ValueError(
            "default signatures are defined for the canonical 9-band manifest; "
            f"got bands {manifest.wavelengths_nm}"
        )
    if not 0.0 <= chlorosis_rgb_contrast <= 1.0:
        raise ValueError("chlorosis_rgb_contrast must be in [0, 1]")

    #              470   530   570   620   660   700   740   780   840
    normal = np.array([0.08, 0.42, 0.30, 0.10, 0.08, 0.35, 0.55, 0.65, 0.68])
    chlorosis = normal.copy()
    chlorosis[[6, 7, 8]] -= (0.10, 0.18, 0.18)  # NIR drop
    nir_gap = float(np.mean([normal[7] - chlorosis[7], normal[8] - chlorosis[8]]))
    # Distribute the visible-band gap over blue/green/red (yellowing pushes
    # the red band hardest); weights average to 1 so the mean gap is exact.
    chlorosis[[0, 1, 3]] += chlorosis_rgb_contrast * nir_gap * np.array([0.4, 1.0, 1.6])
    chlorosis[2] += 0.12  # yellow-green shoulder
    chlorosis[4] += 0.08
    chlorosis[5] -= 0.04
    pigment = np.array([0.07, 0.18, 0.15, 0.22, 0.25, 0.30, 0.45, 0.50, 0.52])
    tipburn = np.full(9, 0.045)

    # Vegetation variability: most of the visible-band deviation is drawn
    # once per lesion instance (pigment concentration differs plant to
    # plant), so an RGB-only model cannot average it away and the chlorosis
    # gap sits near the instance noise floor.  NIR deviation is mostly
    # per-pixel (structural reflectance is stable), leaving the NIR gap many
    # sigma wide for the 9-band model.
    veg_total = np.array([0.055] * 6 + [0.03] * 3)
    veg_blob = np.array([0.05] * 6 + [0.01] * 3)
    tip_total, tip_blob = np.full(9, 0.010), np.full(9, 0.004)
    sigs = {
        ClassLabel.NORMAL: SpectralSignature(ClassLabel.NORMAL, normal, veg_total, veg_blob),
        ClassLabel.CHLOROSIS: SpectralSignature(
            ClassLabel.CHLOROSIS, chlorosis, veg_total, veg_blob
        ),
        ClassLabel.PIGMENT_ACCUM: SpectralSignature(
            ClassLabel.PIGMENT_ACCUM, pigment, veg_total, veg_blob
        ),
        ClassLabel.TIPBURN: SpectralSignature(ClassLabel.TIPBURN, tipburn, tip_total, tip_blob),
    }
    _check_signature_contract(sigs, manifest)
    return sigs


def _check_signature_contract(sigs: dict[ClassLabel, SpectralSignature], manifest: BandManifest):
    nrm = sigs[ClassLabel.NORMAL].mean_reflectance
    chl = sigs[ClassLabel.CHLOROSIS].mean_reflectance
    pig = sigs[ClassLabel.PIGMENT_ACCUM].mean_reflectance
    tip = sigs[ClassLabel.TIPBURN].mean_reflectance
    nir = [manifest.index_of(w) for w in _NIR_BANDS]
    rgb = [manifest.index_of(w) for w in _RGB_BANDS]
    g = manifest.index_of(530.0)
    if not (chl[nir] < nrm[nir]).all():
        raise AssertionError("chlorosis must lose NIR reflectance vs normal")
    if not pig[g] < nrm[g]:
        raise AssertionError("pigment accumulation must absorb at 530 nm")
    for other in (nrm, chl, pig):
        if not (tip <= other).all():
            raise AssertionError("tipburn must be darkest in every band")
    rgb_gap = float(np.mean(np.abs(chl[rgb] - nrm[rgb])))
    nir_gap = float(np.mean(nrm[nir] - chl[nir]))
    if rgb_gap > 0.5 * nir_gap:
        raise AssertionError("chlorosis RGB contrast exceeds half its NIR contrast")


@dataclass(frozen=True)
class DefectSpec:
    label: ClassLabel
    count_range: tuple[int, int]
    radius_range: tuple[float, float]  # px


@dataclass(frozen=True)
class PlateSpec:
    n_thalli: int = 4
    thallus_radius_px: tuple[float, float] = (80.0, 115.0)
    defects: tuple[DefectSpec, ...] = ()
    day: int = 17
    rng_seed: int = 0
    frame_size: int = 640

    def __post_init__(self):
        if self.n_thalli < 0:
            raise ValueError("n_thalli must be >= 0")
        lo, hi = self.thallus_radius_px
        if lo <= 0 or hi < lo:
            raise ValueError(f"bad thallus radius range ({lo}, {hi})")
        if hi * _MAX_RADIUS_FACTOR * 2 > self.frame_size:
            raise ValueError("thalli cannot fit within the frame")
        for d in self.defects:
            if d.count_range[0] < 0 or d.count_range[1] < d.count_range[0]:
                raise ValueError(f"bad defect count range {d.count_range}")
            if d.radius_range[0] <= 0 or d.radius_range[1] < d.radius_range[0]:
                raise ValueError(f"bad defect radius range {d.radius_range}")
            if d.radius_range[1] * _MAX_RADIUS_FACTOR >= lo * (1 - _IRREGULARITY):
                raise ValueError(
                    f"{d.label.name} blobs (radius up to {d.radius_range[1]}) "
                    "would not fit inside the smallest thallus"
                )


def default_plate_spec(frame_size: int = 640, seed: int = 0, day: int = 17) -> PlateSpec:
    """A plate spec with lesion scales proportional to the frame."""
    f = frame_size
    return PlateSpec(
        n_thalli=4,
        thallus_radius_px=(0.125 * f, 0.18 * f),
        defects=(
            DefectSpec(ClassLabel.CHLOROSIS, (2, 4), (0.035 * f, 0.065 * f)),
            DefectSpec(ClassLabel.PIGMENT_ACCUM, (2, 4), (0.035 * f, 0.065 * f)),
            DefectSpec(ClassLabel.TIPBURN, (2, 3), (0.030 * f, 0.050 * f)),
        ),
        day=day,
        rng_seed=seed,
        frame_size=f,
    )


@dataclass
class _Blob:
    cx: float
    cy: float
    r0: float
    amps: np.ndarray
    phases: np.ndarray

    def radius_at(self, theta: np.ndarray) -> np.ndarray:
        r = np.full_like(np.asarray(theta, dtype=np.float64), self.r0)
        for k, (a, p) in enumerate(zip(self.amps, self.phases), start=2):
            r = r + self.r0 * a * np.cos(k * theta + p)
        return r

    def polygon(self, frame_size: int) -> np.ndarray:
        theta = np.linspace(0.0, 2 * np.pi, _N_VERTICES, endpoint=False)
        r = self.radius_at(theta)
        x = np.clip(self.cx + r * np.cos(theta), 0.0, np.nextafter(frame_size, 0))
        y = np.clip(self.cy + r * np.sin(theta), 0.0, np.nextafter(frame_size, 0))
        return np.stack([x, y], axis=1)


def _sample_blob(rng: np.random.Generator, cx: float, cy: float, r0: float) -> _Blob:
    amps = rng.uniform(0.0, _IRREGULARITY, size=3)
    phases = rng.uniform(0.0, 2 * np.pi, size=3)
    return _Blob(cx=cx, cy=cy, r0=r0, amps=amps, phases=phases)


def _place_thalli(rng: np.random.Generator, spec: PlateSpec) -> list[_Blob]:
    thalli: list[_Blob] = []
    margin = spec.thallus_radius_px[1] * _MAX_RADIUS_FACTOR
    for _ in range(spec.n_thalli):
        r0 = rng.uniform(*spec.thallus_radius_px)
        placed = None
        for _attempt in range(200):
            cx = rng.uniform(margin, spec.frame_size - margin)
            cy = rng.uniform(margin, spec.frame_size - margin)
            ok = all(
                np.hypot(cx - t.cx, cy - t.cy) > (r0 + t.r0) * _MAX_RADIUS_FACTOR
                for t in thalli
            )
            if ok:
                placed = (cx, cy)
                break
        if placed is None:  # crowded plate: allow overlap rather than fail
            placed = (rng.uniform(margin, spec.frame_size - margin),
                      rng.uniform(margin, spec.frame_size - margin))
        thalli.append(_sample_blob(rng, placed[0], placed[1], r0))
    return thalli


def _day_factor(day: int) -> float:
    return float(np.clip(day / 17.0, 0.0, 1.0))


def gen_plate(
    spec: PlateSpec, signatures: dict[ClassLabel, SpectralSignature], manifest: BandManifest
) -> tuple[MultiSpectralImage, SemanticMask, AnnotationSet]:
    """Generate one plate: image, exact mask, and the generating polygons.

    Deterministic given ``spec.rng_seed``.  Chlorosis/pigment blobs fall
    inside a thallus; tipburn blobs are centred on the thallus outline so
    lesions start at the leaf edge.  The ``day`` scalar linearly scales
    defect count and size (day 17 = full expression).
    """
    rng = np.random.default_rng(spec.rng_seed)
    n_bands = manifest.count
    for sig in signatures.values():
        if len(sig.mean_reflectance) != n_bands:
            raise ValueError("signature length does not match manifest")

    thalli = _place_thalli(rng, spec)
    polygons = [
        PolygonAnnotation(ClassLabel.NORMAL, t.polygon(spec.frame_size)) for t in thalli
    ]

    f = _day_factor(spec.day)
    for thallus in thalli:
        for d in spec.defects:
            count = int(round(rng.integers(d.count_range[0], d.count_range[1] + 1) * f))
            for _ in range(count):
                r0 = max(2.0, rng.uniform(*d.radius_range) * f)
                theta = rng.uniform(0.0, 2 * np.pi)
                if d.label == ClassLabel.TIPBURN:
                    rim = float(thallus.radius_at(np.array([theta]))[0])
                    cx = thallus.cx + rim * np.cos(theta)
                    cy = thallus.cy + rim * np.sin(theta)
                else:
                    reach = (thallus.r0 * (1 - _IRREGULARITY)) - r0 * _MAX_RADIUS_FACTOR
                    reach = max(reach, 0.0)
                    rad = reach * np.sqrt(rng.uniform())
                    cx = thallus.cx + rad * np.cos(theta)
                    cy = thallus.cy + rad * np.sin(theta)
                blob = _sample_blob(rng, cx, cy, r0)
                polygons.append(PolygonAnnotation(d.label, blob.polygon(spec.frame_size)))

    sample_id = f"plate_{spec.rng_seed:06d}"
    ann = AnnotationSet(
        sample_id=sample_id, image_size=(spec.frame_size, spec.frame_size), polygons=polygons
    )
    mask = build_semantic_mask(ann)

    # Per-pixel instance ownership, following the same precedence as
    # build_semantic_mask (later polygon wins, Normal never over a defect).
    size = spec.frame_size
    owner = np.full((size, size), -1, dtype=np.int64)
    defect = np.zeros((size, size), dtype=bool)
    for i, poly in enumerate(polygons):
        m = rasterize_polygon(poly, size, size)
        if poly.label == ClassLabel.NORMAL:
            m = m & ~defect
        else:
            defect |= m
        owner[m] = i

    # One spectral offset per instance (blob-level variability, bounded at
    # two sigma) plus independent pixel noise; the background is offset-free.
    if polygons:
        raw_offsets = np.stack([rng.normal(0.0, signatures[p.label].blob_sd)
                                for p in polygons])
        bounds = np.stack([2.0 * signatures[p.label].blob_sd for p in polygons])
        blob_offsets = np.clip(raw_offsets, -bounds, bounds)
    else:
        blob_offsets = np.zeros((0, n_bands))
    mean_map = np.empty((n_bands, size, size))
    pixel_sd_map = np.empty((n_bands, size, size))
    mean_map[:] = BACKGROUND_MEAN
    pixel_sd_map[:] = BACKGROUND_SD
    owned = owner >= 0
    if owned.any():
        classes = np.array([int(p.label) for p in polygons], dtype=np.int64)
        mean_lut = np.stack([signatures[ClassLabel(c)].mean_reflectance for c in range(4)])
        pixel_sd_lut = np.stack([signatures[ClassLabel(c)].pixel_sd for c in range(4)])
        inst = owner[owned]
        mean_map[:, owned] = (mean_lut[classes[inst]] + blob_offsets[inst]).T
        pixel_sd_map[:, owned] = pixel_sd_lut[classes[inst]].T
    noise = rng.standard_normal((n_bands, size, size))
    pixels = mean_map + pixel_sd_map * noise
    np.clip(pixels, 0.0, 1.0, out=pixels)

    img = MultiSpectralImage(
        pixels.astype(np.float32), manifest, sample_id=sample_id, day=spec.day
    )
    return img, mask, ann


@dataclass
class DatasetEntry:
    sample_id: str
    image_path: str
    mask_path: str
    annotation_path: str
    seed: int


def gen_dataset(
    n: int,
    spec_template: PlateSpec,
    out_dir: str | Path,
    signatures: dict[ClassLabel, SpectralSignature] | None = None,
    manifest: BandManifest | None = None,
) -> list[DatasetEntry]:
    """Write ``n`` plates (image TIFF + band sidecar, mask PGM, LabelMe JSON),
    a dataset manifest CSV, and a class-balance report.

    Plate i uses seed ``spec_template.rng_seed + i``, so the whole dataset is
    reproducible from one seed.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    manifest = manifest or BandManifest.default()
    signatures = signatures or default_signatures(manifest)
    out_dir = Path(out_dir)
    for sub in ("images", "masks", "annotations"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    entries: list[DatasetEntry] = []
    annotation_sets = []
    for i in range(n):
        spec = replace(spec_template, rng_seed=spec_template.rng_seed + i)
        img, mask, ann = gen_plate(spec, signatures, manifest)
        image_rel = f"images/{img.sample_id}.tif"
        mask_rel = f"masks/{img.sample_id}.pgm"
        ann_rel = f"annotations/{img.sample_id}.json"
        write_image(img, out_dir / image_rel)
        write_mask(mask, out_dir / mask_rel)
        doc = annotation_to_labelme(ann, image_path=f"../{image_rel}")
        (out_dir / ann_rel).write_text(json.dumps(doc, indent=2, sort_keys=True))
        entries.append(DatasetEntry(img.sample_id, image_rel, mask_rel, ann_rel, spec.rng_seed))
        annotation_sets.append(ann)

    write_dataset_manifest(entries, out_dir / "manifest.csv")
    write_statistics_csv(dataset_statistics(annotation_sets), out_dir / "class_balance.csv")
    return entries


def write_dataset_manifest(entries: list[DatasetEntry], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "image_path", "mask_path", "annotation_path", "seed"])
        for e in entries:
            writer.writerow([e.sample_id, e.image_path, e.mask_path, e.annotation_path, e.seed])


def read_dataset_manifest(path: str | Path) -> list[DatasetEntry]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        DatasetEntry(
            sample_id=r["sample_id"],
            image_path=r["image_path"],
            mask_path=r["mask_path"],
            annotation_path=r["annotation_path"],
            seed=int(r["seed"]),
        )
        for r in rows
    ]
