"""Dataset access for training and evaluation.

Reads the dataset manifest CSV and serves images (9-band or the 3-band
subset), semantic masks, and per-instance targets derived from the polygon
annotations.  Band order always follows the manifest sidecar, keeping the
spectral-ordering contract intact between generation, training, and
inference.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import AnnotationSet, parse_labelme, rasterize_polygon
from .labels import ClassLabel
from .raster_io import read_image, read_mask
from .spectral import MultiSpectralImage, SemanticMask, select_bands
from .synth import DatasetEntry, read_dataset_manifest


@dataclass
class SampleTargets:
    boxes_xywh: np.ndarray  # [n, 4] pixel centers/sizes
    classes: np.ndarray  # [n] int
    instance_masks: np.ndarray  # [n, H, W] bool


def targets_from_annotations(ann: AnnotationSet) -> SampleTargets:
    h, w = ann.image_size
    boxes, classes, masks = [], [], []
    for poly in ann.polygons:
        m = rasterize_polygon(poly, h, w)
        if not m.any():
            continue
        rows, cols = np.nonzero(m)
        x0, x1 = cols.min(), cols.max() + 1
        y0, y1 = rows.min(), rows.max() + 1
        boxes.append([(x0 + x1) / 2.0, (y0 + y1) / 2.0, float(x1 - x0), float(y1 - y0)])
        classes.append(int(poly.label))
        masks.append(m)
    if not boxes:
        return SampleTargets(
            boxes_xywh=np.zeros((0, 4)), classes=np.zeros(0, dtype=np.int64),
            instance_masks=np.zeros((0, h, w), dtype=bool),
        )
    return SampleTargets(
        boxes_xywh=np.asarray(boxes, dtype=np.float64),
        classes=np.asarray(classes, dtype=np.int64),
        instance_masks=np.stack(masks),
    )


class PlateDataset:
    """Manifest-backed dataset with optional in-memory caching."""

    def __init__(self, manifest_path: str | Path, cache: bool = True):
        self.root = Path(manifest_path).parent
        self.entries: dict[str, DatasetEntry] = {
            e.sample_id: e for e in read_dataset_manifest(manifest_path)
        }
        self.cache_enabled = cache
        self._images: dict[str, MultiSpectralImage] = {}
        self._masks: dict[str, SemanticMask] = {}
        self._annotations: dict[str, AnnotationSet] = {}
        self._targets: dict[str, SampleTargets] = {}

    @property
    def sample_ids(self) -> list[str]:
        return list(self.entries.keys())

    def __len__(self) -> int:
        return len(self.entries)

    def image(self, sample_id: str) -> MultiSpectralImage:
        if sample_id in self._images:
            return self._images[sample_id]
        img = read_image(self.root / self.entries[sample_id].image_path)
        if self.cache_enabled:
            self._images[sample_id] = img
        return img

    def image_pixels(self, sample_id: str, channels: int) -> np.ndarray:
        """[channels, H, W] float32 pixels; 3 selects the 470/530/620 bands."""
        img = self.image(sample_id)
        if channels == img.channels:
            return img.pixels
        if channels == 3:
            return select_bands(img).pixels
        raise ValueError(f"cannot serve {channels} channels from a {img.channels}-band image")

    def mask(self, sample_id: str) -> SemanticMask:
        if sample_id in self._masks:
            return self._masks[sample_id]
        mask = read_mask(self.root / self.entries[sample_id].mask_path)
        if self.cache_enabled:
            self._masks[sample_id] = mask
        return mask

    def annotations(self, sample_id: str) -> AnnotationSet:
        if sample_id in self._annotations:
            return self._annotations[sample_id]
        text = (self.root / self.entries[sample_id].annotation_path).read_text()
        ann = parse_labelme(text, sample_id=sample_id).annotations
        if self.cache_enabled:
            self._annotations[sample_id] = ann
        return ann

    def targets(self, sample_id: str) -> SampleTargets:
        if sample_id in self._targets:
            return self._targets[sample_id]
        t = targets_from_annotations(self.annotations(sample_id))
        if self.cache_enabled:
            self._targets[sample_id] = t
        return t

    def frame_size(self) -> int:
        first = next(iter(self.entries))
        return self.mask(first).labels.shape[0]
