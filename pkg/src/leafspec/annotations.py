"""Polygon annotation parsing, rasterization, and dataset splitting.

Rasterization samples pixel centers under the even-odd rule, so areas of
scaled polygons converge to the analytic polygon area and self-intersecting
outlines are handled deterministically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .labels import BACKGROUND, CLASS_NAMES, ClassLabel, N_CLASSES, resolve_label
from .spectral import SemanticMask


class AnnotationError(ValueError):
    pass


@dataclass
class PolygonAnnotation:
    label: ClassLabel
    points: np.ndarray  # [N, 2] float (x, y) pixel coordinates

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise AnnotationError(f"points must be [N, 2], got shape {self.points.shape}")
        if len(self.points) < 3:
            raise AnnotationError(f"polygon needs >= 3 points, got {len(self.points)}")
        self.label = ClassLabel(self.label)


@dataclass
class AnnotationSet:
    sample_id: str
    image_size: tuple[int, int]  # (H, W)
    polygons: list[PolygonAnnotation] = field(default_factory=list)

    def __post_init__(self):
        h, w = self.image_size
        for poly in self.polygons:
            x, y = poly.points[:, 0], poly.points[:, 1]
            if x.min() < 0 or y.min() < 0 or x.max() >= w or y.max() >= h:
                raise AnnotationError(
                    f"{self.sample_id}: polygon exceeds image bounds "
                    f"[0, {w}) x [0, {h})"
                )


@dataclass
class ParseResult:
    annotations: AnnotationSet
    skipped_shapes: int = 0  # non-polygon shapes dropped with a warning count


def parse_labelme(document: str | dict, sample_id: str = "") -> ParseResult:
    """Parse a LabelMe-style JSON document into an AnnotationSet.

    Labels are matched case-insensitively onto the four classes; an unknown
    label raises AnnotationError naming it.  Points are clamped into the
    image frame (annotation tools may place vertices exactly on the border).
    """
    doc = json.loads(document) if isinstance(document, str) else document
    try:
        h, w = int(doc["imageHeight"]), int(doc["imageWidth"])
        shapes = doc["shapes"]
    except KeyError as exc:
        raise AnnotationError(f"annotation document lacks required key {exc}") from None

    if not sample_id:
        sample_id = Path(doc.get("imagePath", "")).stem

    polygons: list[PolygonAnnotation] = []
    unknown: list[str] = []
    skipped = 0
    for shape in shapes:
        if shape.get("shape_type", "polygon") != "polygon":
            skipped += 1
            continue
        try:
            label = resolve_label(shape["label"])
        except KeyError:
            unknown.append(shape["label"])
            continue
        pts = np.asarray(shape["points"], dtype=np.float64)
        pts[:, 0] = np.clip(pts[:, 0], 0.0, np.nextafter(float(w), 0.0))
        pts[:, 1] = np.clip(pts[:, 1], 0.0, np.nextafter(float(h), 0.0))
        polygons.append(PolygonAnnotation(label=label, points=pts))
    if unknown:
        raise AnnotationError(f"unknown annotation labels: {sorted(set(unknown))}")

    ann = AnnotationSet(sample_id=sample_id, image_size=(h, w), polygons=polygons)
    return ParseResult(annotations=ann, skipped_shapes=skipped)


def annotation_to_labelme(ann: AnnotationSet, image_path: str = "") -> dict:
    """Inverse of parse_labelme, used when emitting synthetic datasets."""
    return {
        "version": "5.0.0",
        "flags": {},
        "shapes": [
            {
                "label": CLASS_NAMES[poly.label],
                "points": [[float(x), float(y)] for x, y in poly.points],
                "group_id": None,
                "shape_type": "polygon",
                "flags": {},
            }
            for poly in ann.polygons
        ],
        "imagePath": image_path,
        "imageData": None,
        "imageHeight": int(ann.image_size[0]),
        "imageWidth": int(ann.image_size[1]),
    }


def rasterize_polygon(poly: PolygonAnnotation | np.ndarray, height: int, width: int) -> np.ndarray:
    """Rasterize a polygon to a binary [H, W] mask.

    A pixel (r, c) is set iff its center (c + 0.5, r + 0.5) lies inside the
    polygon under the even-odd rule (scanline crossing count).
    """
    pts = poly.points if isinstance(poly, PolygonAnnotation) else np.asarray(poly, dtype=np.float64)
    if height <= 0 or width <= 0:
        raise ValueError("mask dimensions must be positive")
    mask = np.zeros((height, width), dtype=bool)

    x1, y1 = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    keep = y1 != y2  # horizontal edges never cross a scanline interior
    x1, y1, x2, y2 = x1[keep], y1[keep], x2[keep], y2[keep]
    if len(x1) == 0:
        return mask

    ylo, yhi = np.minimum(y1, y2), np.maximum(y1, y2)
    r0 = max(0, int(np.floor(ylo.min() - 0.5)))
    r1 = min(height - 1, int(np.ceil(yhi.max())))
    centers = np.arange(width) + 0.5
    for r in range(r0, r1 + 1):
        yc = r + 0.5
        hit = (ylo <= yc) & (yc < yhi)  # half-open: vertices counted once
        if not hit.any():
            continue
        t = (yc - y1[hit]) / (y2[hit] - y1[hit])
        xs = np.sort(x1[hit] + t * (x2[hit] - x1[hit]))
        for xa, xb in zip(xs[0::2], xs[1::2]):
            mask[r] |= (centers >= xa) & (centers < xb)
    return mask


def build_semantic_mask(ann: AnnotationSet) -> SemanticMask:
    """Paint polygons into a class mask, in file order.

    On overlap the later polygon wins, except that a Normal polygon never
    overwrites an already-painted defect class.
    """
    h, w = ann.image_size
    labels = np.full((h, w), BACKGROUND, dtype=np.uint8)
    defect = np.zeros((h, w), dtype=bool)
    for poly in ann.polygons:
        m = rasterize_polygon(poly, h, w)
        if poly.label == ClassLabel.NORMAL:
            m = m & ~defect
        else:
            defect |= m
        labels[m] = int(poly.label)
    return SemanticMask(labels)


@dataclass
class SplitAssignment:
    train_ids: list[str]
    val_ids: list[str]
    seed: int

    def to_json(self) -> str:
        return json.dumps(
            {"train_ids": self.train_ids, "val_ids": self.val_ids, "seed": self.seed},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SplitAssignment":
        doc = json.loads(text)
        return cls(
            train_ids=list(doc["train_ids"]),
            val_ids=list(doc["val_ids"]),
            seed=int(doc["seed"]),
        )


def split_dataset(ids: list[str], val_fraction: float = 0.1, seed: int = 0) -> SplitAssignment:
    """Deterministic shuffle split; the first round(val_fraction * n) ids
    after shuffling become the validation set."""
    ids = list(ids)
    if len(ids) < 2:
        raise ValueError(f"need at least 2 ids to split, got {len(ids)}")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_val = round(val_fraction * len(ids))
    shuffled = [ids[i] for i in order]
    return SplitAssignment(train_ids=shuffled[n_val:], val_ids=shuffled[:n_val], seed=seed)


def dataset_statistics(annotation_sets: list[AnnotationSet]) -> list[tuple[str, int, int]]:
    """Per-class (name, instance count, painted pixel area) rows.

    Pixel areas come from the built semantic masks, i.e. after overlap
    precedence, matching what training actually sees.
    """
    instances = {c: 0 for c in ClassLabel}
    area = {c: 0 for c in ClassLabel}
    for ann in annotation_sets:
        for poly in ann.polygons:
            instances[poly.label] += 1
        counts = build_semantic_mask(ann).class_pixel_counts()
        for c in ClassLabel:
            area[c] += counts[int(c)]
    return [(CLASS_NAMES[c], instances[c], area[c]) for c in ClassLabel]


def write_statistics_csv(rows: list[tuple[str, int, int]], path: str | Path) -> None:
    lines = ["class,instances,pixel_area"]
    lines += [f"{name},{inst},{area}" for name, inst, area in rows]
    Path(path).write_text("\n".join(lines) + "\n")
