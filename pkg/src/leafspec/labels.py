"""Symptom class labels shared by masks, metrics, and reports."""

from __future__ import annotations

from enum import IntEnum

BACKGROUND = 255


class ClassLabel(IntEnum):
    """The four tissue classes. Integer codes are stable everywhere
    (semantic masks, confusion matrices, report rows)."""

    NORMAL = 0
    CHLOROSIS = 1
    PIGMENT_ACCUM = 2
    TIPBURN = 3


N_CLASSES = len(ClassLabel)

CLASS_NAMES = {
    ClassLabel.NORMAL: "normal",
    ClassLabel.CHLOROSIS: "chlorosis",
    ClassLabel.PIGMENT_ACCUM: "pigment_accum",
    ClassLabel.TIPBURN: "tipburn",
}

# Accepted annotation label strings (matched case-insensitively, with
# spaces/hyphens treated as underscores).
LABEL_ALIASES = {
    "normal": ClassLabel.NORMAL,
    "chlorosis": ClassLabel.CHLOROSIS,
    "pigment_accumulation": ClassLabel.PIGMENT_ACCUM,
    "pigment_accum": ClassLabel.PIGMENT_ACCUM,
    "tipburn": ClassLabel.TIPBURN,
}

# Display colours (R, G, B in 0..255) for overlays and heatmaps.
CLASS_COLORS = {
    ClassLabel.NORMAL: (60, 180, 75),
    ClassLabel.CHLOROSIS: (255, 225, 25),
    ClassLabel.PIGMENT_ACCUM: (145, 30, 180),
    ClassLabel.TIPBURN: (230, 25, 75),
}


def resolve_label(name: str) -> ClassLabel:
    """Map an annotation label string onto a ClassLabel.

    Raises KeyError with the offending name if it is not a known alias.
    """
    key = name.strip().lower().replace(" ", "_").replace("-", "_")
    if key not in LABEL_ALIASES:
        raise KeyError(name)
    return LABEL_ALIASES[key]
