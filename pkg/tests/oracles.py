"""Independent brute-force oracles used to pin expected test values.

Everything here is deliberately implemented with plain Python loops and
scalar arithmetic, separate from the vectorized library code it checks.
"""

from __future__ import annotations


def point_in_polygon_evenodd(x: float, y: float, pts) -> bool:
    """Classic ray-casting even-odd test for a single point."""
    inside = False
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def rasterize_by_points(pts, height: int, width: int):
    """[H, W] nested lists: pixel centers tested one by one."""
    return [
        [point_in_polygon_evenodd(c + 0.5, r + 0.5, pts) for c in range(width)]
        for r in range(height)
    ]


def pixel_counts(pred, gt) -> tuple[int, int, int]:
    """(true positives, predicted positives, actual positives) by looping."""
    tp = np_ = ng = 0
    for p_row, g_row in zip(pred, gt):
        for p, g in zip(p_row, g_row):
            p, g = bool(p), bool(g)
            if p and g:
                tp += 1
            if p:
                np_ += 1
            if g:
                ng += 1
    return tp, np_, ng


def iou_bruteforce(pred, gt) -> float:
    tp, np_, ng = pixel_counts(pred, gt)
    union = np_ + ng - tp
    return tp / union if union else 1.0


def dice_bruteforce(pred, gt) -> float:
    tp, np_, ng = pixel_counts(pred, gt)
    return 2 * tp / (np_ + ng) if (np_ + ng) else 1.0


def precision_recall_bruteforce(pred, gt) -> tuple[float, float]:
    tp, np_, ng = pixel_counts(pred, gt)
    return (tp / np_ if np_ else 1.0, tp / ng if ng else 1.0)


def parity_subsamples(plane):
    """The four (row parity, col parity) subsamples of a 2-D nested list,
    in (even,even), (even,odd), (odd,even), (odd,odd) order."""
    h, w = len(plane), len(plane[0])
    out = []
    for rp in (0, 1):
        for cp in (0, 1):
            out.append([[plane[r][c] for c in range(cp, w, 2)] for r in range(rp, h, 2)])
    return out


def shoelace_area(pts) -> float:
    area = 0.0
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return abs(area) / 2.0


def paint_polygons_bruteforce(polys, height: int, width: int, background: int = 255):
    """Per-pixel painter mirroring the precedence rules: file order, later
    wins, Normal (0) never overwrites an already painted defect."""
    labels = [[background] * width for _ in range(height)]
    defect = [[False] * width for _ in range(height)]
    for label, pts in polys:
        for r in range(height):
            for c in range(width):
                if point_in_polygon_evenodd(c + 0.5, r + 0.5, pts):
                    if label == 0 and defect[r][c]:
                        continue
                    labels[r][c] = label
                    if label != 0:
                        defect[r][c] = True
    return labels
