import numpy as np

from leafspec.data import PlateDataset
from leafspec.metrics import ConfusionResult, semantic_report
from leafspec.plots import (
    overlay_mask,
    plot_confusion,
    plot_history,
    plot_metric_bars,
    rgb_display,
    save_panel,
)
from leafspec.spectral import SemanticMask


def test_history_plot_written(tmp_path):
    history = [
        {"epoch": e, "box_loss": 1.0 / e, "seg_loss": 2.0 / e, "cls_loss": 0.5 / e,
         "precision": 1 - 1 / e, "recall": 1 - 1 / e, "map50": 1 - 1 / e}
        for e in range(1, 6)
    ]
    path = tmp_path / "curves.png"
    plot_history(history, path)
    assert path.stat().st_size > 1000


def test_confusion_plot_written(tmp_path):
    result = ConfusionResult(matrix=np.eye(4))
    path = tmp_path / "conf.png"
    plot_confusion(result, path, title="t")
    assert path.exists()


def test_metric_bars_two_reports(tmp_path):
    rng = np.random.default_rng(0)
    masks = [SemanticMask(rng.integers(0, 4, (8, 8)).astype(np.uint8))]
    rep = semantic_report(masks, masks)
    path = tmp_path / "bars.png"
    plot_metric_bars({"a": rep, "b": rep}, path)
    assert path.exists()


def test_overlay_and_panel(tmp_path, micro_dataset):
    ds = PlateDataset(micro_dataset / "manifest.csv")
    sid = ds.sample_ids[0]
    img, mask = ds.image(sid), ds.mask(sid)
    base = rgb_display(img)
    assert base.shape == (64, 64, 3) and base.dtype == np.uint8
    out = overlay_mask(base, mask)
    assert out.shape == base.shape
    # Tissue pixels get tinted, background stays close to the base image.
    tissue = mask.labels != 255
    assert (out[tissue] != base[tissue]).any()
    assert (out[~tissue] == base[~tissue]).all()
    save_panel(img, [("gt", mask), ("pred", mask)], tmp_path / "panel.png")
    assert (tmp_path / "panel.png").exists()
