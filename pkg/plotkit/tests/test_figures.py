"""Figure rendering checks over the committed fixture CSVs, including the
secondary acceptance criterion: all four kinds render, TSD band order follows
the CSV metadata, and re-rendering is deterministic."""

import contextlib
import csv
from pathlib import Path

import pytest

from plotkit import (
    FigureSpec,
    MissingColumn,
    UnknownClass,
    load_color_map,
    render,
    render_heatmap,
    render_loss_curves,
    render_scatter,
    render_tsd,
)

FIXTURES = Path(__file__).parent / "fixtures"


@contextlib.contextmanager
def criterion(label):
    try:
        yield
    except BaseException:
        print(f"\n[acceptance] {label}: FAIL")
        raise
    print(f"\n[acceptance] {label}: PASS")


@pytest.fixture
def colors():
    return load_color_map(FIXTURES / "class_table.yaml")


def spec(kind, out, **kwargs):
    return FigureSpec(kind=kind, out=out, **kwargs)


def test_acceptance_criterion_9_all_kinds_render(tmp_path, colors):
    with criterion("criterion 9 (secondary: figure kinds, band order, determinism)"):
        tsd = render_tsd(
            FIXTURES / "tsd_alpha.csv",
            spec("tsd_stack", tmp_path / "tsd.svg", colors=colors),
        )
        assert tsd.path.exists() and tsd.path.stat().st_size > 0

        # band order: renderer reports exactly the CSV's top-to-bottom rows,
        # and those rows are grouped correct -> wrong -> ood
        with open(FIXTURES / "tsd_alpha.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert tsd.meta["bands_top_to_bottom"] == [(r["gt_class"], r["band"]) for r in rows]
        bands = [r["band"] for r in rows]
        order = {"correct": 0, "wrong": 1, "ood": 2}
        assert bands == sorted(bands, key=order.__getitem__)
        assert bands[0] == "correct" and bands[-1] == "ood"

        scatter = render_scatter(
            FIXTURES / "summary.csv", "wpre_at", "auroc",
            spec("scatter", tmp_path / "scatter.svg", colors=colors,
                 where={"task": "io"}),
        )
        assert scatter.path.exists() and scatter.meta["plotted"]

        heat = render_heatmap(
            FIXTURES / "confusion_ratios.csv",
            spec("heatmap", tmp_path / "heatmap.svg"),
        )
        assert heat.path.exists() and heat.meta["shape"][0] >= heat.meta["shape"][1]

        loss = render_loss_curves(
            FIXTURES / "loss_curves.csv",
            spec("loss_curves", tmp_path / "loss.svg", colors=colors),
        )
        assert loss.path.exists() and set(loss.meta["classes"]) == {"alpha", "beta", "gamma"}

        # re-render determinism, vector and raster
        for suffix in ("svg", "png"):
            a = render_tsd(
                FIXTURES / "tsd_alpha.csv",
                spec("tsd_stack", tmp_path / f"a.{suffix}", colors=colors),
            ).path.read_bytes()
            b = render_tsd(
                FIXTURES / "tsd_alpha.csv",
                spec("tsd_stack", tmp_path / f"b.{suffix}", colors=colors),
            ).path.read_bytes()
            assert a == b


def test_tsd_empty_csv_is_error_and_writes_nothing(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("gt_class,band,bin_0,bin_1\n")
    out = tmp_path / "never.svg"
    with pytest.raises(ValueError):
        render_tsd(empty, spec("tsd_stack", out))
    assert not out.exists()


def test_tsd_missing_columns(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("gt_class,band\nalpha,correct\n")
    with pytest.raises(MissingColumn):
        render_tsd(bad, spec("tsd_stack", tmp_path / "x.svg"))


def test_unknown_class_against_color_map(tmp_path, colors):
    rogue = tmp_path / "rogue.csv"
    rogue.write_text("gt_class,band,bin_0\nmystery,correct,1.0\n")
    with pytest.raises(UnknownClass):
        render_tsd(rogue, spec("tsd_stack", tmp_path / "x.svg", colors=colors))


def test_scatter_missing_column(tmp_path):
    with pytest.raises(MissingColumn):
        render_scatter(
            FIXTURES / "summary.csv", "wpre_at", "no_such_column",
            spec("scatter", tmp_path / "x.svg"),
        )


def test_scatter_skips_absent_values_with_warning(tmp_path):
    path = tmp_path / "metrics.csv"
    path.write_text("class,iou,wpre\nalpha,0.9,0.8\nbeta,0.7,\n")
    with pytest.warns(UserWarning):
        result = render_scatter(path, "wpre", "iou", spec("scatter", tmp_path / "s.svg"))
    assert result.meta["plotted"] == ["alpha"]
    assert result.meta["skipped"] == ["beta"]


def test_scatter_diagonal_data(tmp_path):
    path = tmp_path / "diag.csv"
    path.write_text("class,a,b\nalpha,0.1,0.1\nbeta,0.5,0.5\ngamma,0.9,0.9\n")
    result = render_scatter(path, "a", "b", spec("scatter", tmp_path / "d.png"))
    assert len(result.meta["plotted"]) == 3


def test_heatmap_single_cell(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("gt_class,alpha\nalpha,1.0\n")
    result = render_heatmap(path, spec("heatmap", tmp_path / "h.png"))
    assert result.meta["shape"] == (1, 1)


def test_heatmap_empty_is_error(tmp_path):
    path = tmp_path / "none.csv"
    path.write_text("gt_class,alpha\n")
    with pytest.raises(ValueError):
        render_heatmap(path, spec("heatmap", tmp_path / "h.png"))


def test_loss_curves_single_line(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("epoch,class,loss\n0,alpha,1.0\n1,alpha,0.5\n")
    result = render_loss_curves(path, spec("loss_curves", tmp_path / "l.png"))
    assert result.meta["classes"] == ["alpha"]


def test_loss_curves_empty_is_error(tmp_path):
    path = tmp_path / "none.csv"
    path.write_text("epoch,class,loss\n")
    with pytest.raises(ValueError):
        render_loss_curves(path, spec("loss_curves", tmp_path / "l.png"))


def test_dispatch_and_kind_validation(tmp_path):
    with pytest.raises(ValueError):
        FigureSpec(kind="sparkline", out=tmp_path / "x.svg")
    result = render(
        FigureSpec(kind="heatmap", out=tmp_path / "h.svg"),
        [FIXTURES / "confusion_ratios.csv"],
    )
    assert result.path.exists()


def test_cli_renders(tmp_path):
    from plotkit.cli import main

    out = tmp_path / "cli_tsd.svg"
    assert main([
        "--kind", "tsd", "--in", str(FIXTURES / "tsd_alpha.csv"),
        "--out", str(out), "--colors", str(FIXTURES / "class_table.yaml"),
    ]) == 0
    assert out.exists()

    out2 = tmp_path / "cli_scatter.png"
    assert main([
        "--kind", "scatter", "--in", str(FIXTURES / "summary.csv"),
        "--out", str(out2), "--x-col", "wpre_at", "--y-col", "auroc",
        "--where", "task=cw",
    ]) == 0
    assert out2.exists()
