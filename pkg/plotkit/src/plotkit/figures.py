"""Figure rendering for the evaluation toolkit's CSV bundles.

Strict consumer: every plotted number comes from a CSV cell; nothing is
re-derived.  Missing columns and unresolvable class names are errors, absent
(empty) values are skipped with a warning.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import yaml  # noqa: E402

# stable ids inside svg output; Agg/png carries no timestamps
plt.rcParams["svg.hashsalt"] = "plotkit"

FIGURE_KINDS = ("tsd_stack", "scatter", "heatmap", "loss_curves")

BAND_SHADE = {"correct": 1.0, "wrong": 0.65, "ood": 0.35}


class MissingColumn(KeyError):
    """A required column is absent from the input CSV."""


class UnknownClass(KeyError):
    """A class name in the CSV does not resolve against the color map."""


@dataclass
class FigureSpec:
    kind: str
    out: Path
    colors: dict[str, str] | None = None
    x_col: str | None = None
    y_col: str | None = None
    where: dict[str, str] = field(default_factory=dict)
    reference: float | None = 0.7
    figsize: tuple[float, float] = (6.0, 4.0)
    dpi: int = 100

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        self.out = Path(self.out)


@dataclass
class RenderResult:
    path: Path
    meta: dict


def load_color_map(path) -> dict[str, str]:
    """Class-name -> color from the taxonomy-style YAML config."""
    doc = yaml.safe_load(Path(path).read_text())
    return {c["name"]: c["color"] for c in doc.get("classes", []) if c.get("color")}


def _read_rows(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = [row for row in reader]
    return header, rows


def _require(header, *cols):
    for col in cols:
        if col not in header:
            raise MissingColumn(f"column {col!r} not found (have {header})")


def _resolve_color(name: str, colors: dict[str, str] | None, fallback_index: int):
    if colors is None:
        cycle = plt.rcParams["axes.prop_cycle"].by_key()["color"]
        return cycle[fallback_index % len(cycle)]
    if name not in colors:
        raise UnknownClass(f"class {name!r} has no entry in the color map")
    return colors[name]


def _save(fig, spec: FigureSpec) -> Path:
    spec.out.parent.mkdir(parents=True, exist_ok=True)
    metadata = None
    suffix = spec.out.suffix.lower()
    if suffix == ".svg":
        metadata = {"Date": None}
    elif suffix == ".pdf":
        metadata = {"CreationDate": None}
    fig.savefig(spec.out, dpi=spec.dpi, metadata=metadata)
    plt.close(fig)
    return spec.out


def render_tsd(csv_path, spec: FigureSpec) -> RenderResult:
    """Stacked-area chart of a trust score distribution matrix.

    CSV rows are ground-truth bands in display order (topmost first); columns
    bin_0..bin_{n-1} hold the per-bin mass.  Band areas equal the row sums as
    given; nothing is renormalized.
    """
    header, rows = _read_rows(csv_path)
    _require(header, "gt_class", "band")
    bin_cols = [c for c in header if c.startswith("bin_")]
    if not bin_cols:
        raise MissingColumn("no bin_* columns found")
    if not rows:
        raise ValueError(f"{csv_path} has no data rows; nothing to plot")
    bin_cols.sort(key=lambda c: int(c.split("_")[1]))

    values = np.array([[float(row[c]) for c in bin_cols] for row in rows])
    bands = [(row["gt_class"], row["band"]) for row in rows]
    n_bins = len(bin_cols)
    x = (np.arange(n_bins) + 0.5) / n_bins

    fig, ax = plt.subplots(figsize=spec.figsize)
    # stackplot stacks bottom-up; reverse so the first CSV row lands on top
    series = values[::-1]
    colors = [
        _resolve_color(name, spec.colors, i)
        for i, (name, _band) in enumerate(bands)
    ][::-1]
    alphas = [BAND_SHADE.get(band, 1.0) for _name, band in bands][::-1]
    polys = ax.stackplot(x, series, colors=colors, labels=[b[0] for b in bands[::-1]])
    for poly, alpha in zip(polys, alphas):
        poly.set_alpha(alpha)
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("trust score")
    ax.set_ylabel("ground-truth share per bin")
    ax.set_title(Path(csv_path).stem)
    handles, labels = ax.get_legend_handles_labels()
    ax.legend(handles[::-1], labels[::-1], loc="upper left", fontsize=8)
    path = _save(fig, spec)
    return RenderResult(path, {"bands_top_to_bottom": bands, "n_bins": n_bins})


def render_scatter(csv_path, x_col: str, y_col: str, spec: FigureSpec) -> RenderResult:
    """One labeled marker per row; absent values skipped with a warning."""
    header, rows = _read_rows(csv_path)
    _require(header, "class", x_col, y_col)
    for key in spec.where:
        _require(header, key)
        rows = [row for row in rows if row[key] == spec.where[key]]

    plotted, skipped = [], []
    fig, ax = plt.subplots(figsize=spec.figsize)
    for i, row in enumerate(rows):
        if row[x_col] == "" or row[y_col] == "":
            skipped.append(row["class"])
            continue
        x, y = float(row[x_col]), float(row[y_col])
        color = _resolve_color(row["class"], spec.colors, i)
        ax.scatter([x], [y], color=color, s=40)
        ax.annotate(row["class"], (x, y), textcoords="offset points",
                    xytext=(4, 4), fontsize=8)
        plotted.append(row["class"])
    if skipped:
        warnings.warn(f"skipped rows with absent values: {', '.join(skipped)}")
    if spec.reference is not None:
        ax.axhline(spec.reference, linestyle=":", color="gray", linewidth=1)
        ax.axvline(spec.reference, linestyle=":", color="gray", linewidth=1)
    ax.set_xlabel(x_col)
    ax.set_ylabel(y_col)
    ax.set_title(Path(csv_path).stem)
    path = _save(fig, spec)
    return RenderResult(path, {"plotted": plotted, "skipped": skipped})


def render_heatmap(csv_path, spec: FigureSpec) -> RenderResult:
    """Annotated matrix of confusion ratios; empty cells render as blanks."""
    header, rows = _read_rows(csv_path)
    _require(header, "gt_class")
    if not rows:
        raise ValueError(f"{csv_path} has no data rows; nothing to plot")
    col_names = [c for c in header if c not in ("gt_class", "gt_total")]
    if not col_names:
        raise MissingColumn("no prediction columns found")
    grid = np.full((len(rows), len(col_names)), np.nan)
    row_names = []
    for r, row in enumerate(rows):
        row_names.append(row["gt_class"])
        for c, name in enumerate(col_names):
            if row[name] != "":
                grid[r, c] = float(row[name])

    fig, ax = plt.subplots(figsize=spec.figsize)
    masked = np.ma.masked_invalid(grid)
    im = ax.imshow(masked, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(col_names)), col_names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(row_names)), row_names, fontsize=8)
    for r in range(grid.shape[0]):
        for c in range(grid.shape[1]):
            if not np.isnan(grid[r, c]):
                ax.text(c, r, f"{grid[r, c]:.2f}", ha="center", va="center",
                        fontsize=7,
                        color="white" if grid[r, c] > 0.5 else "black")
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    fig.colorbar(im, ax=ax, shrink=0.8)
    path = _save(fig, spec)
    return RenderResult(path, {"shape": grid.shape, "rows": row_names, "cols": col_names})


def render_loss_curves(csv_path, spec: FigureSpec) -> RenderResult:
    """Per-class loss trajectories from a long-format (epoch, class, loss) CSV."""
    header, rows = _read_rows(csv_path)
    _require(header, "epoch", "class", "loss")
    if not rows:
        raise ValueError(f"{csv_path} has no data rows; nothing to plot")
    series: dict[str, list[tuple[int, float]]] = {}
    for row in rows:
        series.setdefault(row["class"], []).append((int(row["epoch"]), float(row["loss"])))

    fig, ax = plt.subplots(figsize=spec.figsize)
    for i, (name, points) in enumerate(series.items()):
        points.sort()
        xs, ys = zip(*points)
        ax.plot(xs, ys, label=name, color=_resolve_color(name, spec.colors, i))
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss (nats)")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.set_title(Path(csv_path).stem)
    path = _save(fig, spec)
    return RenderResult(path, {"classes": list(series)})


def render(spec: FigureSpec, inputs: list) -> RenderResult:
    """Dispatch on the figure kind; scatter/heatmap/loss take a single CSV."""
    if spec.kind == "tsd_stack":
        if len(inputs) != 1:
            raise ValueError("tsd_stack renders one CSV per figure")
        return render_tsd(inputs[0], spec)
    if len(inputs) != 1:
        raise ValueError(f"{spec.kind} takes exactly one input CSV")
    if spec.kind == "scatter":
        if not spec.x_col or not spec.y_col:
            raise ValueError("scatter needs x_col and y_col")
        return render_scatter(inputs[0], spec.x_col, spec.y_col, spec)
    if spec.kind == "heatmap":
        return render_heatmap(inputs[0], spec)
    return render_loss_curves(inputs[0], spec)
