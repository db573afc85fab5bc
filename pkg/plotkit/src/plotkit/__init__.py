"""Figure rendering for the LiDAR evaluation toolkit's CSV bundles."""

from .figures import (
    FIGURE_KINDS,
    FigureSpec,
    MissingColumn,
    RenderResult,
    UnknownClass,
    load_color_map,
    render,
    render_heatmap,
    render_loss_curves,
    render_scatter,
    render_tsd,
)

__version__ = "0.1.0"
