"""Grid-overlay visual prompting harness for VLM bounding-box localization."""

from .compositor import GridConfig, GridMask, ImageBuffer, composite, line_positions, render_grid_mask
from .geometry import AggregateSummary, BBox, MetricPair, aggregate, enclosing_box, giou, intersection_area, iou
from .parsing import extract_tuple, normalize, parse_prediction
from .report import improvement, render_annotated, side_by_side
from .sweep import SweepSpec, enumerate_configs, rescore, run_sweep

__version__ = "0.1.0"
