"""
.. See the NOTICE file distributed with this work for additional information
   regarding copyright ownership.
   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at
       http://www.apache.org/licenses/LICENSE-2.0
   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.

Static SVG panel grids of sample paths.
"""
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from common.exceptions import InvalidInputError  # noqa: E402
from common.file_model.result_table import ResultTable  # noqa: E402
from beliefsim.sde_core import PathBundle  # noqa: E402

PANEL_COLUMNS = ("panel_row", "panel_col", "series", "t", "value")
PANEL_WIDTH_PX = 600
PANEL_HEIGHT_PX = 400
POINTS_PER_INCH = 72
SVG_SALT = "beliefsim"
DEFAULT_COLORS = ("tab:blue", "tab:red", "tab:green", "tab:orange")


@dataclass(frozen=True)
class FigureLayout:
    row_labels: Tuple[str, ...]
    col_labels: Tuple[str, ...]
    title: str = ""
    common_y: bool = False
    colors: Tuple[str, ...] = DEFAULT_COLORS
    y_label: str = "price"

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.row_labels), len(self.col_labels)

    @property
    def figsize(self) -> Tuple[float, float]:
        rows, cols = self.shape
        return cols * PANEL_WIDTH_PX / POINTS_PER_INCH, rows * PANEL_HEIGHT_PX / POINTS_PER_INCH


def path_panels(bundles_by_row: Dict[float, List[PathBundle]], attributes: Sequence[str]) -> ResultTable:
    """
    Long-form table with one panel per (row key, path attribute) and one
    series per path
    """
    records = []
    for row, key in enumerate(bundles_by_row):
        for col, attribute in enumerate(attributes):
            for series, bundle in enumerate(bundles_by_row[key]):
                values = getattr(bundle, attribute)
                for t, value in zip(bundle.grid.times, values):
                    records.append((row, col, series, t, value))
    return ResultTable.from_records(PANEL_COLUMNS, records)


def render_svg(table: ResultTable, layout: FigureLayout, path: str) -> str:
    """
    Draw every (panel_row, panel_col) group of `table` into its own axes.
    Axes carry the gid `panel-<row>-<col>` and lines `series-<row>-<col>-<series>`.
    """
    if table.is_empty:
        raise InvalidInputError("figure", "cannot render an empty table")
    rows, cols = layout.shape
    panel_rows = table.column("panel_row").astype(int)
    panel_cols = table.column("panel_col").astype(int)
    if panel_rows.max() >= rows or panel_cols.max() >= cols:
        raise InvalidInputError("figure", "table has panels outside the layout", rows=rows, cols=cols)
    series = table.column("series").astype(int)
    times = table.column("t")
    values = table.column("value")

    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig, axes = plt.subplots(
            rows, cols, figsize=layout.figsize, squeeze=False, sharey="all" if layout.common_y else "none"
        )
        try:
            for r in range(rows):
                for c in range(cols):
                    ax = axes[r][c]
                    ax.set_gid(f"panel-{r}-{c}")
                    ax.set_title(f"{layout.row_labels[r]} | {layout.col_labels[c]}", fontsize=10)
                    in_panel = (panel_rows == r) & (panel_cols == c)
                    color = layout.colors[c % len(layout.colors)]
                    for s in np.unique(series[in_panel]):
                        mask = in_panel & (series == s)
                        (line,) = ax.plot(times[mask], values[mask], color=color, linewidth=0.6, alpha=0.8)
                        line.set_gid(f"series-{r}-{c}-{s}")
                    ax.set_xlabel("t")
                    if c == 0:
                        ax.set_ylabel(layout.y_label)
            if layout.title:
                fig.suptitle(layout.title)
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return path
