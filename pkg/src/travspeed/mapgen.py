"""Semantic grid to speed-distribution map and risk-adjusted speed map.

Every cell of a given terrain class sees the same commanded speed in a given
layer, so a ``K``-layer map needs only ``C * K`` network evaluations.  The
resulting PMFs live in a small table and cells point into it.

File layouts (all little-endian, row ``h`` grows along +y, column ``w`` along +x):

* semantic grid: JSON header ``{C, H, W, resolution, origin}`` with either an
  inline row-major ``cells`` list or a ``cells_file`` naming an adjacent flat
  ``int16`` file; ``-1`` marks unknown cells.
* risk map: JSON header ``{K, H, W, resolution, origin, s_max, data_file}``;
  the data file holds ``float32`` values, layer-major then row-major.
* speed-distribution map: JSON header with the PMF ``table`` inline and an
  ``index_file`` of ``int32`` table rows (``-1`` unknown), same ordering.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from travspeed.errors import FormatError, ParameterError
from travspeed.model import MlpModel, predict_pmf
from travspeed.risk import (
    GridGeometry,
    RiskParams,
    RiskSpeedMap,
    SpeedDistributionMap,
    build_risk_map,
    risk_adjusted_speed,
)

UNKNOWN_CLASS = -1
DEFAULT_RESOLUTION = 0.4


@dataclass(frozen=True)
class SemanticGrid:
    """``H x W`` terrain class ids on an axis-aligned grid; ``-1`` is unknown."""

    n_classes: int
    cells: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        cells = np.array(self.cells, dtype=np.int64)
        if cells.ndim != 2:
            raise ParameterError(f"cells must be a 2-D array, got shape {cells.shape}")
        if self.n_classes < 1:
            raise ParameterError(f"need at least one terrain class, got {self.n_classes}")
        bad = (cells != UNKNOWN_CLASS) & ((cells < 0) | (cells >= self.n_classes))
        if bad.any():
            h, w = np.argwhere(bad)[0]
            raise ParameterError(f"cell ({h}, {w}) holds class {cells[h, w]}, outside [0, {self.n_classes})")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        # validates resolution too
        object.__setattr__(self, "origin", self.geometry.origin)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.cells.shape[0], self.cells.shape[1], self.resolution, self.origin)

    def one_hot(self) -> np.ndarray:
        """``C x H x W`` channel form; unknown cells are all-zero."""
        out = np.zeros((self.n_classes,) + self.cells.shape)
        h, w = np.nonzero(self.cells >= 0)
        out[self.cells[h, w], h, w] = 1.0
        return out

    @classmethod
    def from_one_hot(
        cls, channels: np.ndarray, resolution: float = DEFAULT_RESOLUTION, origin=(0.0, 0.0)
    ) -> SemanticGrid:
        channels = np.asarray(channels)
        cells = np.where(channels.sum(axis=0) > 0, channels.argmax(axis=0), UNKNOWN_CLASS)
        return cls(channels.shape[0], cells, resolution, origin)

    def window(self, center: tuple[float, float], height: int, width: int) -> SemanticGrid:
        """``height x width`` sub-grid aligned with this grid and centred near ``center``.

        Cells falling outside this grid come back unknown.
        """
        ch = math.floor((center[1] - self.origin[1]) / self.resolution)
        cw = math.floor((center[0] - self.origin[0]) / self.resolution)
        h0, w0 = ch - height // 2, cw - width // 2
        out = np.full((height, width), UNKNOWN_CLASS, dtype=np.int64)
        sh0, sh1 = max(h0, 0), min(h0 + height, self.height)
        sw0, sw1 = max(w0, 0), min(w0 + width, self.width)
        if sh0 < sh1 and sw0 < sw1:
            out[sh0 - h0 : sh1 - h0, sw0 - w0 : sw1 - w0] = self.cells[sh0:sh1, sw0:sw1]
        origin = (self.origin[0] + w0 * self.resolution, self.origin[1] + h0 * self.resolution)
        return SemanticGrid(self.n_classes, out, self.resolution, origin)


def layer_speeds(n_layers: int, s_max: float) -> np.ndarray:
    """Commanded speed each layer is evaluated at: the center of its range."""
    return (np.arange(n_layers) + 0.5) * s_max / n_layers


def _check_classes(grid: SemanticGrid, model: MlpModel) -> None:
    if model.n_classes < grid.n_classes:
        raise ParameterError(f"model knows {model.n_classes} classes, grid uses {grid.n_classes}")


def generate_sdm(grid: SemanticGrid, model: MlpModel, n_layers: int = 10) -> SpeedDistributionMap:
    """Speed-distribution map with one network evaluation per (class, layer).

    Table row ``c * K + k`` holds the PMF for class ``c`` at layer ``k``.
    """
    _check_classes(grid, model)
    if n_layers < 1:
        raise ParameterError(f"need at least one layer, got {n_layers}")
    speeds = layer_speeds(n_layers, model.s_max)
    table = np.array(
        [predict_pmf(model, c, float(s)).probs for c in range(grid.n_classes) for s in speeds]
    ).reshape(grid.n_classes * n_layers, model.n_bins)
    # rows[k, c] is the table row for class c at layer k; column -1 serves unknown cells
    rows = np.full((n_layers, grid.n_classes + 1), -1, dtype=np.int64)
    rows[:, :-1] = np.arange(grid.n_classes)[None, :] * n_layers + np.arange(n_layers)[:, None]
    index = rows[:, grid.cells]
    return SpeedDistributionMap(table, index, grid.geometry, model.s_max)


def generate_risk_map(
    grid: SemanticGrid, model: MlpModel, n_layers: int = 10, params: RiskParams | None = None
) -> RiskSpeedMap:
    """Risk-adjusted speed map; unknown semantic cells carry the unknown sentinel."""
    return build_risk_map(generate_sdm(grid, model, n_layers), params or RiskParams())


def naive_risk_map(
    grid: SemanticGrid, model: MlpModel, n_layers: int = 10, params: RiskParams | None = None
) -> RiskSpeedMap:
    """Reference path: one network evaluation and one CVaR per cell and layer.

    Slow by design; used to check that the cached path changes nothing.
    """
    _check_classes(grid, model)
    params = params or RiskParams()
    values = np.full((n_layers, grid.height, grid.width), -1.0)
    for k, s in enumerate(layer_speeds(n_layers, model.s_max)):
        for h in range(grid.height):
            for w in range(grid.width):
                c = grid.cells[h, w]
                if c >= 0:
                    values[k, h, w] = risk_adjusted_speed(predict_pmf(model, int(c), float(s)), params)
    return RiskSpeedMap(values, grid.geometry, model.s_max)


# --------------------------------------------------------------------------- files


def _read_header(path: Path, required: tuple[str, ...]) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be a JSON object")
    missing = [k for k in required if k not in doc]
    if missing:
        raise FormatError(f"{path}: missing header field(s) {missing}")
    return doc


def _read_blob(path: Path, name: str, dtype: str, count: int) -> np.ndarray:
    blob = path.parent / name
    try:
        data = np.fromfile(blob, dtype=dtype)
    except OSError as exc:
        raise FormatError(f"{path}: cannot read {name}: {exc}") from exc
    if data.size != count:
        raise FormatError(f"{path}: {name} holds {data.size} values, header implies {count}")
    return data


def _geometry_header(geometry: GridGeometry) -> dict:
    return {
        "H": geometry.height,
        "W": geometry.width,
        "resolution": geometry.resolution,
        "origin": list(geometry.origin),
    }


def save_semantic_grid(grid: SemanticGrid, path: str | Path, binary: bool = False) -> None:
    """Write the grid; ``binary=True`` stores cells in an adjacent ``.bin`` file."""
    path = Path(path)
    doc = {"C": grid.n_classes, **_geometry_header(grid.geometry)}
    if binary:
        name = path.with_suffix(".cells.bin").name
        grid.cells.astype("<i2").tofile(path.parent / name)
        doc["cells_file"] = name
    else:
        doc["cells"] = grid.cells.ravel().tolist()
    path.write_text(json.dumps(doc))


def load_semantic_grid(path: str | Path) -> SemanticGrid:
    path = Path(path)
    doc = _read_header(path, ("C", "H", "W", "resolution", "origin"))
    H, W = int(doc["H"]), int(doc["W"])
    if "cells" in doc:
        cells = doc["cells"]
        if not isinstance(cells, list) or len(cells) != H * W:
            raise FormatError(f"{path}: cells should list H*W = {H * W} integers")
        try:
            arr = np.array(cells, dtype=np.int64)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: cells: {exc}") from exc
    elif "cells_file" in doc:
        arr = _read_blob(path, doc["cells_file"], "<i2", H * W).astype(np.int64)
    else:
        raise FormatError(f"{path}: needs either 'cells' or 'cells_file'")
    try:
        return SemanticGrid(int(doc["C"]), arr.reshape(H, W), float(doc["resolution"]), tuple(doc["origin"]))
    except ParameterError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_risk_map(speed_map: RiskSpeedMap, path: str | Path) -> None:
    """JSON header plus adjacent float32 data file (layer-major, row-major)."""
    path = Path(path)
    name = path.with_suffix(".f32.bin").name
    speed_map.values.astype("<f4").tofile(path.parent / name)
    doc = {"K": speed_map.n_layers, **_geometry_header(speed_map.geometry), "s_max": speed_map.s_max}
    doc["data_file"] = name
    path.write_text(json.dumps(doc))


def load_risk_map(path: str | Path) -> RiskSpeedMap:
    path = Path(path)
    doc = _read_header(path, ("K", "H", "W", "resolution", "origin", "s_max", "data_file"))
    K, H, W = int(doc["K"]), int(doc["H"]), int(doc["W"])
    data = _read_blob(path, doc["data_file"], "<f4", K * H * W).astype(np.float64)
    geometry = GridGeometry(H, W, float(doc["resolution"]), tuple(doc["origin"]))
    try:
        return RiskSpeedMap(data.reshape(K, H, W), geometry, float(doc["s_max"]))
    except ParameterError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_sdm(sdm: SpeedDistributionMap, path: str | Path) -> None:
    path = Path(path)
    name = path.with_suffix(".index.bin").name
    sdm.index.astype("<i4").tofile(path.parent / name)
    doc = {"K": sdm.n_layers, **_geometry_header(sdm.geometry), "s_max": sdm.s_max}
    doc["table"] = sdm.table.tolist()
    doc["index_file"] = name
    path.write_text(json.dumps(doc))


def load_sdm(path: str | Path) -> SpeedDistributionMap:
    path = Path(path)
    doc = _read_header(path, ("K", "H", "W", "resolution", "origin", "s_max", "table", "index_file"))
    K, H, W = int(doc["K"]), int(doc["H"]), int(doc["W"])
    index = _read_blob(path, doc["index_file"], "<i4", K * H * W).astype(np.int64)
    geometry = GridGeometry(H, W, float(doc["resolution"]), tuple(doc["origin"]))
    try:
        return SpeedDistributionMap(np.array(doc["table"], dtype=float), index.reshape(K, H, W), geometry, float(doc["s_max"]))
    except (ParameterError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def export_layer_csv(speed_map: RiskSpeedMap, layer: int, path: str | Path) -> None:
    """One map layer as a CSV grid: ``H`` rows of ``W`` values, row 0 first."""
    if not 0 <= layer < speed_map.n_layers:
        raise ParameterError(f"layer {layer} outside [0, {speed_map.n_layers})")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in speed_map.values[layer]:
            writer.writerow([repr(float(v)) for v in row])
