"""Speed-distribution statistics and the multi-layer speed maps built from them.

A :class:`SpeedPmf` is read as a piecewise-uniform density: bin ``k`` spreads
its mass evenly over ``[k*w, (k+1)*w)`` with ``w = s_max / K_out``.  Under
that reading the quantile function is continuous inside every bin, so VaR and
the lower-tail CVaR have closed forms.

Low speeds are the bad outcomes here, so CVaR averages the *lower* tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from travspeed.errors import ParameterError

UNKNOWN = -1.0
PMF_SUM_TOL = 1e-6


@dataclass(frozen=True)
class SpeedPmf:
    """Probability mass over ``K_out`` equal-width realized-speed bins on ``[0, s_max]``.

    ``probs`` is stored as given once validated (it must sum to one within
    1e-6); every statistic works on the exactly normalised copy ``mass``.
    """

    probs: np.ndarray
    s_max: float = 5.0
    mass: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        p = np.array(self.probs, dtype=np.float64).reshape(-1)
        if p.size < 1:
            raise ParameterError("a SpeedPmf needs at least one bin")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ParameterError(f"probabilities must be finite and non-negative, got {p}")
        total = float(p.sum())
        if abs(total - 1.0) > PMF_SUM_TOL:
            raise ParameterError(f"probabilities sum to {total}, not 1")
        if not (self.s_max > 0 and math.isfinite(self.s_max)):
            raise ParameterError(f"s_max must be positive, got {self.s_max}")
        p.setflags(write=False)
        mass = p / total
        mass.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "s_max", float(self.s_max))

    @property
    def n_bins(self) -> int:
        return self.probs.size

    @property
    def bin_width(self) -> float:
        return self.s_max / self.n_bins

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_bins) + 0.5) * self.bin_width

    @classmethod
    def from_mass(cls, mass: dict[int, float], n_bins: int = 10, s_max: float = 5.0) -> SpeedPmf:
        """Build from a sparse ``{bin: mass}`` mapping."""
        p = np.zeros(n_bins)
        for k, m in mass.items():
            p[k] = m
        return cls(p, s_max)

    @classmethod
    def point(cls, bin_index: int, n_bins: int = 10, s_max: float = 5.0) -> SpeedPmf:
        return cls.from_mass({bin_index: 1.0}, n_bins, s_max)

    @classmethod
    def uniform(cls, n_bins: int = 10, s_max: float = 5.0) -> SpeedPmf:
        return cls(np.full(n_bins, 1.0 / n_bins), s_max)


@dataclass(frozen=True)
class RiskParams:
    """CVaR level ``alpha`` and the weight ``beta`` given to CVaR over the mean."""

    alpha: float = 0.1
    beta: float = 0.5

    def __post_init__(self) -> None:
        _check_alpha(self.alpha)
        if not 0.0 <= self.beta <= 1.0:
            raise ParameterError(f"beta must lie in [0, 1], got {self.beta}")


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha <= 1.0):
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")


def pmf_mean(pmf: SpeedPmf) -> float:
    """Mean speed, i.e. the mass-weighted average of bin centers."""
    return float(np.dot(pmf.mass, pmf.centers))


def _locate(pmf: SpeedPmf, tau: float) -> tuple[int, float]:
    """Return ``(k, cdf_below_k)`` for the bin holding quantile level ``tau``.

    ``k == -1`` means ``tau`` is at or beyond the total mass.
    """
    below = 0.0
    for k, p in enumerate(pmf.mass):
        above = below + p
        if above > tau:
            return k, below
        below = above
    return -1, below


def value_at_risk(pmf: SpeedPmf, alpha: float) -> float:
    """Lower-tail ``alpha``-quantile of the speed distribution.

    Takes the largest speed whose CDF does not exceed ``alpha``, so a level that
    lands on a run of empty bins jumps to the start of the next occupied one.
    ``alpha = 1`` returns the top edge of the highest occupied bin.
    """
    _check_alpha(alpha)
    w = pmf.bin_width
    k, below = _locate(pmf, alpha)
    if k < 0:
        top = int(np.flatnonzero(pmf.mass)[-1])
        return (top + 1) * w
    return k * w + w * (alpha - below) / pmf.mass[k]


def cvar(pmf: SpeedPmf, alpha: float) -> float:
    """Average of the worst (slowest) ``alpha`` fraction of outcomes.

    Exact integral of the piecewise-linear quantile function over ``[0, alpha]``.
    """
    _check_alpha(alpha)
    w = pmf.bin_width
    centers = pmf.centers
    acc = 0.0
    below = 0.0
    for k, p in enumerate(pmf.mass):
        if p == 0.0:
            continue
        above = below + p
        if above >= alpha:
            part = alpha - below
            acc += part * k * w + w * part * part / (2.0 * p)
            return acc / alpha
        acc += p * centers[k]
        below = above
    # alpha within rounding of the total mass
    return acc / alpha


def risk_adjusted_speed(pmf: SpeedPmf, params: RiskParams) -> float:
    """``beta * CVaR_alpha + (1 - beta) * mean``."""
    return params.beta * cvar(pmf, params.alpha) + (1.0 - params.beta) * pmf_mean(pmf)


# --------------------------------------------------------------------------- maps


@dataclass(frozen=True)
class GridGeometry:
    """Axis-aligned grid: row ``h`` grows along +y, column ``w`` along +x.

    ``origin`` is the world position of the outer corner of cell (0, 0).
    """

    height: int
    width: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.height < 0 or self.width < 0:
            raise ParameterError("grid dimensions must be non-negative")
        if not self.resolution > 0:
            raise ParameterError(f"resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    def cell_of(self, x: float, y: float) -> tuple[int, int] | None:
        """Cell ``(h, w)`` containing world point ``(x, y)``, or None outside the grid."""
        fw = (x - self.origin[0]) / self.resolution
        fh = (y - self.origin[1]) / self.resolution
        if not (math.isfinite(fw) and math.isfinite(fh)):
            return None
        h, w = math.floor(fh), math.floor(fw)
        if 0 <= h < self.height and 0 <= w < self.width:
            return h, w
        return None

    def cell_center(self, h: int, w: int) -> tuple[float, float]:
        return (
            self.origin[0] + (w + 0.5) * self.resolution,
            self.origin[1] + (h + 0.5) * self.resolution,
        )


@dataclass(frozen=True)
class RiskSpeedMap:
    """``K x H x W`` risk-adjusted speeds in m/s; negative cells are unknown.

    Layer ``k`` covers commanded speeds in ``[k*s_max/K, (k+1)*s_max/K)``.
    """

    values: np.ndarray
    geometry: GridGeometry
    s_max: float = 5.0

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[1:] != (self.geometry.height, self.geometry.width):
            raise ParameterError(
                f"values shape {v.shape} does not match geometry "
                f"({self.geometry.height}, {self.geometry.width})"
            )
        if v.shape[0] < 1:
            raise ParameterError("a speed map needs at least one layer")
        # unknown cells are negative, so the plain max only sees known values above zero
        if v.size and v.max() > self.s_max * (1 + 1e-12):
            raise ParameterError("map value exceeds s_max")
        object.__setattr__(self, "values", v)

    @property
    def n_layers(self) -> int:
        return self.values.shape[0]

    def layer_of(self, speed: float) -> int:
        k = int(max(speed, 0.0) * self.n_layers / self.s_max)
        return min(k, self.n_layers - 1)


def lookup(speed_map: RiskSpeedMap, p: tuple[float, float], s: float) -> float:
    """Risk-adjusted speed at position ``p`` for query speed ``s``.

    Positions off the map and unknown cells read as 0 m/s.
    """
    cell = speed_map.geometry.cell_of(p[0], p[1])
    if cell is None:
        return 0.0
    v = speed_map.values[speed_map.layer_of(s), cell[0], cell[1]]
    return float(v) if v >= 0 else 0.0


@dataclass(frozen=True)
class SpeedDistributionMap:
    """A ``K x H x W`` map whose known cells each hold a :class:`SpeedPmf`.

    Cells index into a table of distinct PMFs, so maps generated from a
    semantic grid store only one distribution per (class, layer) pair.
    ``index[k, h, w] == -1`` marks an unknown cell.
    """

    table: np.ndarray
    index: np.ndarray
    geometry: GridGeometry
    s_max: float = 5.0
    _pmfs: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        table = np.asarray(self.table, dtype=np.float64)
        if table.ndim != 2:
            table = table.reshape(-1, max(table.shape[-1], 1) if table.ndim else 1)
        index = np.asarray(self.index, dtype=np.int64)
        if index.ndim != 3 or index.shape[1:] != (self.geometry.height, self.geometry.width):
            raise ParameterError(f"index shape {index.shape} does not match geometry")
        if index.size and (index.max() >= len(table) or index.min() < -1):
            raise ParameterError("index refers to a missing table row")
        pmfs = tuple(SpeedPmf(row, self.s_max) for row in table)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "_pmfs", pmfs)

    @property
    def n_layers(self) -> int:
        return self.index.shape[0]

    def pmf(self, k: int, h: int, w: int) -> SpeedPmf | None:
        i = self.index[k, h, w]
        return None if i < 0 else self._pmfs[i]

    def dense_probs(self) -> np.ndarray:
        """``(K, H, W, K_out)`` array of cell PMFs, NaN in unknown cells."""
        out = np.full(self.index.shape + (self.table.shape[1],), np.nan)
        known = self.index >= 0
        out[known] = self.table[self.index[known]]
        return out

    @classmethod
    def from_cells(
        cls, cells: list, geometry: GridGeometry, s_max: float = 5.0
    ) -> SpeedDistributionMap:
        """Build from a nested ``[k][h][w]`` list of :class:`SpeedPmf` or None."""
        rows: list[np.ndarray] = []
        index = np.full((len(cells), geometry.height, geometry.width), -1, dtype=np.int64)
        n_out = None
        for k, layer in enumerate(cells):
            for h, row in enumerate(layer):
                for w, pmf in enumerate(row):
                    if pmf is None:
                        continue
                    n_out = pmf.n_bins
                    index[k, h, w] = len(rows)
                    rows.append(pmf.probs)
        table = np.array(rows) if rows else np.zeros((0, n_out or 1))
        return cls(table, index, geometry, s_max)


def build_risk_map(sdm: SpeedDistributionMap, params: RiskParams) -> RiskSpeedMap:
    """Reduce every known cell's PMF to its risk-adjusted speed."""
    per_row = [risk_adjusted_speed(p, params) for p in sdm._pmfs]
    # index -1 picks the trailing sentinel
    values = np.array(per_row + [UNKNOWN], dtype=np.float64)[sdm.index]
    return RiskSpeedMap(values, sdm.geometry, sdm.s_max)
