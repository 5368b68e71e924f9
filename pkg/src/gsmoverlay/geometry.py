"""Hexagonal multi-cell layout, sector antennas, propagation, and UE drops.

Cells are regular hexagons (circumradius = edge length) on a lattice, three
120-degree sectors per cell with boresights at 0/120/240 degrees.  Propagation
is power-law path loss with a free-space intercept at 1 m plus i.i.d.
lognormal shadowing per UE-sector link.  Statistics are intended to be read
from the centre cell; the outer rings act as interference sources.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class HexLayout:
    """rows x cols hex cells with ``sectors_per_cell`` sectors each."""

    rows: int = 6
    cols: int = 6
    cell_edge_m: float = 500.0
    sectors_per_cell: int = 3

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("layout must contain at least one cell")
        if self.sectors_per_cell != 3:
            raise ValueError("layout requires 3 sectors per cell")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def n_sectors(self) -> int:
        return self.n_cells * self.sectors_per_cell

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 2) site coordinates; flat-top hex lattice."""
        r = self.cell_edge_m
        pts = np.empty((self.n_cells, 2))
        for i in range(self.rows):
            for j in range(self.cols):
                x = 1.5 * r * j
                y = math.sqrt(3.0) * r * (i + 0.5 * (j % 2))
                pts[i * self.cols + j] = (x, y)
        return pts

    @property
    def center_cell(self) -> int:
        centers = self.cell_centers()
        mid = centers.mean(axis=0)
        return int(np.argmin(np.hypot(*(centers - mid).T)))

    def sector_boresights(self) -> np.ndarray:
        return np.deg2rad(np.array([0.0, 120.0, 240.0]))

    def sector_of(self, cell: int, point_xy: np.ndarray) -> int:
        """Sector wedge (by azimuth from the cell site) containing a point."""
        c = self.cell_centers()[cell]
        az = math.atan2(point_xy[1] - c[1], point_xy[0] - c[0])
        for s, bore in enumerate(self.sector_boresights()):
            if abs(_wrap_angle(az - bore)) <= math.pi / 3.0 + 1e-12:
                return s
        return 0

    def contains(self, cell: int, point_xy: np.ndarray) -> bool:
        c = self.cell_centers()[cell]
        return _in_hex(point_xy[0] - c[0], point_xy[1] - c[1], self.cell_edge_m)

    def sector_index(self, cell: int, sector: int) -> int:
        return cell * self.sectors_per_cell + sector


def _wrap_angle(a: float | np.ndarray):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _in_hex(x: float, y: float, r: float) -> bool:
    # flat-top hexagon with circumradius r: vertices at (+-r, 0),
    # (+-r/2, +-sqrt(3)r/2)
    return (abs(y) <= math.sqrt(3.0) / 2.0 * r
            and abs(y) <= math.sqrt(3.0) * (r - abs(x)))


@dataclass(frozen=True)
class PropagationModel:
    """Power-law path gain with a 1 m free-space intercept.

    gain = (lambda / (4 pi d0))^2 * (d / d0)^(-alpha) * 10^(shadow_db / 10)
    """

    path_loss_exponent: float = 3.0
    wavelength_m: float = 0.375
    shadowing_variance_db2: float = 36.0
    reference_distance_m: float = 1.0

    def __post_init__(self):
        if self.path_loss_exponent <= 2.0:
            raise ValueError("path loss exponent must exceed 2")
        if self.shadowing_variance_db2 < 0:
            raise ValueError("shadowing variance must be non-negative")

    @property
    def shadowing_std_db(self) -> float:
        return math.sqrt(self.shadowing_variance_db2)

    @property
    def intercept(self) -> float:
        return (self.wavelength_m / (4.0 * math.pi * self.reference_distance_m)) ** 2


def antenna_gain(phi) -> np.ndarray | float:
    """Directional sector pattern: 0.5 (1 + cos phi) * sinc-style beam factor.

    The beam factor sin(0.72 pi sin phi) / (0.72 pi sin phi) tends to 1 as
    sin phi -> 0, which np.sinc handles exactly.
    """
    phi = np.asarray(phi, dtype=float)
    beam = np.sinc(0.72 * np.sin(phi))
    out = 0.5 * (1.0 + np.cos(phi)) * beam
    return float(out) if out.ndim == 0 else out


def path_gain(distance_m, model: PropagationModel, shadow_db=0.0):
    """Linear channel gain; distances are clamped below 1 m."""
    d = np.maximum(np.asarray(distance_m, dtype=float), model.reference_distance_m)
    gain = (model.intercept
            * (d / model.reference_distance_m) ** (-model.path_loss_exponent)
            * 10.0 ** (np.asarray(shadow_db, dtype=float) / 10.0))
    return float(gain) if gain.ndim == 0 else gain


@dataclass(frozen=True)
class UeDrop:
    """One random placement of UEs plus their per-link shadowing draws."""

    layout: HexLayout
    positions: np.ndarray            # (n_ue, 2) m
    drop_cell: np.ndarray            # (n_ue,) cell each UE was dropped in
    drop_sector: np.ndarray          # (n_ue,) sector wedge at drop time
    shadow_db: np.ndarray            # (n_ue, n_sectors) i.i.d. per link
    seed: int

    @property
    def n_ue(self) -> int:
        return self.positions.shape[0]

    def to_csv(self, path, serving_sector: np.ndarray | None = None) -> None:
        serving = serving_sector if serving_sector is not None \
            else np.full(self.n_ue, -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ue_id", "cell", "sector", "x_m", "y_m",
                        "serving_sector", "shadow_db"])
            for i in range(self.n_ue):
                srv = int(serving[i])
                sh = self.shadow_db[i, srv] if srv >= 0 else 0.0
                w.writerow([i, int(self.drop_cell[i]), int(self.drop_sector[i]),
                            f"{self.positions[i, 0]:.3f}",
                            f"{self.positions[i, 1]:.3f}",
                            srv, f"{sh:.6f}"])


def drop_ues(layout: HexLayout, count_per_sector: int, seed: int,
             model: PropagationModel | None = None,
             min_site_distance_m: float = 35.0) -> UeDrop:
    """Uniform UEs per sector wedge with i.i.d. lognormal link shadowing.

    Positions are rejection-sampled inside each cell hexagon, at least
    ``min_site_distance_m`` from the cell site.  Fully reproducible from the
    seed.
    """
    if count_per_sector < 1:
        raise ValueError("need at least one UE per sector")
    model = model or PropagationModel()
    rng = np.random.default_rng(np.random.SeedSequence([seed, layout.rows,
                                                        layout.cols]))
    centers = layout.cell_centers()
    r = layout.cell_edge_m
    pos, cells, sectors = [], [], []
    for cell in range(layout.n_cells):
        for sector in range(layout.sectors_per_cell):
            placed = 0
            while placed < count_per_sector:
                xy = rng.uniform(-r, r, 2)
                if not _in_hex(xy[0], xy[1], r):
                    continue
                if math.hypot(*xy) < min_site_distance_m:
                    continue
                point = centers[cell] + xy
                if layout.sector_of(cell, point) != sector:
                    continue
                pos.append(point)
                cells.append(cell)
                sectors.append(sector)
                placed += 1
    positions = np.array(pos)
    shadow = rng.normal(0.0, model.shadowing_std_db,
                        (positions.shape[0], layout.n_sectors))
    return UeDrop(layout=layout, positions=positions,
                  drop_cell=np.array(cells), drop_sector=np.array(sectors),
                  shadow_db=shadow, seed=seed)


def link_budget(drop: UeDrop, model: PropagationModel) -> np.ndarray:
    """(n_ue, n_sectors) linear gains: path loss x shadowing x antenna pattern."""
    layout = drop.layout
    centers = layout.cell_centers()
    bores = layout.sector_boresights()
    site_xy = np.repeat(centers, layout.sectors_per_cell, axis=0)
    bore = np.tile(bores, layout.n_cells)
    delta = drop.positions[:, None, :] - site_xy[None, :, :]
    dist = np.hypot(delta[..., 0], delta[..., 1])
    az = np.arctan2(delta[..., 1], delta[..., 0])
    ant = antenna_gain(_wrap_angle(az - bore[None, :]))
    return path_gain(dist, model, drop.shadow_db) * ant


def serving_sectors(gains: np.ndarray) -> np.ndarray:
    """Strongest-gain association."""
    return np.argmax(gains, axis=1)
