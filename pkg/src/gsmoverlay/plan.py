"""GSM frequency planning across the network and FFR low-power sizing.

Twelve 200 kHz GSM carriers live inside a contiguous punctured portion of
the LTE channel: nine BCCH carriers in three groups (A/B/C, reuse 3/9 -- each
cell uses one group, one carrier per sector) and three traffic carriers
(D1..D3, reuse 1/3 -- every cell uses all three, one per sector).  A sector
may reuse the other two BCCH groups' carriers for low-power LTE (fractional
frequency reuse), because those are transmitted only in other cells; its own
and its co-sited sectors' carriers are forbidden.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError
from .geometry import HexLayout, PropagationModel, path_gain
from .spectral import (GSM_CHANNEL_BW_HZ, OfdmConfig, PrbGrid, PuncturePlan)

BCCH_GROUPS = ("A", "B", "C")
DEFAULT_PORTION_START_HZ = 900e3   # off-centre, clear of the central 1.08 MHz
DEFAULT_GSM_OFFSET_DB = 13.56


class PrbClass(Enum):
    NORMAL = "NORMAL"
    ADJACENT = "ADJACENT"
    FFR = "FFR"
    RESERVED = "RESERVED"


@dataclass(frozen=True)
class Carrier:
    label: str          # e.g. "A2", "D1"
    group: str          # "A"/"B"/"C"/"D"
    slot: int           # sector index 0..2 within the group
    center_hz: float

    @property
    def span(self) -> tuple[float, float]:
        return (self.center_hz - GSM_CHANNEL_BW_HZ / 2.0,
                self.center_hz + GSM_CHANNEL_BW_HZ / 2.0)


@dataclass(frozen=True)
class SectorAssignment:
    bcch: str
    traffic: str
    reusable: tuple[str, ...]
    forbidden: tuple[str, ...]


@dataclass(frozen=True)
class FrequencyPlan:
    layout: HexLayout
    carriers: tuple[Carrier, ...]
    cell_group: tuple[str, ...]                  # BCCH group per cell
    gsm_offset_db: float = DEFAULT_GSM_OFFSET_DB

    def carrier(self, label: str) -> Carrier:
        for c in self.carriers:
            if c.label == label:
                return c
        raise KeyError(label)

    def assignment(self, cell: int, sector: int) -> SectorAssignment:
        group = self.cell_group[cell]
        own_bcch = f"{group}{sector + 1}"
        own_traffic = f"D{sector + 1}"
        forbidden = tuple(sorted(
            ({f"{group}{j + 1}" for j in range(3)} |
             {f"D{j + 1}" for j in range(3)}) - {own_bcch, own_traffic}))
        reusable = tuple(sorted(
            f"{g}{j + 1}" for g in BCCH_GROUPS if g != group for j in range(3)))
        return SectorAssignment(bcch=own_bcch, traffic=own_traffic,
                                reusable=reusable, forbidden=forbidden)

    def own_carriers(self, cell: int, sector: int) -> tuple[Carrier, Carrier]:
        a = self.assignment(cell, sector)
        return (self.carrier(a.bcch), self.carrier(a.traffic))

    def portion_span(self) -> tuple[float, float]:
        spans = [c.span for c in self.carriers]
        return (min(s[0] for s in spans), max(s[1] for s in spans))

    def puncture_plan(self, config: OfdmConfig | None = None,
                      guard_subcarriers_per_edge: int = 2) -> PuncturePlan:
        """Network-wide punctured subcarrier set covering all twelve carriers."""
        channels = [(c.center_hz, self.gsm_offset_db) for c in self.carriers]
        return PuncturePlan.from_channels(channels, config or OfdmConfig(),
                                          guard_subcarriers_per_edge)

    def to_csv(self, path, prbs: PrbGrid, p_max_w: float,
               ffr_power_w_per_prb: float) -> None:
        plan = self.puncture_plan(prbs.config)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "sector", "bcch_carrier", "traffic_carrier",
                        "prb_index", "class", "power_w"])
            for cell in range(self.layout.n_cells):
                for sector in range(self.layout.sectors_per_cell):
                    a = self.assignment(cell, sector)
                    classes = classify_prbs(cell, sector, self, plan, prbs,
                                            p_max_w=p_max_w,
                                            ffr_power_w=ffr_power_w_per_prb)
                    for prb, (cls, power) in enumerate(classes):
                        w.writerow([cell, sector, a.bcch, a.traffic, prb,
                                    cls.value, f"{power:.6f}"])


def _axial_coords(layout: HexLayout) -> list[tuple[int, int]]:
    # odd-q offset -> axial, for the flat-top lattice used by HexLayout
    coords = []
    for i in range(layout.rows):
        for j in range(layout.cols):
            q = j
            r = i - (j - (j % 2)) // 2
            coords.append((q, r))
    return coords


def build_reuse_plan(layout: HexLayout,
                     portion_start_hz: float = DEFAULT_PORTION_START_HZ,
                     gsm_offset_db: float = DEFAULT_GSM_OFFSET_DB) -> FrequencyPlan:
    """Tile BCCH groups over cells (period 3) and slot carriers over sectors.

    The per-cell group comes from a proper 3-colouring of the hex lattice, so
    any two adjacent cells use different BCCH groups.
    """
    if layout.sectors_per_cell != 3:
        raise ConfigError("frequency plan requires 3 sectors per cell")
    order = [f"{g}{j + 1}" for g in ("A", "B", "C", "D") for j in range(3)]
    carriers = tuple(
        Carrier(label=lbl, group=lbl[0], slot=int(lbl[1]) - 1,
                center_hz=portion_start_hz + GSM_CHANNEL_BW_HZ * (0.5 + i))
        for i, lbl in enumerate(order))
    groups = tuple(BCCH_GROUPS[(q + 2 * r) % 3]
                   for q, r in _axial_coords(layout))
    return FrequencyPlan(layout=layout, carriers=carriers, cell_group=groups,
                         gsm_offset_db=gsm_offset_db)


@dataclass(frozen=True)
class FfrConfig:
    """Inputs of the worst-case low-power bound for reused GSM carriers."""

    p_g: float = 20.0          # GSM transmit power per 200 kHz channel, W
    gamma: float = 10.0        # GSM SINR threshold, linear
    n0: float = 0.0            # noise power per 200 kHz channel, W
    h: float = 1.0             # mean channel gain at the worst-case geometry

    def __post_init__(self):
        if min(self.p_g, self.gamma, self.h) <= 0 or self.n0 < 0:
            raise ValueError("FFR parameters must be positive (noise >= 0)")


@dataclass(frozen=True)
class FfrPower:
    p_s: float
    enabled: bool


def ffr_low_power(config: FfrConfig) -> FfrPower:
    """Largest LTE reuse power (W per 200 kHz) keeping worst-case GSM SINR
    at its threshold: P_s = P_g / (2 gamma) - N0 / (2 H), floored at zero.

    The worst case has two equal-gain low-power interferers on the
    co-channel GSM link, so P_g H / (2 P_s H + N0) = gamma at equality.
    """
    p_s = config.p_g / (2.0 * config.gamma) - config.n0 / (2.0 * config.h)
    if p_s <= 0.0:
        return FfrPower(p_s=0.0, enabled=False)
    return FfrPower(p_s=p_s, enabled=True)


def worst_case_ffr_config(layout: HexLayout, model: PropagationModel,
                          p_g: float, gamma: float,
                          noise_psd_w_per_hz: float) -> FfrConfig:
    """FFR bound inputs at the symmetric worst case: all three links at one
    cell-edge length, no shadowing."""
    h = path_gain(layout.cell_edge_m, model, 0.0)
    return FfrConfig(p_g=p_g, gamma=gamma,
                     n0=noise_psd_w_per_hz * GSM_CHANNEL_BW_HZ, h=h)


def classify_prbs(cell: int, sector: int, plan: FrequencyPlan,
                  puncture: PuncturePlan, prbs: PrbGrid,
                  p_max_w: float = 40.0,
                  ffr_power_w: float | None = None) -> list[tuple[PrbClass, float]]:
    """Per-PRB class and transmit power for one sector.

    RESERVED covers the sector's own GSM carriers, its co-sited sectors'
    carriers, the guard, and any partially punctured PRB not cleanly inside
    reusable spectrum.  FFR PRBs sit wholly on other cells' carriers and are
    usable at the low reuse power; ADJACENT PRBs border the reserved block;
    the rest are NORMAL.  Normal/adjacent PRBs share ``p_max_w`` equally.
    """
    assignment = plan.assignment(cell, sector)
    reserved_sc = puncture.reserved_indices()
    reserved_prbs = {prbs.prb_of_subcarrier(k) for k in reserved_sc}
    reusable_spans = [plan.carrier(lbl).span for lbl in assignment.reusable]
    portion = plan.portion_span()
    classes: list[PrbClass] = []
    for p in range(prbs.prb_count):
        if p not in reserved_prbs:
            classes.append(PrbClass.NORMAL)
            continue
        lo, hi = prbs.band_of(p)
        in_portion = (max(lo, portion[0]), min(hi, portion[1]))
        if in_portion[1] <= in_portion[0]:
            # guard-only PRB outside the carrier block: not reusable
            classes.append(PrbClass.RESERVED)
            continue
        covered = sum(max(0.0, min(in_portion[1], b) - max(in_portion[0], a))
                      for a, b in reusable_spans)
        if covered >= (in_portion[1] - in_portion[0]) - 1e-6:
            classes.append(PrbClass.FFR)
        else:
            classes.append(PrbClass.RESERVED)
    for p, cls in enumerate(classes):
        if cls is not PrbClass.NORMAL:
            continue
        if (p > 0 and classes[p - 1] in (PrbClass.RESERVED, PrbClass.FFR)) or \
           (p + 1 < len(classes) and classes[p + 1] in (PrbClass.RESERVED,
                                                        PrbClass.FFR)):
            classes[p] = PrbClass.ADJACENT
    n_usable = sum(1 for c in classes if c in (PrbClass.NORMAL, PrbClass.ADJACENT))
    p_norm = p_max_w / n_usable if n_usable else 0.0
    p_ffr = ffr_power_w if ffr_power_w is not None else 0.0
    out = []
    for cls in classes:
        if cls in (PrbClass.NORMAL, PrbClass.ADJACENT):
            out.append((cls, p_norm))
        elif cls is PrbClass.FFR:
            out.append((cls, p_ffr))
        else:
            out.append((cls, 0.0))
    return out
