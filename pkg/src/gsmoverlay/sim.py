"""TTI-granular multi-cell downlink simulation with proportional-fair scheduling.

Scenario modes:

* ``BASELINE``   - plain LTE, no puncturing.
* ``PF_NO_GSM``  - the overlay portion is punctured but carries nothing.
* ``PF``         - punctured portion carries GSM (leakage + receiver pickup
                   interference onto LTE).
* ``PF_FFR``     - additionally, each sector reuses other cells' GSM carriers
                   at the low FFR power.

Full-buffer traffic: every sector transmits on every PRB its class allows in
every TTI, so interference to the centre cell is schedule-independent and only
the centre-cell sectors need the scheduling loop.  Statistics come from UEs
served by the centre cell.  Everything is deterministic given the seed,
including under drop-level parallelism.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError
from .geometry import (HexLayout, PropagationModel, UeDrop, drop_ues,
                       link_budget, serving_sectors)
from .plan import (FrequencyPlan, PrbClass, classify_prbs, ffr_low_power,
                   worst_case_ffr_config)
from .spectral import (GSM_CHANNEL_BW_HZ, OfdmConfig, PrbGrid, PuncturePlan,
                       DEFAULT_MASK, SpectralDensity, FrequencyGrid,
                       grabbed_inband_powers_fast, leak_band_integral)

logger = logging.getLogger(__name__)

TTI_SECONDS = 1e-3


class ScenarioMode(Enum):
    BASELINE = "BASELINE"
    PF_NO_GSM = "PF_NO_GSM"
    PF = "PF"
    PF_FFR = "PF_FFR"

    @property
    def punctured(self) -> bool:
        return self is not ScenarioMode.BASELINE

    @property
    def gsm_active(self) -> bool:
        return self in (ScenarioMode.PF, ScenarioMode.PF_FFR)

    @property
    def ffr_active(self) -> bool:
        return self is ScenarioMode.PF_FFR


_MODE_IDS = {m: i for i, m in enumerate(ScenarioMode)}


@dataclass(frozen=True)
class ScenarioConfig:
    mode: ScenarioMode
    ttis: int = 2000
    warmup_ttis: int = 200
    drops: int = 3
    pf_filter_ttis: float = 1000.0          # N_T of the throughput filter
    gsm_offset_db: float = 13.56
    gamma_gap: float = 2.0                  # 3 dB Shannon gap, linear
    p_max_w: float = 40.0
    seed: int = 1
    include_leakage: bool = True
    include_ics: bool = True

    def __post_init__(self):
        if self.ttis < 1 or self.drops < 1:
            raise ValueError("need at least one TTI and one drop")
        if not 0 <= self.warmup_ttis < self.ttis:
            raise ValueError("warm-up must leave at least one counted TTI")
        if self.gamma_gap < 1.0:
            raise ValueError("Shannon gap must be >= 1")
        if self.pf_filter_ttis < 1.0:
            raise ValueError("PF filter constant must be >= 1")


def shannon_rate(sinr: float | np.ndarray, gamma_gap: float,
                 bandwidth: float) -> float | np.ndarray:
    """Gap-penalised Shannon rate: B log2(1 + sinr / gamma) in bit/s."""
    sinr = np.asarray(sinr, dtype=float)
    if np.any(sinr < 0):
        raise ValueError("SINR must be non-negative")
    out = bandwidth * np.log2(1.0 + sinr / gamma_gap)
    return float(out) if out.ndim == 0 else out


def update_throughput(t_k: np.ndarray, served_rate: np.ndarray,
                      n_t: float) -> np.ndarray:
    """One step of the PF low-pass filter T <- (1 - 1/N_T) T + served / N_T."""
    if n_t < 1.0:
        raise ValueError("N_T must be >= 1")
    return (1.0 - 1.0 / n_t) * t_k + served_rate / n_t


def pf_schedule(rates: np.ndarray, t_k: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    """Winner per PRB: argmax_k rates[k, m] / T_k, uniform random tie-break.

    Returns -1 for PRBs with no eligible UE (rates has zero rows).
    """
    n_ue, n_prb = rates.shape
    if n_ue == 0:
        logger.warning("no eligible UE; leaving %d PRBs idle", n_prb)
        return np.full(n_prb, -1)
    metric = rates / t_k[:, None]
    perm = rng.permutation(n_ue)
    return perm[np.argmax(metric[perm], axis=0)]


# --- per-sector transmit and interference tables ------------------------------


@dataclass(frozen=True)
class NetworkTables:
    """Per-sector, per-PRB transmit powers and GSM interference terms (W)."""

    lte_power: np.ndarray       # (n_sectors, n_prb) LTE transmit power
    gsm_interference: np.ndarray  # (n_sectors, n_prb) emission seen in a PRB
    usable: np.ndarray          # (n_sectors, n_prb) bool, schedulable PRBs
    prb_class: np.ndarray       # (n_sectors, n_prb) int, PrbClass ordinal
    thermal_per_prb: float
    ffr_power_w_per_prb: float


CLASS_ORDER = (PrbClass.NORMAL, PrbClass.ADJACENT, PrbClass.FFR, PrbClass.RESERVED)
CLASS_INDEX = {c: i for i, c in enumerate(CLASS_ORDER)}


def _carrier_prb_interference(freq_plan: FrequencyPlan, prbs: PrbGrid,
                              scenario: ScenarioConfig,
                              lte_uniform_psd: float) -> np.ndarray:
    """(n_carriers, n_prb) GSM power appearing in each PRB band.

    With leakage and receiver pickup both enabled this is the windowed (ICS)
    view of the full emission, which subsumes raw in-band leakage; the flags
    select the reduced models.
    """
    cfg = prbs.config
    n_prb = prbs.prb_count
    carriers = freq_plan.carriers
    out = np.zeros((len(carriers), n_prb))
    if not (scenario.include_leakage or scenario.include_ics):
        return out
    psd = lte_uniform_psd * 10.0 ** (scenario.gsm_offset_db / 10.0)
    bands = [prbs.band_of(m) for m in range(n_prb)]
    if scenario.include_leakage and not scenario.include_ics:
        for i, c in enumerate(carriers):
            out[i] = [psd * leak_band_integral(lo, hi, c.center_hz, DEFAULT_MASK)
                      for lo, hi in bands]
        return out
    span = max(abs(b) for band in bands for b in band) + 1.5e6
    span = math.ceil(span / 1e3) * 1e3
    grid = FrequencyGrid(-span, span, 1e3)
    freqs = grid.frequencies()
    centers = np.array([(lo + hi) / 2.0 for lo, hi in bands])
    b = prbs.prb_bandwidth
    for i, c in enumerate(carriers):
        if scenario.include_leakage:
            vals = psd * 10.0 ** (-DEFAULT_MASK.attenuation_db(freqs - c.center_hz)
                                  / 10.0)
        else:
            vals = np.where(np.abs(freqs - c.center_hz) <= GSM_CHANNEL_BW_HZ / 2.0,
                            psd, 0.0)
        emission = SpectralDensity(grid, vals)
        out[i] = grabbed_inband_powers_fast(emission, cfg.symbol_time, centers,
                                            b, nodes_per_band=144)
    return out


def build_network_tables(layout: HexLayout, freq_plan: FrequencyPlan,
                         puncture: PuncturePlan, prbs: PrbGrid,
                         scenario: ScenarioConfig,
                         noise_psd_w_per_hz: float,
                         model: PropagationModel) -> NetworkTables:
    n_sectors = layout.n_sectors
    n_prb = prbs.prb_count
    lte_power = np.zeros((n_sectors, n_prb))
    gsm = np.zeros((n_sectors, n_prb))
    usable = np.zeros((n_sectors, n_prb), dtype=bool)
    prb_class = np.full((n_sectors, n_prb), CLASS_INDEX[PrbClass.NORMAL])
    thermal_prb = noise_psd_w_per_hz * prbs.prb_bandwidth
    lte_uniform_psd = scenario.p_max_w / (prbs.config.q
                                          * prbs.config.subcarrier_bandwidth)

    if scenario.mode is ScenarioMode.BASELINE:
        lte_power[:] = scenario.p_max_w / n_prb
        usable[:] = True
        return NetworkTables(lte_power, gsm, usable, prb_class, thermal_prb, 0.0)

    p_g = lte_uniform_psd * 10.0 ** (scenario.gsm_offset_db / 10.0) \
        * GSM_CHANNEL_BW_HZ
    ffr = ffr_low_power(worst_case_ffr_config(
        layout, model, p_g=p_g, gamma=10.0,
        noise_psd_w_per_hz=noise_psd_w_per_hz))
    p_ffr_prb = ffr.p_s * prbs.prb_bandwidth / GSM_CHANNEL_BW_HZ

    carrier_int = (_carrier_prb_interference(freq_plan, prbs, scenario,
                                             lte_uniform_psd)
                   if scenario.mode.gsm_active else None)
    label_to_idx = {c.label: i for i, c in enumerate(freq_plan.carriers)}

    for cell in range(layout.n_cells):
        for sector in range(layout.sectors_per_cell):
            s = layout.sector_index(cell, sector)
            classes = classify_prbs(cell, sector, freq_plan, puncture, prbs,
                                    p_max_w=scenario.p_max_w,
                                    ffr_power_w=p_ffr_prb)
            for m, (cls, power) in enumerate(classes):
                prb_class[s, m] = CLASS_INDEX[cls]
                if cls in (PrbClass.NORMAL, PrbClass.ADJACENT):
                    lte_power[s, m] = power
                    usable[s, m] = True
                elif cls is PrbClass.FFR and scenario.mode.ffr_active:
                    lte_power[s, m] = power
                    usable[s, m] = True
            if scenario.mode.gsm_active and carrier_int is not None:
                a = freq_plan.assignment(cell, sector)
                for lbl in (a.bcch, a.traffic):
                    gsm[s] += carrier_int[label_to_idx[lbl]]
    return NetworkTables(lte_power, gsm, usable, prb_class, thermal_prb,
                         p_ffr_prb)


def per_prb_sinr(ue: int, prb: int, tables: NetworkTables, gains: np.ndarray,
                 serving: int) -> float:
    """Linear SINR for one UE on one PRB; RESERVED PRBs are a domain error."""
    if not tables.usable[serving, prb]:
        raise ValueError(f"PRB {prb} is not usable by sector {serving}")
    g = gains[ue]
    signal = tables.lte_power[serving, prb] * g[serving]
    interference = float(tables.lte_power[:, prb] @ g) - signal
    interference += float(tables.gsm_interference[:, prb] @ g)
    return signal / (interference + tables.thermal_per_prb)


def rate_table(tables: NetworkTables, gains: np.ndarray, ue_ids: np.ndarray,
               serving: int, gamma_gap: float, prb_bandwidth: float
               ) -> tuple[np.ndarray, np.ndarray]:
    """Rates (n_ue, n_usable) for one sector plus the usable PRB indices."""
    usable = np.nonzero(tables.usable[serving])[0]
    g = gains[ue_ids]                                  # (n_ue, n_sectors)
    rx = g @ tables.lte_power[:, usable]               # all-sector LTE power
    sig = np.outer(g[:, serving], tables.lte_power[serving, usable])
    interference = rx - sig + g @ tables.gsm_interference[:, usable]
    sinr = sig / (interference + tables.thermal_per_prb)
    return shannon_rate(sinr, gamma_gap, prb_bandwidth), usable


# --- the TTI loop --------------------------------------------------------------


@dataclass(frozen=True)
class SectorRun:
    """Scheduling outcome for one centre-cell sector in one drop."""

    drop_index: int
    sector: int
    ue_ids: np.ndarray            # global UE ids in the drop
    throughput_bps: np.ndarray    # long-run served rate per UE
    wins_by_class: np.ndarray     # (n_ue, 4) PRB wins per class (post warm-up)
    prbs_by_class: np.ndarray     # (4,) usable PRB count per class
    decisions_by_class: np.ndarray  # (4,) total scheduling decisions per class


@dataclass(frozen=True)
class RateStats:
    throughput_bps: np.ndarray    # pooled across drops and centre sectors
    mean_bps: float
    top5_bps: float
    bottom5_bps: float
    cdf_rate_bps: np.ndarray
    cdf_f: np.ndarray
    alloc_prob: dict[str, np.ndarray]   # class -> probability by rank bin
    rank_bins: int
    sector_runs: tuple[SectorRun, ...]
    ue_rows: tuple[tuple[int, int, int, float], ...]  # (drop, ue_id, rank, bps)


def run_drop(scenario: ScenarioConfig, drop: UeDrop, tables: NetworkTables,
             layout: HexLayout, prbs: PrbGrid, model: PropagationModel,
             drop_index: int = 0) -> list[SectorRun]:
    """Run the TTI loop for every centre-cell sector of one drop."""
    gains = link_budget(drop, model)
    serving = serving_sectors(gains)
    center = layout.center_cell
    runs: list[SectorRun] = []
    for sector in range(layout.sectors_per_cell):
        s = layout.sector_index(center, sector)
        ue_ids = np.nonzero(serving == s)[0]
        if ue_ids.size == 0:
            logger.warning("drop %d: centre sector %d has no UEs", drop_index, s)
            continue
        rates, usable = rate_table(tables, gains, ue_ids, s,
                                   scenario.gamma_gap, prbs.prb_bandwidth)
        rng = np.random.default_rng(np.random.SeedSequence(
            [scenario.seed, _MODE_IDS[scenario.mode], drop_index, sector]))
        runs.append(_schedule_sector(scenario, rates, usable, tables, s,
                                     ue_ids, drop_index, sector, rng))
    return runs


def _schedule_sector(scenario: ScenarioConfig, rates: np.ndarray,
                     usable: np.ndarray, tables: NetworkTables, s: int,
                     ue_ids: np.ndarray, drop_index: int, sector: int,
                     rng: np.random.Generator) -> SectorRun:
    n_ue, n_prb = rates.shape
    classes = tables.prb_class[s, usable]
    # first TTI: round-robin, seeding the PF filter state
    winners = np.arange(n_prb) % n_ue
    served = np.bincount(winners, weights=rates[winners, np.arange(n_prb)],
                         minlength=n_ue)
    t_k = np.maximum(served, 1.0)
    bits = np.zeros(n_ue)
    wins = np.zeros((n_ue, len(CLASS_ORDER)))
    counted = 0
    for tti in range(1, scenario.ttis):
        winners = pf_schedule(rates, t_k, rng)
        won_rate = rates[winners, np.arange(n_prb)]
        served = np.bincount(winners, weights=won_rate, minlength=n_ue)
        if tti >= scenario.warmup_ttis:
            bits += served * TTI_SECONDS
            np.add.at(wins, (winners, classes), 1.0)
            counted += 1
        t_k = update_throughput(t_k, served, scenario.pf_filter_ttis)
    duration = max(counted, 1) * TTI_SECONDS
    prbs_by_class = np.bincount(classes, minlength=len(CLASS_ORDER)).astype(float)
    return SectorRun(drop_index=drop_index, sector=sector, ue_ids=ue_ids,
                     throughput_bps=bits / duration, wins_by_class=wins,
                     prbs_by_class=prbs_by_class,
                     decisions_by_class=prbs_by_class * counted)


def aggregate(runs: list[SectorRun], rank_bins: int = 12) -> RateStats:
    """Pool per-UE throughputs across drops and sectors; Fig.-style stats."""
    if not runs:
        raise ValueError("no sector runs to aggregate")
    ordered = sorted(runs, key=lambda r: (r.drop_index, r.sector))
    pooled = np.concatenate([r.throughput_bps for r in ordered])
    n = pooled.size
    k = max(1, math.ceil(0.05 * n))
    srt = np.sort(pooled)
    mean = float(pooled.mean())
    top5 = float(srt[-k:].mean())
    bottom5 = float(srt[:k].mean())
    cdf_x = srt
    cdf_f = np.arange(1, n + 1) / n
    # allocation probability by within-sector rate rank (rank 1 = lowest rate)
    wins_by_bin = {c.value: np.zeros(rank_bins) for c in CLASS_ORDER}
    totals = {c.value: 0.0 for c in CLASS_ORDER}
    ue_rows: list[tuple[int, int, int, float]] = []
    for r in ordered:
        order = np.argsort(r.throughput_bps, kind="stable")
        n_ue = order.size
        for pos, idx in enumerate(order):
            bin_ = min(rank_bins - 1, int(pos * rank_bins / n_ue))
            for ci, cls in enumerate(CLASS_ORDER):
                wins_by_bin[cls.value][bin_] += r.wins_by_class[idx, ci]
            ue_rows.append((r.drop_index, int(r.ue_ids[idx]), pos + 1,
                            float(r.throughput_bps[idx])))
        for ci, cls in enumerate(CLASS_ORDER):
            totals[cls.value] += r.wins_by_class[:, ci].sum()
    alloc = {cls: (wins_by_bin[cls] / totals[cls] if totals[cls] > 0
                   else np.zeros(rank_bins))
             for cls in wins_by_bin}
    return RateStats(throughput_bps=pooled, mean_bps=mean, top5_bps=top5,
                     bottom5_bps=bottom5, cdf_rate_bps=cdf_x, cdf_f=cdf_f,
                     alloc_prob=alloc, rank_bins=rank_bins,
                     sector_runs=tuple(ordered),
                     ue_rows=tuple(sorted(ue_rows)))


def run_scenario(scenario: ScenarioConfig, layout: HexLayout,
                 freq_plan: FrequencyPlan | None, prbs: PrbGrid,
                 model: PropagationModel, noise_psd_w_per_hz: float,
                 ues_per_sector: int,
                 min_site_distance_m: float = 35.0,
                 drop_indices: list[int] | None = None) -> list[SectorRun]:
    """All drops of one scenario, sequentially. Deterministic given the seed."""
    if scenario.mode.punctured and freq_plan is None:
        raise ConfigError("punctured scenarios need a frequency plan")
    puncture = (freq_plan.puncture_plan(prbs.config)
                if scenario.mode.punctured else
                PuncturePlan(config=prbs.config, punctured=frozenset()))
    plan_for_tables = freq_plan if scenario.mode.punctured else \
        _empty_plan(layout)
    tables = build_network_tables(layout, plan_for_tables, puncture, prbs,
                                  scenario, noise_psd_w_per_hz, model)
    runs: list[SectorRun] = []
    for d in (drop_indices if drop_indices is not None
              else range(scenario.drops)):
        drop = drop_ues(layout, ues_per_sector,
                        seed=_drop_seed(scenario.seed, d), model=model,
                        min_site_distance_m=min_site_distance_m)
        runs.extend(run_drop(scenario, drop, tables, layout, prbs, model,
                             drop_index=d))
    return runs


def _drop_seed(master_seed: int, drop_index: int) -> int:
    # positions/shadowing are shared by all scenarios of a drop index
    return int(np.random.SeedSequence([master_seed, 1000 + drop_index])
               .generate_state(1)[0])


def _empty_plan(layout: HexLayout) -> FrequencyPlan:
    from .plan import build_reuse_plan
    return build_reuse_plan(layout)
