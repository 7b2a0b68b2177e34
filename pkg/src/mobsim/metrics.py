"""
Aggregation of simulation results: per-page probe latency, an attacker's
threshold classifier, analytic alias probabilities, misspeculation rate and
SAB storage overhead.
"""

from __future__ import annotations

import math
import random
import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Any, Optional

from .address import MASK_POOL, PAGE_SIZE, AddressSpace
from .mob import LoadOp, MemoryOrderBuffer, Model, SimConfig, SimStats
from .oracle import replay_fixed_mask
from .trace import STORE, Trace, TraceOp

PC_TAG_BITS = 48
VULN_FLAG_BITS = 1
PARTIAL_PA_WIDENING_BITS = 12 - 8
SAB_EXTRA_BITS_PER_ENTRY = PC_TAG_BITS + VULN_FLAG_BITS + PARTIAL_PA_WIDENING_BITS


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class PageLatency:
    page: int
    mean: float
    std: float
    n: int
    aliased: bool


@dataclass(frozen=True)
class LatencyProfile:
    per_page: list[PageLatency]

    def means(self, aliased: bool) -> list[float]:
        return [p.mean for p in self.per_page if p.aliased is aliased]


@dataclass(frozen=True)
class DetectionReport:
    threshold: float
    tpr: float
    fpr: float
    accuracy: float
    balanced_accuracy: float
    separation: Optional[float]
    n_aliased: int
    n_clean: int

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if d["separation"] is not None and not math.isfinite(d["separation"]):
            d["separation"] = None
        return d


def per_page_latency(stats: SimStats, metadata: dict[str, Any]) -> LatencyProfile:
    """Group probe-load latencies by probe page and attach ground-truth labels."""
    try:
        base = metadata["probe_base_vpn"]
        aliased = set(metadata["labels"]["aliased_pages"])
    except KeyError as exc:
        raise MetricsError(f"trace metadata lacks probe information ({exc})") from None
    samples: dict[int, list[int]] = defaultdict(list)
    for rec in stats.per_load_latency:
        if rec.is_probe:
            samples[rec.page - base].append(rec.latency)
    if not samples:
        raise MetricsError("no probe loads in results; not a spoiler trace")
    rows = [
        PageLatency(
            page=page,
            mean=statistics.fmean(lat),
            std=statistics.pstdev(lat),
            n=len(lat),
            aliased=page in aliased,
        )
        for page, lat in sorted(samples.items())
    ]
    return LatencyProfile(rows)


def _pooled_separation(pos: list[float], neg: list[float]) -> Optional[float]:
    if not pos or not neg:
        return None
    diff = statistics.fmean(pos) - statistics.fmean(neg)
    dof = len(pos) + len(neg) - 2
    if dof <= 0:
        return None
    ss = sum((x - statistics.fmean(pos)) ** 2 for x in pos)
    ss += sum((x - statistics.fmean(neg)) ** 2 for x in neg)
    pooled = math.sqrt(ss / dof)
    if pooled == 0.0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return diff / pooled


def classify_aliased(profile: LatencyProfile, balanced: bool = False) -> DetectionReport:
    """Best single-threshold attacker: a page is called aliased if its mean exceeds the threshold.

    The threshold sweeps every midpoint of the sorted page means plus one point
    below and one above all of them. ``balanced=True`` optimizes the mean of the
    per-class recalls instead of raw accuracy, which is what a balanced prior
    over planted and clean pages gives.
    """
    pages = profile.per_page
    if not pages:
        raise MetricsError("empty latency profile")
    pos = [p.mean for p in pages if p.aliased]
    neg = [p.mean for p in pages if not p.aliased]
    levels = sorted({p.mean for p in pages})
    thresholds = [levels[0] - 0.5]
    thresholds += [(a + b) / 2 for a, b in zip(levels, levels[1:])]
    thresholds.append(levels[-1] + 0.5)

    best = None
    for thr in thresholds:
        tp = sum(m > thr for m in pos)
        fp = sum(m > thr for m in neg)
        tpr = tp / len(pos) if pos else 0.0
        fpr = fp / len(neg) if neg else 0.0
        acc = (tp + len(neg) - fp) / len(pages)
        bacc = (tpr + 1.0 - fpr) / 2 if pos and neg else acc
        score = bacc if balanced else acc
        if best is None or score > best[0]:
            best = (score, thr, tpr, fpr, acc, bacc)
    _, thr, tpr, fpr, acc, bacc = best
    return DetectionReport(
        threshold=thr,
        tpr=tpr,
        fpr=fpr,
        accuracy=acc,
        balanced_accuracy=bacc,
        separation=_pooled_separation(pos, neg),
        n_aliased=len(pos),
        n_clean=len(neg),
    )


def analytic_alias_prob(mask_width: int) -> float:
    """Chance two independent uniform PAs agree on ``mask_width`` compared bits."""
    if mask_width < 0:
        raise MetricsError("mask width must be >= 0")
    return math.ldexp(1.0, -mask_width)


def expected_violations_oracle(trace: Trace, space: AddressSpace, config: SimConfig) -> int:
    return replay_fixed_mask(trace, space, config).violations


def misspec_rate(stats: SimStats) -> float:
    if stats.total_loads <= 0:
        raise MetricsError("misspeculation rate undefined for a trace without loads")
    return stats.misspeculations / stats.total_loads


def sab_overhead_bits(entries: int) -> int:
    if entries < 0:
        raise MetricsError("entry count must be >= 0")
    return entries * SAB_EXTRA_BITS_PER_ENTRY


@dataclass(frozen=True)
class RemaskTrialResult:
    trials: int
    remasks: int
    hits: int

    @property
    def rate(self) -> float:
        return self.hits / self.trials


_REMASK_STORE_BASE = 0x6100_0000_0000
_REMASK_ALIAS_BASE = 0x6200_0000_0000
_REMASK_PROBE_BASE = 0x6300_0000_0000
_REMASK_OFFSET = 0x180
_ATTACK_PC = 0x404000
_PROBE_PC = 0x404040
_STORE_PC = 0x404080


def post_remask_misspec_rate(
    trials: int, seed: int, mask_width: int = 12, config: Optional[SimConfig] = None
) -> RemaskTrialResult:
    """Misspeculation frequency of a fresh random probe issued right after a remask.

    Each trial runs through the M3 simulator: a store, then a load planted to
    agree with it on every pool bit (so it forwards under any mask and
    misspeculates, forcing a remask), then a probe to a fresh random page with a
    different PC. ``hits`` counts probes that misspeculated.
    """
    if config is None:
        config = SimConfig(Model.M3, seed, mask_width=mask_width)
    if config.model is not Model.M3:
        raise MetricsError("remask trials need the M3 configuration")
    space = AddressSpace(seed)
    mob = MemoryOrderBuffer(config, space)
    rng = random.Random(seed ^ 0xA5A5_A5A5)
    seq = 0
    hits = 0
    for t in range(trials):
        st = TraceOp(seq, STORE, _REMASK_STORE_BASE + t * PAGE_SIZE + _REMASK_OFFSET, _STORE_PC)
        entry = mob.sab_insert(st)
        alias_va = _REMASK_ALIAS_BASE + t * PAGE_SIZE + _REMASK_OFFSET
        space.plant_alias(alias_va, entry.pa, MASK_POOL)
        before = mob.stats.remask_events
        mob.execute_load(LoadOp(seq + 1, _ATTACK_PC, alias_va, True))
        if mob.stats.remask_events != before + 1:
            raise MetricsError(f"trial {t}: planted alias did not trigger a remask")
        probe_va = _REMASK_PROBE_BASE + rng.randrange(1 << 32) * PAGE_SIZE + _REMASK_OFFSET
        misses = mob.stats.misspeculations
        mob.execute_load(LoadOp(seq + 2, _PROBE_PC, probe_va, True))
        hits += mob.stats.misspeculations > misses
        seq += 3
    return RemaskTrialResult(trials, mob.stats.remask_events, hits)

