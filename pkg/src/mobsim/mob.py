"""
Memory Order Buffer simulator.

Models the store address buffer (SAB) and the load-side dependence pipeline
for three configurations:

* M1: VA-only forwarding. A 4 KB alias (loosenet hit, finenet miss) always
  stalls; no physical bits are consulted.
* M2: fixed 8-bit partial-PA comparison on bits [19:12]. A partial hit
  forwards speculatively; a wrong forward is squashed and the load reissues
  against the same store, again and again (the SPOILER signal).
* M3: randomized 12-bit masked comparison. A misspeculation flags the store
  entry, tags it with the load PC (suppressing further forwards to that PC)
  and draws a fresh mask.

Timing (integer cycles, in-order, blocking loads):

* Each cycle, at most one SAB entry drains: the oldest, once
  ``resolve_cycle + drain_delay`` has passed. Drains happen before the
  frontend acts in that cycle.
* A store occupies the frontend for one cycle. If the SAB is full it waits
  for the next drain. Its full PA resolves ``store_resolve_delay`` cycles
  after insertion.
* A load attempt at cycle ``a`` looks at the youngest older store whose page
  offset matches (loosenet). If that store is still unresolved and not a
  full-VA match, the load waits until it resolves and tries again. A
  speculative forward that turns out wrong costs ``forward + squash_penalty``
  and the load reissues. The final attempt completes at
  ``a + base_load + adder`` and the next op starts at that cycle.
"""

from __future__ import annotations

import enum
import random
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

from .address import (
    MASK_POOL,
    OFFSET_MASK,
    AddressSpace,
    BitMask,
    extract_bits,
    make_mask,
    page_of,
)
from .trace import STORE, Trace, TraceOp, space_from_metadata

DEFAULT_SAB_CAPACITY = 56
MAX_REISSUES = 64


class Model(str, enum.Enum):
    M1 = "m1"
    M2 = "m2"
    M3 = "m3"

    @property
    def speculates_on_pa(self) -> bool:
        return self is not Model.M1


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Latencies:
    base_load: int = 4
    forward: int = 5
    alias4k_stall: int = 3
    squash_penalty: int = 12

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value <= 0:
                raise ValueError(f"latency {name} must be positive, got {value}")


@dataclass(frozen=True)
class SimConfig:
    """Simulator configuration. ``mask_width`` defaults to 8 for M2 and 12 for M3."""

    model: Model
    seed: int
    sab_capacity: int = DEFAULT_SAB_CAPACITY
    mask_width: Optional[int] = None
    pool: tuple[int, ...] = MASK_POOL
    latencies: Latencies = field(default_factory=Latencies)
    store_resolve_delay: int = 8
    drain_delay: int = 64
    max_reissues: int = MAX_REISSUES

    def __post_init__(self) -> None:
        object.__setattr__(self, "model", Model(self.model))
        object.__setattr__(self, "pool", tuple(self.pool))
        if self.mask_width is None:
            object.__setattr__(self, "mask_width", 8 if self.model is Model.M2 else 12)
        if self.sab_capacity < 1:
            raise ValueError("sab_capacity must be at least 1")
        if not 0 <= self.mask_width <= len(self.pool):
            raise ValueError(f"mask_width {self.mask_width} exceeds pool size {len(self.pool)}")
        BitMask(self.pool)  # validates pool positions
        if self.store_resolve_delay < 1 or self.drain_delay < 0:
            raise ValueError("store_resolve_delay must be >= 1 and drain_delay >= 0")
        if self.max_reissues < 0:
            raise ValueError("max_reissues must be >= 0")

    def initial_mask(self, rng: random.Random) -> Optional[BitMask]:
        if self.model is Model.M1:
            return None
        if self.model is Model.M2:
            return BitMask(self.pool[: self.mask_width])
        return make_mask(rng, self.mask_width, self.pool)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.value
        d["pool"] = list(self.pool)
        return d


@dataclass(slots=True)
class SabEntry:
    """One store address buffer slot.

    ``pa`` is kept for the whole lifetime so that remasking can re-extract the
    partial bits; the predictor only consults it once ``resolved`` is set.
    """

    seq: int
    store_pc: int
    va: int
    pa: int
    insert_cycle: int
    resolve_cycle: int
    partial_pa: Optional[int] = None
    resolved: bool = False
    pc_tag: Optional[int] = None
    vuln_flag: bool = False


@dataclass(frozen=True)
class LoadOp:
    seq: int
    load_pc: int
    va: int
    is_probe: bool = False

    @classmethod
    def from_trace(cls, op: TraceOp) -> "LoadOp":
        return cls(op.seq, op.pc, op.va, op.is_probe)


class DecisionKind(enum.Enum):
    NO_DEPENDENCE = "no_dependence"
    TRUE_FORWARD = "true_forward"
    SPECULATIVE_FORWARD = "speculative_forward"
    ALIAS4K_STALL = "alias4k_stall"


@dataclass(frozen=True)
class ForwardDecision:
    kind: DecisionKind
    entry: Optional[SabEntry] = field(default=None, compare=False, repr=False)
    # stall on a store whose address is not yet resolved; the load retries later
    pending: bool = False

    @property
    def store_seq(self) -> Optional[int]:
        return None if self.entry is None else self.entry.seq


NO_DEPENDENCE = ForwardDecision(DecisionKind.NO_DEPENDENCE)


class Outcome(enum.Enum):
    CORRECT = "correct"
    MISSPECULATION = "misspeculation"


@dataclass(frozen=True)
class LoadRecord:
    seq: int
    page: int
    pc: int
    reissues: int
    latency: int
    is_probe: bool


@dataclass(frozen=True)
class MisspecEvent:
    load_seq: int
    load_pc: int
    store_seq: int


@dataclass
class SimStats:
    total_cycles: int = 0
    per_load_latency: list[LoadRecord] = field(default_factory=list)
    spoiler_violations: int = 0
    attacker_stalls: int = 0
    misspeculations: int = 0
    total_loads: int = 0
    remask_events: int = 0
    reissue_cap_hits: int = 0
    sab_full_stalls: int = 0
    true_forwards: int = 0
    alias4k_stalls: int = 0
    misspec_events: list[MisspecEvent] = field(default_factory=list)

    COUNTERS = (
        "total_cycles",
        "spoiler_violations",
        "attacker_stalls",
        "misspeculations",
        "total_loads",
        "remask_events",
        "reissue_cap_hits",
        "sab_full_stalls",
        "true_forwards",
        "alias4k_stalls",
    )

    def counters(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in self.COUNTERS}


def loosenet_check(load: LoadOp, entry: SabEntry) -> bool:
    """Page-offset (bits [11:0]) match."""
    return (load.va & OFFSET_MASK) == (entry.va & OFFSET_MASK)


def finenet_check(load: LoadOp, entry: SabEntry) -> bool:
    """Full virtual address match. Only meaningful after a loosenet hit."""
    return load.va == entry.va


def predict_dependence(
    load: LoadOp,
    load_pa: int,
    entries_youngest_first: Iterable[SabEntry],
    model: Model,
    mask: Optional[BitMask],
) -> ForwardDecision:
    """Dependence decision against the youngest older store that loosenet-hits.

    ``entries_youngest_first`` must hold only stores older than ``load``.
    """
    for entry in entries_youngest_first:
        if not loosenet_check(load, entry):
            continue
        if finenet_check(load, entry):
            return ForwardDecision(DecisionKind.TRUE_FORWARD, entry)
        if not entry.resolved:
            return ForwardDecision(DecisionKind.ALIAS4K_STALL, entry, pending=True)
        if not model.speculates_on_pa:
            return ForwardDecision(DecisionKind.ALIAS4K_STALL, entry)
        if extract_bits(load_pa, mask) == entry.partial_pa:
            if model is Model.M3 and entry.vuln_flag and entry.pc_tag == load.load_pc:
                return ForwardDecision(DecisionKind.ALIAS4K_STALL, entry)
            return ForwardDecision(DecisionKind.SPECULATIVE_FORWARD, entry)
        # partial mismatch: the 4 KB alias is still paid while the full check completes
        return ForwardDecision(DecisionKind.ALIAS4K_STALL, entry)
    return NO_DEPENDENCE


def resolve_and_check(load_pa: int, decision: ForwardDecision) -> Outcome:
    if decision.kind is DecisionKind.SPECULATIVE_FORWARD and load_pa != decision.entry.pa:
        return Outcome.MISSPECULATION
    return Outcome.CORRECT


class MemoryOrderBuffer:
    """Stateful SAB + dependence predictor for one simulation instance."""

    def __init__(self, config: SimConfig, space: AddressSpace):
        self.config = config
        self.space = space
        self.rng = random.Random(config.seed)
        self.mask = config.initial_mask(self.rng)
        self.sab: deque[SabEntry] = deque()
        self.stats = SimStats()
        self.cycle = 0
        self._last_drain = -1

    @property
    def model(self) -> Model:
        return self.config.model

    @property
    def occupancy(self) -> int:
        return len(self.sab)

    def _next_drain_cycle(self) -> int:
        head = self.sab[0]
        return max(self._last_drain + 1, head.resolve_cycle + self.config.drain_delay)

    def advance(self, t: int) -> None:
        """Apply all address resolutions and drains up to and including cycle ``t``."""
        for entry in self.sab:
            if entry.resolved:
                continue
            if entry.resolve_cycle > t:
                break
            entry.resolved = True
            if self.mask is not None:
                entry.partial_pa = extract_bits(entry.pa, self.mask)
        while self.sab:
            d = self._next_drain_cycle()
            if d > t:
                break
            self.sab.popleft()
            self._last_drain = d

    def sab_insert(self, op: TraceOp) -> SabEntry:
        t = self.cycle
        self.advance(t)
        if len(self.sab) >= self.config.sab_capacity:
            self.stats.sab_full_stalls += 1
            t = self._next_drain_cycle()
            self.advance(t)
        entry = SabEntry(
            seq=op.seq,
            store_pc=op.pc,
            va=op.va,
            pa=self.space.translate(op.va),
            insert_cycle=t,
            resolve_cycle=t + self.config.store_resolve_delay,
        )
        self.sab.append(entry)
        self.cycle = t + 1
        return entry

    def predict(self, load: LoadOp, load_pa: int) -> ForwardDecision:
        return predict_dependence(load, load_pa, reversed(self.sab), self.model, self.mask)

    def remask(self) -> None:
        self.mask = make_mask(self.rng, self.config.mask_width, self.config.pool)
        for entry in self.sab:
            if entry.resolved:
                entry.partial_pa = extract_bits(entry.pa, self.mask)
        self.stats.remask_events += 1

    def on_misspeculation(self, entry: SabEntry, load: LoadOp) -> None:
        stats = self.stats
        stats.misspeculations += 1
        stats.spoiler_violations += 1
        if load.is_probe:
            stats.attacker_stalls += 1
        stats.misspec_events.append(MisspecEvent(load.seq, load.load_pc, entry.seq))
        if self.model is Model.M3:
            entry.vuln_flag = True
            entry.pc_tag = load.load_pc
            self.remask()

    def execute_load(self, load: LoadOp) -> LoadRecord:
        cfg = self.config
        lat = cfg.latencies
        load_pa = self.space.translate(load.va)
        issue = attempt = self.cycle
        reissues = 0
        while True:
            self.advance(attempt)
            decision = self.predict(load, load_pa)
            if decision.pending:
                attempt = decision.entry.resolve_cycle
                continue
            kind = decision.kind
            if kind is DecisionKind.SPECULATIVE_FORWARD:
                if reissues >= cfg.max_reissues:
                    self.stats.reissue_cap_hits += 1
                    kind = DecisionKind.ALIAS4K_STALL
                elif resolve_and_check(load_pa, decision) is Outcome.MISSPECULATION:
                    self.on_misspeculation(decision.entry, load)
                    reissues += 1
                    attempt += lat.forward + lat.squash_penalty
                    continue
            break

        if kind is DecisionKind.TRUE_FORWARD or kind is DecisionKind.SPECULATIVE_FORWARD:
            adder = lat.forward
            self.stats.true_forwards += kind is DecisionKind.TRUE_FORWARD
        elif kind is DecisionKind.ALIAS4K_STALL:
            adder = lat.alias4k_stall
            self.stats.alias4k_stalls += 1
        else:
            adder = 0
        done = attempt + lat.base_load + adder
        self.cycle = done
        record = LoadRecord(load.seq, page_of(load.va), load.load_pc, reissues, done - issue, load.is_probe)
        self.stats.total_loads += 1
        self.stats.per_load_latency.append(record)
        return record

    def run(self, ops: Iterable[TraceOp]) -> SimStats:
        for op in ops:
            if op.kind == STORE:
                self.sab_insert(op)
            else:
                self.execute_load(LoadOp.from_trace(op))
        self.stats.total_cycles = self.cycle
        return self.stats


def run_trace(trace: Trace, config: SimConfig, space: Optional[AddressSpace] = None) -> SimStats:
    """Simulate ``trace`` under ``config``.

    The address space defaults to the page map recorded in the trace metadata,
    so the simulator and any offline checker see identical translations.
    """
    trace.validate()
    if space is None:
        space = space_from_metadata(trace.metadata, default_seed=config.seed)
    return MemoryOrderBuffer(config, space).run(trace.ops)
