"""
Synthetic trace generators: the SPOILER store-window/probe loop and benign workloads.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .address import FIXED_ALIAS_BITS, PAGE_SIZE, AddressSpace, page_of
from .trace import LOAD, STORE, Trace, TraceOp, space_metadata

# attacker store window and probe buffer live in separate regions
STORE_BUFFER_BASE = 0x7F10_0000_0000
PROBE_BUFFER_BASE = 0x7F20_0000_0000
BENIGN_BASE = 0x5555_0000_0000

STORE_PC = 0x401A20
PROBE_PC = 0x401A58
BENIGN_LOAD_PCS = tuple(0x402000 + 8 * i for i in range(8))
BENIGN_STORE_PCS = tuple(0x403000 + 8 * i for i in range(8))

BENIGN_KINDS = ("random", "sequential", "forward-heavy")
BENIGN_WORKING_SET_PAGES = 64


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class SpoilerParams:
    pages: int = 128
    rounds: int = 20
    window: int = 56
    aliased_pages: frozenset[int] = field(default_factory=frozenset)
    seed: int = 0
    offset: int = 0x040

    def __post_init__(self) -> None:
        object.__setattr__(self, "aliased_pages", frozenset(self.aliased_pages))
        if self.pages < 1 or self.rounds < 1 or self.window < 1:
            raise GeneratorError("pages, rounds and window must all be >= 1")
        bad = sorted(p for p in self.aliased_pages if not 0 <= p < self.pages)
        if bad:
            raise GeneratorError(f"aliased pages {bad} outside [0, {self.pages})")
        if not 0 <= self.offset < PAGE_SIZE:
            raise GeneratorError(f"offset {self.offset:#x} is not a page offset")

    @property
    def total_ops(self) -> int:
        return self.pages * self.rounds * (self.window + 1)

    def to_dict(self) -> dict:
        return {
            "pages": self.pages,
            "rounds": self.rounds,
            "window": self.window,
            "aliased_pages": sorted(self.aliased_pages),
            "seed": self.seed,
            "offset": self.offset,
        }


def pick_aliased_pages(pages: int, count: int, seed: int) -> frozenset[int]:
    """Seeded choice of ``count`` page indices to plant."""
    if not 0 <= count <= pages:
        raise GeneratorError(f"cannot plant {count} of {pages} pages")
    return frozenset(random.Random(seed).sample(range(pages), count))


def store_va(i: int, offset: int) -> int:
    return STORE_BUFFER_BASE + i * PAGE_SIZE + offset


def probe_va(page: int, offset: int) -> int:
    return PROBE_BUFFER_BASE + page * PAGE_SIZE + offset


def _spoiler_rounds(params: SpoilerParams) -> Iterator[tuple[str, int, int, bool, int]]:
    """Yield (kind, va, pc, is_probe, page) for every op, one measurement group per page."""
    for page in range(params.pages):
        pva = probe_va(page, params.offset)
        for _ in range(params.rounds):
            for i in range(params.window):
                yield STORE, store_va(i, params.offset), STORE_PC, False, page
            yield LOAD, pva, PROBE_PC, True, page


def _plant_spoiler(params: SpoilerParams, space: AddressSpace) -> int:
    """Plant window stores and aliased probe pages on one donor; return the donor PA."""
    rng = random.Random(params.seed)
    donor = rng.getrandbits(space.pa_bits) & ~(PAGE_SIZE - 1)
    for i in range(params.window):
        space.plant_alias(store_va(i, params.offset), donor, FIXED_ALIAS_BITS)
    for page in sorted(params.aliased_pages):
        space.plant_alias(probe_va(page, params.offset), donor, FIXED_ALIAS_BITS)
    for page in range(params.pages):
        space.translate(probe_va(page, params.offset))
    return donor


def _spoiler_metadata(params: SpoilerParams, donor: int) -> dict:
    return {
        "params": params.to_dict(),
        "seed": params.seed,
        "probe_base_vpn": page_of(PROBE_BUFFER_BASE),
        "donor_pa": donor,
        "alias_bits": list(FIXED_ALIAS_BITS),
        "labels": {"aliased_pages": sorted(params.aliased_pages)},
    }


def gen_spoiler_trace(params: SpoilerParams, space: AddressSpace) -> Trace:
    """Store-window fill followed by one probe load, ``rounds`` times per page.

    Every window store shares the probe's page offset, so each probe loosenet-hits
    the whole window. Pages in ``params.aliased_pages`` are planted to agree with
    the window stores on PA bits [19:12]; the rest keep a random mapping.
    """
    donor = _plant_spoiler(params, space)
    ops = [
        TraceOp(seq, kind, va, pc, probe)
        for seq, (kind, va, pc, probe, _) in enumerate(_spoiler_rounds(params))
    ]
    meta = {"generator": "spoiler", **_spoiler_metadata(params, donor)}
    meta["address_space"] = space_metadata(space)
    return Trace(ops, meta)


def _benign_ops(kind: str, n: int, rng: random.Random) -> Iterator[tuple[str, int, int]]:
    if kind == "random":
        for _ in range(n):
            page = rng.randrange(BENIGN_WORKING_SET_PAGES)
            va = BENIGN_BASE + page * PAGE_SIZE + 8 * rng.randrange(PAGE_SIZE // 8)
            if rng.random() < 1 / 3:
                yield STORE, va, rng.choice(BENIGN_STORE_PCS)
            else:
                yield LOAD, va, rng.choice(BENIGN_LOAD_PCS)
    elif kind == "sequential":
        for i in range(n):
            va = BENIGN_BASE + 8 * i
            if i % 4 == 3:
                yield STORE, va, BENIGN_STORE_PCS[0]
            else:
                yield LOAD, va, BENIGN_LOAD_PCS[0]
    elif kind == "forward-heavy":
        for i in range(0, n - 1, 2):
            page = rng.randrange(BENIGN_WORKING_SET_PAGES)
            va = BENIGN_BASE + page * PAGE_SIZE + 8 * rng.randrange(PAGE_SIZE // 8)
            yield STORE, va, BENIGN_STORE_PCS[1]
            yield LOAD, va, BENIGN_LOAD_PCS[1]
        if n % 2:
            yield STORE, BENIGN_BASE, BENIGN_STORE_PCS[1]
    else:
        raise GeneratorError(f"unknown benign kind {kind!r}; expected one of {BENIGN_KINDS}")


def gen_benign_trace(
    kind: str, ops: int, seed: int, space: Optional[AddressSpace] = None
) -> Trace:
    if ops <= 0:
        raise GeneratorError("ops must be positive")
    if kind not in BENIGN_KINDS:
        raise GeneratorError(f"unknown benign kind {kind!r}; expected one of {BENIGN_KINDS}")
    if space is None:
        space = AddressSpace(seed)
    rng = random.Random(seed)
    trace_ops = []
    for seq, (k, va, pc) in enumerate(_benign_ops(kind, ops, rng)):
        space.translate(va)
        trace_ops.append(TraceOp(seq, k, va, pc, False))
    meta = {
        "generator": "benign",
        "params": {"kind": kind, "ops": ops, "seed": seed},
        "seed": seed,
        "address_space": space_metadata(space),
    }
    return Trace(trace_ops, meta)


def gen_mixed_trace(
    params: SpoilerParams,
    space: AddressSpace,
    benign_per_round: int = 32,
    benign_kind: str = "random",
) -> Trace:
    """SPOILER rounds with a burst of benign ops ahead of every store window."""
    if benign_per_round < 0:
        raise GeneratorError("benign_per_round must be >= 0")
    donor = _plant_spoiler(params, space)
    rng = random.Random(params.seed ^ 0x5EED)
    ops: list[TraceOp] = []
    window_start = 0
    for kind, va, pc, probe, _ in _spoiler_rounds(params):
        if kind == STORE and window_start == 0:
            for bkind, bva, bpc in _benign_ops(benign_kind, benign_per_round, rng):
                space.translate(bva)
                ops.append(TraceOp(len(ops), bkind, bva, bpc, False))
        window_start = (window_start + 1) % (params.window + 1)
        ops.append(TraceOp(len(ops), kind, va, pc, probe))
    meta = {
        "generator": "mixed",
        **_spoiler_metadata(params, donor),
        "benign": {"kind": benign_kind, "per_round": benign_per_round},
    }
    meta["address_space"] = space_metadata(space)
    return Trace(ops, meta)

