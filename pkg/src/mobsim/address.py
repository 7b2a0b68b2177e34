"""
Virtual/physical address model.

Addresses are plain integers: 48-bit virtual, 40-bit physical, 4 KB pages.
An AddressSpace maps virtual page numbers to physical page numbers, lazily
and injectively, from a seeded Mersenne Twister. Pages can be planted so that
selected physical-address bits agree with a donor address, which is how the
attack generator creates ground-truth partial aliasing.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, NewType, Union

VirtAddr = NewType("VirtAddr", int)
PhysAddr = NewType("PhysAddr", int)

VA_BITS = 48
PA_BITS = 40
PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT
OFFSET_MASK = PAGE_SIZE - 1

# PA bit positions eligible for the partial dependence comparison
MASK_POOL: tuple[int, ...] = tuple(range(12, 32))
# Fixed comparison bits of the unprotected baseline ("1 MB aliasing")
FIXED_ALIAS_BITS: tuple[int, ...] = tuple(range(12, 20))

_RANDOM_TRIES = 64
_MAX_ENUMERATED_FREE_BITS = 20


class AddressError(ValueError):
    """Configuration error in the address model (bad mask, exhausted pool, impossible plant)."""


def page_of(addr: int) -> int:
    return addr >> PAGE_SHIFT


def offset_of(addr: int) -> int:
    return addr & OFFSET_MASK


def check_va(va: int) -> VirtAddr:
    if not 0 <= va < (1 << VA_BITS):
        raise AddressError(f"virtual address {va:#x} outside {VA_BITS}-bit range")
    return VirtAddr(va)


@dataclass(frozen=True)
class BitMask:
    """Ordered set of PA bit positions compared by the dependence predictor.

    Bit ``i`` of an extracted value is PA bit ``positions[i]``.
    """

    positions: tuple[int, ...]

    def __post_init__(self) -> None:
        pos = tuple(self.positions)
        object.__setattr__(self, "positions", pos)
        if len(set(pos)) != len(pos):
            raise AddressError(f"mask positions not distinct: {pos}")
        bad = [p for p in pos if p not in MASK_POOL]
        if bad:
            raise AddressError(
                f"mask positions {bad} outside pool [{MASK_POOL[0]}, {MASK_POOL[-1]}]"
            )

    @property
    def width(self) -> int:
        return len(self.positions)

    @classmethod
    def contiguous(cls, low: int, width: int) -> "BitMask":
        return cls(tuple(range(low, low + width)))

    def __str__(self) -> str:
        return "{" + ",".join(str(p) for p in self.positions) + "}"


M2_FIXED_MASK = BitMask(FIXED_ALIAS_BITS)


def extract_bits(pa, mask: BitMask):
    """Gather the PA bits selected by ``mask`` into a dense ``mask.width``-bit value.

    Works elementwise on integer numpy arrays as well as on ints.
    """
    result = pa & 0
    for i, pos in enumerate(mask.positions):
        result = result | (((pa >> pos) & 1) << i)
    return result


def masked_compare(pa1, pa2, mask: BitMask):
    return extract_bits(pa1, mask) == extract_bits(pa2, mask)


def make_mask(rng: random.Random, width: int, pool: Iterable[int] = MASK_POOL) -> BitMask:
    """Draw ``width`` distinct positions uniformly without replacement from ``pool``."""
    pool = tuple(pool)
    if width < 0 or width > len(pool):
        raise AddressError(f"mask width {width} not in [0, {len(pool)}]")
    return BitMask(tuple(sorted(rng.sample(pool, width))))


def _mask_positions(bits: Union[BitMask, Iterable[int], None]) -> tuple[int, ...]:
    if bits is None:
        return ()
    if isinstance(bits, BitMask):
        return bits.positions
    if isinstance(bits, range):
        return tuple(bits)
    return BitMask(tuple(bits)).positions


class AddressSpace:
    """Seeded, injective virtual-to-physical page map.

    Unmapped pages receive a uniformly random unused physical page on first
    translation. ``pa_bits`` may be shrunk (>= 13) to exercise exhaustion.
    """

    def __init__(self, seed: int, pa_bits: int = PA_BITS):
        if pa_bits <= PAGE_SHIFT:
            raise AddressError(f"pa_bits must exceed the page offset width, got {pa_bits}")
        self.seed = seed
        self.pa_bits = pa_bits
        self._ppn_bits = pa_bits - PAGE_SHIFT
        self._rng = random.Random(seed)
        self._map: dict[int, int] = {}
        self._used: set[int] = set()

    @property
    def physical_pages(self) -> int:
        return 1 << self._ppn_bits

    def __len__(self) -> int:
        return len(self._map)

    def translate(self, va: int) -> PhysAddr:
        vpn = page_of(check_va(va))
        ppn = self._map.get(vpn)
        if ppn is None:
            ppn = self._pick_ppn(0, 0)
            self._bind(vpn, ppn)
        return PhysAddr((ppn << PAGE_SHIFT) | offset_of(va))

    def plant_alias(
        self, va: int, donor_pa: int, bits: Union[BitMask, Iterable[int], None]
    ) -> None:
        """(Re)map the page of ``va`` so its PA agrees with ``donor_pa`` on ``bits``.

        The new physical page is otherwise random and never shared with another
        virtual page.
        """
        vpn = page_of(check_va(va))
        fixed_mask = 0
        for pos in _mask_positions(bits):
            fixed_mask |= 1 << (pos - PAGE_SHIFT)
        if fixed_mask >> self._ppn_bits:
            raise AddressError(f"plant bits exceed the {self.pa_bits}-bit physical space")
        fixed_value = (donor_pa >> PAGE_SHIFT) & fixed_mask
        old = self._map.pop(vpn, None)
        if old is not None:
            self._used.discard(old)
        try:
            ppn = self._pick_ppn(fixed_mask, fixed_value)
        except AddressError:
            if old is not None:
                self._bind(vpn, old)
            raise
        self._bind(vpn, ppn)

    def snapshot(self) -> list[list[int]]:
        """Page map as sorted ``[vpn, ppn]`` pairs (JSON-friendly)."""
        return [[vpn, ppn] for vpn, ppn in sorted(self._map.items())]

    @classmethod
    def from_snapshot(
        cls, seed: int, page_map: Iterable[Iterable[int]], pa_bits: int = PA_BITS
    ) -> "AddressSpace":
        space = cls(seed, pa_bits)
        for vpn, ppn in page_map:
            if vpn in space._map or ppn in space._used:
                raise AddressError(f"page map not injective at vpn {vpn:#x}")
            if not 0 <= ppn < space.physical_pages:
                raise AddressError(f"physical page {ppn:#x} outside {pa_bits}-bit space")
            space._bind(vpn, ppn)
        return space

    def _bind(self, vpn: int, ppn: int) -> None:
        self._map[vpn] = ppn
        self._used.add(ppn)

    def _pick_ppn(self, fixed_mask: int, fixed_value: int) -> int:
        if len(self._used) >= self.physical_pages:
            raise AddressError(f"physical page pool exhausted ({self.physical_pages} pages)")
        free_mask = (self.physical_pages - 1) & ~fixed_mask
        for _ in range(_RANDOM_TRIES):
            cand = (self._rng.getrandbits(self._ppn_bits) & free_mask) | fixed_value
            if cand not in self._used:
                return cand
        free_positions = [b for b in range(self._ppn_bits) if free_mask >> b & 1]
        if len(free_positions) > _MAX_ENUMERATED_FREE_BITS:
            raise AddressError("could not find an unused physical page")
        candidates = []
        for combo in range(1 << len(free_positions)):
            cand = fixed_value
            for i, b in enumerate(free_positions):
                if combo >> i & 1:
                    cand |= 1 << b
            if cand not in self._used:
                candidates.append(cand)
        if not candidates:
            raise AddressError(
                "no unused physical page satisfies the requested alias bits"
            )
        return self._rng.choice(candidates)
