"""
Trace types and the line-oriented trace file format.

File layout::

    #mobtrace v1 {"generator": "spoiler", ...}
    0,store,0x7f1000000040,0x401a20,0
    1,load,0x7f2000000040,0x401a58,1

One op per line: ``seq,kind,va_hex,pc_hex,probe_flag``.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from typing import Any, TextIO, Union

from .address import VA_BITS, AddressSpace

MAGIC = "#mobtrace"
VERSION = "v1"

STORE = "store"
LOAD = "load"
KINDS = (STORE, LOAD)

PC_BITS = 48


class TraceFormatError(ValueError):
    """Malformed trace file or trace object."""


@dataclass(frozen=True)
class TraceOp:
    seq: int
    kind: str
    va: int
    pc: int
    is_probe: bool = False

    @property
    def is_load(self) -> bool:
        return self.kind == LOAD


@dataclass
class Trace:
    ops: list[TraceOp] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ops)

    @property
    def loads(self) -> list[TraceOp]:
        return [op for op in self.ops if op.kind == LOAD]

    def validate(self) -> None:
        """Reject non-monotone sequence numbers and out-of-range fields."""
        prev = -1
        for i, op in enumerate(self.ops):
            if op.seq <= prev:
                raise TraceFormatError(
                    f"op {i}: seq {op.seq} not strictly greater than previous {prev}"
                )
            prev = op.seq
            if op.kind not in KINDS:
                raise TraceFormatError(f"op {i}: unknown kind {op.kind!r}")
            if not 0 <= op.va < (1 << VA_BITS):
                raise TraceFormatError(f"op {i}: va {op.va:#x} outside {VA_BITS}-bit range")
            if not 0 <= op.pc < (1 << PC_BITS):
                raise TraceFormatError(f"op {i}: pc {op.pc:#x} outside {PC_BITS}-bit range")


def space_from_metadata(metadata: dict[str, Any], default_seed: int = 0) -> AddressSpace:
    """Rebuild the address space a generator recorded in trace metadata."""
    recorded = metadata.get("address_space")
    if recorded is None:
        return AddressSpace(default_seed)
    return AddressSpace.from_snapshot(recorded["seed"], recorded.get("page_map", []), recorded["pa_bits"])


def space_metadata(space: AddressSpace) -> dict[str, Any]:
    return {"seed": space.seed, "pa_bits": space.pa_bits, "page_map": space.snapshot()}


def format_op(op: TraceOp) -> str:
    return f"{op.seq},{op.kind},{op.va:#x},{op.pc:#x},{int(op.is_probe)}"


def write_trace(trace: Trace, sink: Union[str, os.PathLike, TextIO]) -> None:
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            write_trace(trace, fh)
        return
    header = json.dumps(trace.metadata, sort_keys=True, separators=(",", ":"))
    sink.write(f"{MAGIC} {VERSION} {header}\n")
    for op in trace.ops:
        sink.write(format_op(op))
        sink.write("\n")


def dumps_trace(trace: Trace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()


def _parse_int(text: str, lineno: int, what: str, base: int) -> int:
    try:
        return int(text, base)
    except ValueError:
        raise TraceFormatError(f"line {lineno}: bad {what} {text!r}") from None


def _parse_op(line: str, lineno: int) -> TraceOp:
    parts = line.split(",")
    if len(parts) != 5:
        raise TraceFormatError(f"line {lineno}: expected 5 fields, got {len(parts)}")
    seq_s, kind, va_s, pc_s, probe_s = parts
    if kind not in KINDS:
        raise TraceFormatError(f"line {lineno}: unknown op kind {kind!r}")
    if probe_s not in ("0", "1"):
        raise TraceFormatError(f"line {lineno}: probe flag must be 0 or 1, got {probe_s!r}")
    return TraceOp(
        seq=_parse_int(seq_s, lineno, "seq", 10),
        kind=kind,
        va=_parse_int(va_s, lineno, "va", 16),
        pc=_parse_int(pc_s, lineno, "pc", 16),
        is_probe=probe_s == "1",
    )


def read_trace(source: Union[str, os.PathLike, TextIO]) -> Trace:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return read_trace(fh)
    header = source.readline()
    if not header:
        raise TraceFormatError("line 1: empty trace file (missing header)")
    header = header.rstrip("\n")
    magic, _, rest = header.partition(" ")
    if magic != MAGIC:
        raise TraceFormatError(f"line 1: not a trace file (expected {MAGIC!r} header)")
    version, _, meta_text = rest.partition(" ")
    if version != VERSION:
        raise TraceFormatError(f"line 1: unsupported trace version {version!r}, expected {VERSION}")
    try:
        metadata = json.loads(meta_text) if meta_text else {}
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"line 1: bad metadata JSON: {exc}") from None
    if not isinstance(metadata, dict):
        raise TraceFormatError("line 1: metadata must be a JSON object")

    ops = []
    prev = -1
    for lineno, line in enumerate(source, start=2):
        line = line.rstrip("\n")
        if not line:
            continue
        op = _parse_op(line, lineno)
        if op.seq <= prev:
            raise TraceFormatError(
                f"line {lineno}: seq {op.seq} not strictly greater than previous {prev}"
            )
        if not 0 <= op.va < (1 << VA_BITS):
            raise TraceFormatError(f"line {lineno}: va {op.va:#x} outside {VA_BITS}-bit range")
        if not 0 <= op.pc < (1 << PC_BITS):
            raise TraceFormatError(f"line {lineno}: pc {op.pc:#x} outside {PC_BITS}-bit range")
        prev = op.seq
        ops.append(op)
    return Trace(ops, metadata)
