import pytest

from mobsim.address import AddressSpace
from mobsim.generators import SpoilerParams, gen_spoiler_trace, pick_aliased_pages
from mobsim.trace import LOAD, STORE, Trace, TraceOp

DESK_SEED = 7
PROBE_PC = 0x401A58


def make_trace(*ops, metadata=None):
    """Build a trace from (kind, va, pc[, probe]) tuples with seq = index."""
    out = []
    for seq, op in enumerate(ops):
        kind, va, pc, *rest = op
        out.append(TraceOp(seq, kind, va, pc, bool(rest and rest[0])))
    return Trace(out, metadata or {})


def st(va, pc=0x400100):
    return (STORE, va, pc)


def ld(va, pc=PROBE_PC, probe=True):
    return (LOAD, va, pc, probe)


@pytest.fixture(scope="session")
def desk_trace():
    params = SpoilerParams(
        pages=128,
        rounds=20,
        window=56,
        aliased_pages=pick_aliased_pages(128, 8, DESK_SEED),
        seed=DESK_SEED,
    )
    return gen_spoiler_trace(params, AddressSpace(DESK_SEED))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
