"""
Brute-force reference replay for the fixed-mask (M2) configuration.

This is a deliberately separate implementation of the MOB timing rules: it
steps one cycle at a time with a plain list as the store queue and a small
frontend state machine, instead of the event-jumping SAB in ``mob``. Nothing
here is imported from the simulator; agreement between the two is the check.
"""

from __future__ import annotations

from dataclasses import dataclass

from .address import AddressSpace


@dataclass(frozen=True)
class ReplayResult:
    violations: int
    cycles: int
    cap_hits: int


def _low_mask_bits(pool, width: int) -> tuple[int, int]:
    lo = pool[0]
    if tuple(pool[:width]) != tuple(range(lo, lo + width)):
        raise ValueError("reference replay needs a contiguous fixed mask")
    return lo, (1 << width) - 1


def replay_fixed_mask(trace, space: AddressSpace, config) -> ReplayResult:
    model = getattr(config.model, "value", config.model)
    if model != "m2":
        raise ValueError(f"reference replay only models the fixed-mask configuration, got {model}")
    shift, field = _low_mask_bits(config.pool, config.mask_width)
    lat = config.latencies
    cap = config.sab_capacity
    R, D = config.store_resolve_delay, config.drain_delay

    # queue rows: [va, pa, resolve_cycle]; queue[head:] are live
    queue: list[list[int]] = []
    head = 0
    ops = trace.ops
    n = len(ops)
    i = 0
    cycle = 0
    free_at = 0
    violations = 0
    cap_hits = 0
    # in-flight load: [va, pa, next_attempt, reissues] or None
    load = None

    while i < n or load is not None:
        if head < len(queue) and queue[head][2] + D <= cycle:
            head += 1

        if cycle >= free_at:
            if load is None:
                op = ops[i]
                if op.kind == "store":
                    if len(queue) - head < cap:
                        queue.append([op.va, space.translate(op.va), cycle + R])
                        free_at = cycle + 1
                        i += 1
                else:
                    load = [op.va, space.translate(op.va), cycle, 0]
                    i += 1

            if load is not None and load[2] == cycle:
                va, pa, _, reissues = load
                hit = None
                for k in range(len(queue) - 1, head - 1, -1):
                    if queue[k][0] % 4096 == va % 4096:
                        hit = queue[k]
                        break
                done = None
                if hit is None:
                    done = cycle + lat.base_load
                elif hit[0] == va:
                    done = cycle + lat.base_load + lat.forward
                elif cycle < hit[2]:
                    load[2] = hit[2]
                elif (hit[1] >> shift) & field == (pa >> shift) & field:
                    if reissues >= config.max_reissues:
                        cap_hits += 1
                        done = cycle + lat.base_load + lat.alias4k_stall
                    elif hit[1] != pa:
                        violations += 1
                        load[3] += 1
                        load[2] = cycle + lat.forward + lat.squash_penalty
                    else:
                        done = cycle + lat.base_load + lat.forward
                else:
                    done = cycle + lat.base_load + lat.alias4k_stall
                if done is not None:
                    free_at = done
                    load = None
        cycle += 1

    return ReplayResult(violations, free_at, cap_hits)
