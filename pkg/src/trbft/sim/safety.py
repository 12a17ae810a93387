"""Agreement checks over the final state of every correct node."""
from __future__ import annotations

from itertools import combinations
from typing import List


class DivergenceDetected(AssertionError):
    pass


def _prefix_compatible(a, b) -> bool:
    m = min(len(a), len(b))
    return list(a[:m]) == list(b[:m])


def check_world(world) -> List[str]:
    """Every violation found, as readable strings. Empty means safe."""
    out: List[str] = []
    correct = world.correct_nodes()

    for g, members in sorted(world.groups.items()):
        logs = {m: world.nodes[m].member.committed_digests() for m in members if m in correct}
        for a, b in combinations(sorted(logs), 2):
            if not _prefix_compatible(logs[a], logs[b]):
                out.append(f"group {g}: committed logs of {a} and {b} diverge")

    seats = [s for s in world.seats if s in correct]
    executed = {s: [d for _, d in world.nodes[s].inter.executed] for s in seats}
    for a, b in combinations(seats, 2):
        if not _prefix_compatible(executed[a], executed[b]):
            out.append(f"leaders {a} and {b} executed diverging sequences")
        ca, cb = world.nodes[a].inter.committed, world.nodes[b].inter.committed
        for key in sorted(set(ca) & set(cb)):
            if ca[key] != cb[key]:
                out.append(f"leaders {a} and {b} committed different blocks at {key}")

    ordered = set()
    for s in seats:
        ordered.update(executed[s])
    for done in world.client.completed:
        if seats and done.block_digest not in ordered:
            out.append(f"client completed block {done.block_digest.hex()[:8]} that no correct leader executed")
        for r in done.replies:
            for m in world.groups[r.group_id]:
                if m not in correct:
                    continue
                got = world.nodes[m].member.results.get(r.index)
                if got is not None and got != r.result:
                    out.append(f"node {m} result at index {r.index} differs from the client's reply")
    return out


def verdict(world, strict: bool = False):
    violations = check_world(world)
    if violations and strict:
        raise DivergenceDetected("; ".join(violations))
    return not violations, violations
