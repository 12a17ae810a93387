"""Fault scripts: node selectors, a fixed behavior catalog, and tolerance bounds.

A script is a JSON list of entries such as::

    {"select": "leader", "group": 0, "behavior": "SilentPrimary", "start": 0}
    {"select": "follower", "group": "*", "rank": 0, "behavior": "TamperBlock"}
    {"select": "node", "id": 17, "behavior": "CrashSilent", "start": 500, "end": 900}

``leader`` and ``seat`` pick the initial leader of a group (``seat`` by its
index in the leader set, which is also the primary rotation order);
``follower`` picks the ``rank``-th non-leader member in id order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from ..runtime import Faults, inter_f, intra_tolerance

CATALOG = (
    "CrashSilent",
    "EquivocateBlocks",
    "TamperBlock",
    "FakeCommitClaim",
    "ForgedFreshnessCandidate",
    "SilentPrimary",
    "StaleCheckpointInViewChange",
    "OmitFromReplaySet",
)


class ScriptError(ValueError):
    pass


class ScriptOutOfBounds(ScriptError):
    """More Byzantine nodes than the protocol tolerates."""


@dataclass
class FaultEntry:
    select: str
    behavior: str
    group: object = 0
    rank: int = 0
    index: int = 0
    id: Optional[int] = None
    start: int = 0
    end: Optional[int] = None
    params: dict = field(default_factory=dict)


@dataclass
class FaultScript:
    entries: List[FaultEntry] = field(default_factory=list)

    @classmethod
    def parse(cls, raw) -> "FaultScript":
        if isinstance(raw, str):
            raw = json.loads(raw)
        entries = []
        for item in raw or []:
            if not isinstance(item, dict):
                raise ScriptError(f"fault entry must be an object, got {item!r}")
            try:
                e = FaultEntry(**item)
            except TypeError as exc:
                raise ScriptError(str(exc)) from exc
            if e.behavior not in CATALOG:
                raise ScriptError(f"behavior {e.behavior!r} is not in the catalog")
            if e.select not in ("leader", "seat", "follower", "node"):
                raise ScriptError(f"unknown selector {e.select!r}")
            entries.append(e)
        return cls(entries)

    def resolve(self, seats: List[int], groups: Dict[int, List[int]]) -> Dict[int, Faults]:
        out: Dict[int, Faults] = {}
        for e in self.entries:
            for node in _select(e, seats, groups):
                out.setdefault(node, Faults()).add(e.behavior, e.start, e.end, e.params)
        return out


def _groups_of(e: FaultEntry, groups) -> List[int]:
    if e.group == "*":
        return sorted(groups)
    if e.group not in groups:
        raise ScriptError(f"no group {e.group!r}")
    return [e.group]


def _select(e: FaultEntry, seats, groups) -> List[int]:
    if e.select == "node":
        if e.id is None:
            raise ScriptError("node selector needs an id")
        return [e.id]
    if e.select == "seat":
        if not 0 <= e.index < len(seats):
            raise ScriptError(f"no seat {e.index}")
        return [seats[e.index]]
    picked = []
    for g in _groups_of(e, groups):
        leader = seats[g]
        if e.select == "leader":
            picked.append(leader)
        else:
            followers = [m for m in sorted(groups[g]) if m != leader]
            if not 0 <= e.rank < len(followers):
                raise ScriptError(f"group {g} has no follower of rank {e.rank}")
            picked.append(followers[e.rank])
    return picked


def check_bounds(faults: Dict[int, Faults], seats: List[int], groups: Dict[int, List[int]]):
    """Raise ScriptOutOfBounds when the faulty set exceeds either tolerance."""
    bad = {node for node, fl in faults.items() if fl.byzantine}
    k = len(seats)
    bad_seats = [s for s in seats if s in bad]
    if len(bad_seats) > inter_f(k):
        raise ScriptOutOfBounds(f"{len(bad_seats)} faulty leaders exceed f={inter_f(k)} for k={k}")
    for g, members in groups.items():
        followers = [m for m in members if m in bad and m != seats[g]]
        limit = intra_tolerance(len(members))
        if len(followers) > limit:
            raise ScriptOutOfBounds(f"group {g}: {len(followers)} faulty followers exceed {limit} for n={len(members)}")
