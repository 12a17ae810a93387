"""Exhaustive delivery-order exploration for tiny instances.

Every node is a deterministic function of the messages it has received, so a
global state is identified by the per-node sequence of received messages.
Depth-first search over "which pending message is delivered next" memoizes on
that key; the number of complete interleavings is still counted exactly.
"""
from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List, Optional, Tuple

from ..crypto import SigningKey, derive_secret, digest
from ..inter import InterReplica, sign_request
from ..intra import GroupMember
from ..messages import Request
from ..runtime import Directory, Faults, Send, StartIntra, Timing
from ..usig import Enclave, TrustRegistry
from ..wire import encode

Pending = Tuple[int, int, object]  # (src, dst, msg)


@dataclass
class ExploreResult:
    paths: int
    states: int
    outcomes: FrozenSet[tuple]

    @property
    def divergent(self) -> bool:
        return len(self.outcomes) != 1


@dataclass
class Fixture:
    directory: Directory
    enclaves: Dict[int, Enclave]
    keys: Dict[int, SigningKey]
    client_key: bytes
    client_id: int
    shared: list = field(default_factory=list)


def make_fixture(k: int = 3, n: int = 4, seed: int = 0) -> Fixture:
    groups = {g: list(range(g * n, (g + 1) * n)) for g in range(k)}
    ids = [i for ms in groups.values() for i in ms]
    usig = {i: derive_secret("usig", seed, i) for i in ids}
    att = {i: derive_secret("attest", seed, i) for i in ids}
    keys = {i: SigningKey(i, derive_secret("sig", seed, i)) for i in ids}
    client_id = len(ids)
    client_key = derive_secret("client", seed, client_id)
    seats = [groups[g][0] for g in range(k)]
    d = Directory(seats, groups, {g: seats[g] for g in groups}, TrustRegistry(usig, att),
                  {i: key.verifying_key() for i, key in keys.items()}, {client_id: client_key},
                  {i: True for i in ids}, Timing())
    enclaves = {i: Enclave(i, usig[i], att[i]) for i in ids}
    return Fixture(d, enclaves, keys, client_key, client_id, [d])


def _sends(effects, src: int) -> List[Pending]:
    return [(src, e.dst, e.msg) for e in effects if isinstance(e, Send)]


def _msg_id(src: int, msg) -> bytes:
    return digest(src.to_bytes(8, "big", signed=True) + encode(msg))[:12]


def explore(machines: Dict[int, object], pending: List[Pending],
            outcome: Callable[[Dict[int, object]], tuple], shared: Optional[list] = None,
            limit: int = 2_000_000) -> ExploreResult:
    """Enumerate all delivery orders of ``pending`` and everything it causes."""
    memo: Dict[tuple, Tuple[int, FrozenSet[tuple]]] = {}
    base_memo = {id(obj): obj for obj in (shared or [])}

    def visit(state, queue, history) -> Tuple[int, FrozenSet[tuple]]:
        key = tuple(sorted(history.items()))
        if key in memo:
            return memo[key]
        if len(memo) > limit:
            raise RuntimeError("state space exceeds the exploration limit")
        if not queue:
            result = (1, frozenset([outcome(state)]))
            memo[key] = result
            return result
        paths, outs = 0, set()
        for i, (src, dst, msg) in enumerate(queue):
            child = copy.deepcopy(state, dict(base_memo))
            rest = queue[:i] + queue[i + 1:]
            new = []
            if dst in child:
                new = _sends(child[dst].handle(src, msg, 0), dst)
            hist = dict(history)
            hist[dst] = hist.get(dst, ()) + (_msg_id(src, msg),)
            p, o = visit(child, rest + new, hist)
            paths += p
            outs |= o
        result = (paths, frozenset(outs))
        memo[key] = result
        return result

    paths, outs = visit(machines, list(pending), {})
    return ExploreResult(paths, len(memo), outs)


# --- scenarios ---------------------------------------------------------------

def inter_scenario(k: int = 3, equivocate: bool = False, seed: int = 0):
    """Replicas, initial sends and outcome function for one client request."""
    fx = make_fixture(k, 1, seed)
    d = fx.directory
    faults = {s: Faults() for s in d.seats}
    if equivocate:
        faults[d.seats[0]].add("EquivocateBlocks")
    reps = {s: InterReplica(s, fx.enclaves[s], d, faults[s]) for s in d.seats}
    req = sign_request(fx.client_key, Request(b"op-1", 1, fx.client_id))
    primary = d.primary(0)
    pending = _sends(reps[primary].client_request(req, 0), primary)
    correct = [s for s in d.seats if not faults[s].byzantine]

    def outcome(state):
        return tuple((s, tuple(state[s].executed)) for s in correct)

    return reps, pending, outcome, fx


def inter_agreement(result: ExploreResult) -> bool:
    """All correct replicas, in every interleaving, bind each slot to one block."""
    slots: Dict[tuple, bytes] = {}
    for out in result.outcomes:
        for _, executed in out:
            for key, d in executed:
                if slots.setdefault(key, d) != d:
                    return False
    return True


def certified_block(k: int = 3, n: int = 4, seed: int = 0):
    """Block and f+1 proofs produced by a fault-free inter-group round."""
    fx = make_fixture(k, n, seed)
    d = fx.directory
    reps = {s: InterReplica(s, fx.enclaves[s], d) for s in d.seats}
    req = sign_request(fx.client_key, Request(b"op-1", 1, fx.client_id))
    queue = _sends(reps[d.primary(0)].client_request(req, 0), d.primary(0))
    starts = {}
    while queue:
        src, dst, msg = queue.pop(0)
        for e in reps[dst].handle(src, msg, 0):
            if isinstance(e, Send):
                queue.append((dst, e.dst, e.msg))
            elif isinstance(e, StartIntra):
                starts[dst] = e
    start = starts[d.seats[0]]
    return fx, start.block, start.proofs


def intra_scenario(n: int = 4, byzantine: Optional[str] = None, seed: int = 0):
    fx, block, proofs = certified_block(3, n, seed)
    d = fx.directory
    members = d.groups[0]
    faults = {m: Faults() for m in members}
    if byzantine:
        faults[members[1]].add(byzantine)
    nodes = {m: GroupMember(m, 0, fx.enclaves[m], fx.keys[m], d, faults[m], random.Random(m), timers=False)
             for m in members}
    leader = members[0]
    pending = _sends(nodes[leader].start(block, proofs, 0), leader)
    correct = [m for m in members if not faults[m].byzantine]

    def outcome(state):
        return tuple((m, tuple(state[m].committed_digests())) for m in correct) + \
            (("replied", tuple(sorted(state[leader].replied))),)

    return nodes, pending, outcome, fx, block


def intra_agreement(result: ExploreResult) -> bool:
    seen = {}
    for out in result.outcomes:
        for node, log in out:
            if node == "replied":
                continue
            for i, d in enumerate(log):
                if seen.setdefault(i, d) != d:
                    return False
    return True
