"""Node grouping: consistent-hash initial grouping and dynamic weight placement."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from . import ringkernel
from .crypto import digest

RING_SIZE = 2**32
MIN_GROUP_SIZE = 3


class GroupingError(Exception):
    pass


class CollidingPoints(GroupingError):
    pass


class ZeroParticipation(GroupingError):
    pass


class ZeroImpactSum(GroupingError):
    pass


class EmptyGroup(GroupingError):
    pass


def hash32(text: str) -> int:
    """Low 32 bits of the SHA-256 digest of ``text``."""
    return int.from_bytes(digest(text.encode())[-4:], "big")


@dataclass(frozen=True)
class HashRing:
    k: int
    v_per_group: int
    points: Tuple[Tuple[int, int], ...]  # (position, group_id), ascending
    salt: str = ""

    @property
    def positions(self) -> List[int]:
        return [p for p, _ in self.points]

    @property
    def point_groups(self) -> List[int]:
        return [g for _, g in self.points]


def init_hash_ring(k: int, v_per_group: int = 100, salt: str = "", max_retries: int = 8) -> HashRing:
    if k < 2:
        raise ValueError(f"need at least 2 groups, got k={k}")
    if v_per_group < 1:
        raise ValueError(f"need at least 1 virtual node per group, got {v_per_group}")
    for attempt in range(max_retries):
        s = salt if attempt == 0 else f"{salt}/retry{attempt}"
        points = [(hash32(f"group-{g}#vn-{i}|{s}"), g) for g in range(k) for i in range(v_per_group)]
        if len({p for p, _ in points}) == len(points):
            return HashRing(k, v_per_group, tuple(sorted(points)), s)
    raise CollidingPoints(f"ring positions collided after {max_retries} salts")


def node_key(node_id, ip: str, random_str: str) -> int:
    return hash32(f"{node_id}{ip}{random_str}")


def lookup(ring: HashRing, key: int) -> int:
    """Group of the first point at or clockwise-after ``key``."""
    (i,) = ringkernel.successor_indices(ring.positions, [key])
    return ring.points[i][1]


def assign_node(ring: HashRing, node_id, ip: str, random_str: str) -> int:
    if not ring.points:
        raise ValueError("empty ring")
    return lookup(ring, node_key(node_id, ip, random_str))


def assign_many(ring: HashRing, keys: Sequence[int]) -> List[int]:
    groups = ring.point_groups
    return [groups[i] for i in ringkernel.successor_indices(ring.positions, keys)]


def validate_grouping(assignment: Mapping[int, Sequence], k: Optional[int] = None,
                      min_size: int = MIN_GROUP_SIZE) -> Optional[int]:
    """Return None when every group has at least ``min_size`` members, else the
    lowest offending group id (empty groups included when ``k`` is given)."""
    ids = range(k) if k is not None else sorted(assignment)
    for g in ids:
        if len(assignment.get(g, ())) < min_size:
            return g
    return None


@dataclass
class Node:
    node_id: int
    ip: str


def initial_grouping(ring: HashRing, nodes: Sequence[Node], seed: int = 0, max_attempts: int = 64,
                     min_size: int = MIN_GROUP_SIZE) -> Dict[int, List[int]]:
    """Map nodes onto the ring, redrawing random strings until every group has
    ``min_size`` members; after ``max_attempts`` draws, the best draw is repaired
    by moving members out of the largest groups."""
    if len(nodes) < ring.k * min_size:
        raise GroupingError(f"{len(nodes)} nodes cannot fill {ring.k} groups of {min_size}")
    best = None
    for attempt in range(max_attempts):
        keys = [node_key(n.node_id, n.ip, f"r{seed}.{attempt}") for n in nodes]
        groups = assign_many(ring, keys)
        assignment: Dict[int, List[int]] = {g: [] for g in range(ring.k)}
        for n, g in zip(nodes, groups):
            assignment[g].append(n.node_id)
        if validate_grouping(assignment, ring.k, min_size) is None:
            return {g: sorted(m) for g, m in assignment.items()}
        deficit = sum(max(0, min_size - len(m)) for m in assignment.values())
        if best is None or deficit < best[0]:
            best = (deficit, assignment)
    assignment = {g: sorted(m) for g, m in best[1].items()}
    while (short := validate_grouping(assignment, ring.k, min_size)) is not None:
        donor = max(assignment, key=lambda g: (len(assignment[g]), -g))
        assignment[short].append(assignment[donor].pop())
        assignment[short].sort()
    return assignment


def even_grouping(node_ids: Sequence[int], k: int) -> Dict[int, List[int]]:
    """Contiguous blocks of size N/k, used when N = k*n must hold exactly."""
    if len(node_ids) % k:
        raise GroupingError(f"N={len(node_ids)} is not divisible by k={k}")
    n = len(node_ids) // k
    return {g: list(node_ids[g * n:(g + 1) * n]) for g in range(k)}


# --- dynamic weight grouping -------------------------------------------------

@dataclass
class GroupingParams:
    alpha: float = 1.0
    M0: float = 10.0
    E: float = 1.0
    c_init: float = 0.5
    beta: float = 0.5
    gamma_w: float = 0.3
    delta: float = 0.2
    w1: float = 0.7
    w2: float = 0.3
    lower: int = 3
    upper: Optional[int] = None
    v_per_group: int = 100
    recompute_every: int = 50

    def __post_init__(self):
        if abs(self.beta + self.gamma_w + self.delta - 1.0) > 1e-9:
            raise ValueError("load weights beta + gamma_w + delta must sum to 1")
        if min(self.beta, self.gamma_w, self.delta, self.w1, self.w2) < 0:
            raise ValueError("weights must be non-negative")
        if self.lower < 3:
            raise ValueError("lower regroup threshold must be at least 3")
        if self.upper is not None and self.upper <= self.lower:
            raise ValueError("upper regroup threshold must exceed the lower one")

    def upper_for(self, n_total: int, k: int) -> int:
        return self.upper if self.upper is not None else math.ceil(3 * n_total / k)


@dataclass
class GroupStats:
    group_id: int
    t: int = 0
    n_part: int = 0
    impacts: List[float] = field(default_factory=list)
    c_init: float = 0.5
    member_loads: Dict[int, Tuple[float, float, float]] = field(default_factory=dict)


def consensus_success_rate(t: int, n_part: int, alpha: float) -> float:
    if n_part <= 0:
        raise ZeroParticipation("group has not participated in any consensus")
    if not 0 <= t <= n_part:
        raise ValueError(f"successes t={t} outside [0, {n_part}]")
    return alpha * math.sqrt(t / n_part)


def transaction_impact(x: float, M0: float) -> float:
    if x < 0 or M0 <= 0:
        raise ValueError("need x >= 0 and M0 > 0")
    return math.sqrt(x / M0) if x < M0 else 1.0


def group_credit(stats: GroupStats, params: GroupingParams) -> float:
    gamma_rate = consensus_success_rate(stats.t, stats.n_part, params.alpha)
    if not stats.impacts:
        raise ValueError("group credit needs at least one transaction impact value")
    f_values = [transaction_impact(x, params.M0) for x in stats.impacts]
    denom = sum(f_values)
    if denom == 0:
        raise ZeroImpactSum("all transaction impacts are zero")
    # E is a scalar here, so the quotient reduces to E; kept literal on purpose.
    return gamma_rate * sum(params.E * f for f in f_values) / denom + stats.c_init


def node_load(cpu: float, mem: float, net: float, params: GroupingParams) -> float:
    for u in (cpu, mem, net):
        if not 0.0 <= u <= 1.0:
            raise ValueError(f"utilization {u} outside [0, 1]")
    return params.beta * cpu + params.gamma_w * mem + params.delta * net


def group_load(stats: GroupStats, params: Optional[GroupingParams] = None) -> float:
    if not stats.member_loads:
        raise EmptyGroup(f"group {stats.group_id} has no members")
    params = params or GroupingParams()
    loads = [node_load(*u, params) for u in stats.member_loads.values()]
    return sum(loads) / len(loads)


def group_score(credit: float, load: float, params: GroupingParams) -> float:
    return params.w1 * credit - params.w2 * load


def place_new_node(all_stats: Sequence[GroupStats], params: GroupingParams) -> int:
    if not all_stats:
        raise ValueError("no groups to place the node in")
    scored = [(group_score(group_credit(s, params), group_load(s, params), params), s.group_id)
              for s in all_stats]
    return argmax_lowest_id(scored)


def argmax_lowest_id(scored: Sequence[Tuple[float, int]]) -> int:
    best_score, best_id = scored[0]
    for score, gid in scored[1:]:
        if score > best_score or (score == best_score and gid < best_id):
            best_score, best_id = score, gid
    return best_id


def check_rebalance(group_sizes: Sequence[int], params: GroupingParams, n_total: Optional[int] = None) -> bool:
    k = len(group_sizes)
    upper = params.upper_for(n_total if n_total is not None else sum(group_sizes), k)
    return any(s > upper or s < params.lower for s in group_sizes)


@dataclass
class GroupEvent:
    kind: str
    node_id: Optional[int]
    group_id: Optional[int]


class GroupTable:
    """Owns the live partition and its statistics; mutated only by the coordinator."""

    def __init__(self, ring: HashRing, nodes: Sequence[Node], params: Optional[GroupingParams] = None, seed: int = 0):
        self.ring = ring
        self.params = params or GroupingParams()
        self.seed = seed
        self.nodes = {n.node_id: n for n in nodes}
        self.assignment = initial_grouping(ring, list(nodes), seed)
        self.stats = {g: GroupStats(g, c_init=self.params.c_init) for g in range(ring.k)}
        self.loads: Dict[int, Tuple[float, float, float]] = {n.node_id: (0.0, 0.0, 0.0) for n in nodes}
        self.scores: Dict[int, float] = {}
        self.events: List[GroupEvent] = [GroupEvent("initial", None, None)]
        self._blocks_since_recompute = 0
        self._sync_loads()

    def _sync_loads(self):
        for g, members in self.assignment.items():
            self.stats[g].member_loads = {m: self.loads[m] for m in members}

    def group_of(self, node_id: int) -> int:
        for g, members in self.assignment.items():
            if node_id in members:
                return g
        raise KeyError(node_id)

    def recompute_scores(self) -> Dict[int, float]:
        self.scores = {}
        for g, s in self.stats.items():
            if s.n_part and s.impacts and s.member_loads:
                self.scores[g] = group_score(group_credit(s, self.params), group_load(s, self.params), self.params)
        return self.scores

    def record_consensus(self, group_id: int, success: bool, importance: float):
        s = self.stats[group_id]
        s.n_part += 1
        s.t += int(success)
        s.impacts.append(importance)
        self._blocks_since_recompute += 1
        if self._blocks_since_recompute >= self.params.recompute_every:
            self._blocks_since_recompute = 0
            self.recompute_scores()

    def join(self, node: Node, load=(0.0, 0.0, 0.0)) -> int:
        self.nodes[node.node_id] = node
        self.loads[node.node_id] = tuple(load)
        ready = [s for s in self.stats.values() if s.n_part and s.impacts and s.member_loads]
        if ready:
            g = place_new_node(ready, self.params)
        else:
            g = assign_node(self.ring, node.node_id, node.ip, f"r{self.seed}.join")
        self.assignment[g].append(node.node_id)
        self.assignment[g].sort()
        self.events.append(GroupEvent("join", node.node_id, g))
        self._after_membership_change()
        return g

    def leave(self, node_id: int):
        g = self.group_of(node_id)
        self.assignment[g].remove(node_id)
        del self.nodes[node_id]
        del self.loads[node_id]
        self.events.append(GroupEvent("leave", node_id, g))
        self._after_membership_change()

    def _after_membership_change(self):
        sizes = [len(self.assignment[g]) for g in range(self.ring.k)]
        if check_rebalance(sizes, self.params, len(self.nodes)):
            self.assignment = initial_grouping(self.ring, sorted(self.nodes.values(), key=lambda n: n.node_id), self.seed)
            self.events.append(GroupEvent("regroup", None, None))
        self._sync_loads()
        self.recompute_scores()
