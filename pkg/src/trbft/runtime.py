"""Effects emitted by protocol state machines and the read-only world directory."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from .crypto import VerifyingKey
from .usig import TrustRegistry


@dataclass(frozen=True)
class Send:
    dst: int
    msg: Any


@dataclass(frozen=True)
class SetTimer:
    name: str
    delay: int
    token: int


@dataclass(frozen=True)
class Note:
    kind: str
    data: tuple = ()


@dataclass(frozen=True)
class StartIntra:
    """Local hand-off from a node's inter-group replica to its group leader role."""
    block: Any
    proofs: Any


def inter_f(k: int) -> int:
    """Byzantine group leaders tolerated among ``k`` (2f+1 with USIG)."""
    return (k - 1) // 2


def intra_threshold(n: int) -> int:
    """Distinct signers needed for "more than 3n/4"."""
    return 3 * n // 4 + 1


def intra_tolerance(n: int) -> int:
    """Largest f with f < n/4."""
    return math.ceil(n / 4) - 1


def vote_quorum(n: int) -> int:
    return n // 2 + 1


def primary_of_view(v: int, k: int) -> int:
    if k < 1:
        raise ValueError("need at least one group leader")
    return v % k


@dataclass
class Timing:
    request_timeout: int = 100
    client_timeout: int = 300
    heartbeat_interval: int = 50
    election_timeout: int = 150
    batch_timeout: int = 10


@dataclass
class Directory:
    """Everything installed before startup and readable by every node."""

    seats: List[int]
    groups: Dict[int, List[int]]
    leaders: Dict[int, int]
    trust: TrustRegistry
    sig_keys: Dict[int, VerifyingKey]
    client_keys: Dict[int, bytes]
    has_tee: Dict[int, bool]
    timing: Timing = field(default_factory=Timing)
    batch_size: int = 1
    checkpoint_interval: int = 10
    strict_client_quorum: bool = False

    @property
    def k(self) -> int:
        return len(self.seats)

    @property
    def f(self) -> int:
        return inter_f(self.k)

    def group_of(self, node_id: int) -> int:
        for g, members in self.groups.items():
            if node_id in members:
                return g
        raise KeyError(node_id)

    def primary(self, view: int) -> int:
        return self.seats[primary_of_view(view, self.k)]

    def group_keys(self, g: int) -> Dict[int, VerifyingKey]:
        return {m: self.sig_keys[m] for m in self.groups[g]}


@dataclass
class Faults:
    """Active Byzantine behaviors of one node, each with a [start, end) tick window."""

    behaviors: Dict[str, Tuple[int, Optional[int], dict]] = field(default_factory=dict)

    def add(self, name: str, start: int = 0, end: Optional[int] = None, params: Optional[dict] = None):
        self.behaviors[name] = (start, end, dict(params or {}))

    def active(self, name: str, now: int) -> bool:
        spec = self.behaviors.get(name)
        if spec is None:
            return False
        start, end, _ = spec
        return now >= start and (end is None or now < end)

    def params(self, name: str) -> dict:
        return self.behaviors[name][2]

    @property
    def byzantine(self) -> bool:
        return bool(self.behaviors)


class StateMachine:
    """Single-owner protocol machine: one event in, a list of effects out."""

    def __init__(self):
        self._out: List[Any] = []
        self.now = 0
        self._tokens: Dict[str, int] = {}

    def _begin(self, now: int):
        self._out = []
        self.now = now

    def _end(self) -> List[Any]:
        out, self._out = self._out, []
        return out

    def send(self, dst: int, msg):
        self._out.append(Send(dst, msg))

    def note(self, kind: str, *data):
        self._out.append(Note(kind, data))

    def set_timer(self, name: str, delay: int) -> int:
        token = self._tokens.get(name, 0) + 1
        self._tokens[name] = token
        self._out.append(SetTimer(name, delay, token))
        return token

    def cancel_timer(self, name: str):
        self._tokens[name] = self._tokens.get(name, 0) + 1

    def timer_live(self, name: str, token: int) -> bool:
        return self._tokens.get(name) == token
