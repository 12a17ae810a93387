"""Client side: one request at a time, completed by f+1 matching group replies."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .crypto import CryptoError, VerifyingKey, verify_aggregate
from .inter import sign_request
from .messages import GroupReply, Request, ack_hash
from .runtime import inter_f, intra_threshold


class Busy(Exception):
    """A request is still outstanding."""


class BadGroupSig(Exception):
    pass


@dataclass
class Completed:
    request: Request
    block_digest: bytes
    result: bytes
    groups: Tuple[int, ...]
    replies: Tuple[GroupReply, ...]


@dataclass
class ClientState:
    client_id: int
    key: bytes
    group_keys: Dict[int, Dict[int, VerifyingKey]]
    k: int
    strict_quorum: bool = False
    seq: int = 0
    pending: Optional[Request] = None
    replies: Dict[int, GroupReply] = field(default_factory=dict)
    completed: List[Completed] = field(default_factory=list)
    discarded: List[Tuple[str, GroupReply]] = field(default_factory=list)

    @property
    def quorum(self) -> int:
        f = inter_f(self.k)
        return f + 2 if self.strict_quorum else f + 1

    def submit(self, op: bytes) -> Request:
        if self.pending is not None:
            raise Busy(f"request {self.pending.seq} still pending")
        self.seq += 1
        self.pending = sign_request(self.key, Request(op, self.seq, self.client_id))
        self.replies = {}
        return self.pending

    def verify_reply(self, reply: GroupReply):
        keys = self.group_keys.get(reply.group_id)
        if keys is None:
            raise BadGroupSig(f"unknown group {reply.group_id}")
        try:
            ok = verify_aggregate(keys, ack_hash(reply.term, reply.index, reply.block_digest), reply.agg)
        except CryptoError as exc:
            raise BadGroupSig(str(exc)) from exc
        if not ok:
            raise BadGroupSig("aggregate does not verify")
        if reply.agg.count_signers() < intra_threshold(len(keys)):
            raise BadGroupSig("too few signers")

    def collect_reply(self, reply: GroupReply) -> Optional[Completed]:
        """Returns Completed once enough groups agree, otherwise None."""
        req = self.pending
        if req is None or req.key not in reply.request_keys:
            return None
        try:
            self.verify_reply(reply)
        except BadGroupSig as exc:
            self.discarded.append((str(exc), reply))
            return None
        self.replies.setdefault(reply.group_id, reply)
        tally: Dict[Tuple[bytes, bytes], List[GroupReply]] = {}
        for r in self.replies.values():
            tally.setdefault((r.block_digest, r.result), []).append(r)
        for (d, result), rs in sorted(tally.items()):
            if len(rs) >= self.quorum:
                rs = sorted(rs, key=lambda r: r.group_id)
                done = Completed(req, d, result, tuple(r.group_id for r in rs), tuple(rs))
                self.completed.append(done)
                self.pending = None
                return done
        return None
