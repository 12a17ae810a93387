"""Protocol message types and their wire tags.

Tag ranges: 0x01-0x0F crypto values, 0x10-0x1F client traffic, 0x20-0x2F
inter-group consensus, 0x30-0x3F intra-group replication, 0x40-0x4F
elections, 0x50-0x5F simulator records.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple

from . import wire
from .crypto import AggregateSignature, PartialSignature, digest
from .usig import UI, Attestation, AttestationClaim

wire.register_external(0x01, UI)
wire.register_external(0x02, PartialSignature)
wire.register_external(0x03, AggregateSignature)
wire.register_external(0x04, AttestationClaim)
wire.register_external(0x05, Attestation)


# --- client ------------------------------------------------------------------

@wire.register(0x10)
@dataclass(frozen=True)
class Request:
    op: bytes
    seq: int
    client: int
    sig: bytes = b""

    def signing_bytes(self) -> bytes:
        return wire.encode((b"REQUEST", self.op, self.seq, self.client))

    @property
    def key(self) -> Tuple[int, int]:
        return (self.client, self.seq)


@wire.register(0x11)
@dataclass(frozen=True)
class Block:
    requests: Tuple[Request, ...]
    batch_id: int
    digest: bytes

    @staticmethod
    def compute_digest(requests, batch_id: int) -> bytes:
        return digest(wire.encode((tuple(requests), batch_id)))

    @classmethod
    def make(cls, requests, batch_id: int) -> "Block":
        requests = tuple(requests)
        return cls(requests, batch_id, cls.compute_digest(requests, batch_id))

    def well_formed(self) -> bool:
        return self.digest == self.compute_digest(self.requests, self.batch_id)


@wire.register(0x12)
@dataclass(frozen=True)
class Forward:
    request: Request


@wire.register(0x13)
@dataclass(frozen=True)
class GroupReply:
    group_id: int
    leader: int
    view: int
    term: int
    index: int
    block_digest: bytes
    result: bytes
    request_keys: Tuple[Tuple[int, int], ...]
    agg: AggregateSignature


# --- inter-group ---------------------------------------------------------------

@wire.register(0x20)
@dataclass(frozen=True)
class PrePrepare:
    view: int
    sender: int
    block: Block
    ui: UI


@wire.register(0x21)
@dataclass(frozen=True)
class Prepare:
    view: int
    sender: int
    origin: int
    block: Block
    ui_origin: UI
    ui: UI

    def embedded_preprepare(self) -> PrePrepare:
        return PrePrepare(self.view, self.origin, self.block, self.ui_origin)


@wire.register(0x22)
@dataclass(frozen=True)
class Checkpoint:
    sender: int
    count: int
    state_digest: bytes
    vreq: Tuple[Tuple[int, int], ...]
    ui: Optional[UI] = None


@wire.register(0x23)
@dataclass(frozen=True)
class ReplayItem:
    view: int
    order_ui: UI
    block: Block

    @property
    def order_key(self) -> Tuple[int, int]:
        return (self.view, self.order_ui.cv)


@wire.register(0x24)
@dataclass(frozen=True)
class ViewChange:
    sender: int
    new_view: int
    c_latest: Tuple[Checkpoint, ...]
    o: tuple
    ui: Optional[UI] = None


@wire.register(0x25)
@dataclass(frozen=True)
class NewView:
    sender: int
    new_view: int
    vcc: Tuple[ViewChange, ...]
    s: Tuple[ReplayItem, ...]
    ui: Optional[UI] = None


@wire.register(0x26)
@dataclass(frozen=True)
class Endorse:
    view: int
    sender: int
    item: ReplayItem
    ui: UI


def ui_bytes(msg) -> bytes:
    """Bytes a message's own UI certifies.

    PRE-PREPARE, PREPARE and endorsements certify the block digest so group
    followers can re-check them as proofs; other messages certify their own
    encoding with the UI slot empty.
    """
    if isinstance(msg, (PrePrepare, Prepare)):
        return msg.block.digest
    if isinstance(msg, Endorse):
        return msg.item.block.digest
    return wire.encode(replace(msg, ui=None))


def sender_of(msg) -> int:
    return msg.sender


# --- intra-group ---------------------------------------------------------------

@wire.register(0x30)
@dataclass(frozen=True)
class Proofs:
    """Inter-group certificate: the ordering UI plus f+1 endorsing UIs over m."""
    view: int
    order_ui: UI
    uis: Tuple[UI, ...]

    @property
    def order_key(self) -> Tuple[int, int]:
        return (self.view, self.order_ui.cv)


@wire.register(0x31)
@dataclass(frozen=True)
class AppendEntries:
    term: int
    leader: int
    prev_term: int
    prev_index: int
    leader_commit: int
    index: int = 0
    block: Optional[Block] = None
    proofs: Optional[Proofs] = None
    sig: Optional[PartialSignature] = None
    commit_cert: Optional[AggregateSignature] = None
    entry_term: int = 0
    repair: bool = False

    @property
    def is_heartbeat(self) -> bool:
        return self.block is None


@wire.register(0x32)
@dataclass(frozen=True)
class AppendEntriesReply:
    term: int
    sender: int
    index: int
    success: bool
    reason: str = ""
    sig: Optional[PartialSignature] = None
    match_index: int = 0
    repair: bool = False


@wire.register(0x33)
@dataclass(frozen=True)
class AppendEntriesCommit:
    term: int
    leader: int
    index: int
    block: Block
    agg: AggregateSignature


@wire.register(0x34)
@dataclass(frozen=True)
class AppendEntriesCommitReply:
    term: int
    sender: int
    index: int
    block: Block
    sig: PartialSignature


def entry_hash(term: int, index: int, block_digest: bytes) -> bytes:
    """H(T || L || m)."""
    return digest(b"ENTRY" + term.to_bytes(8, "big") + index.to_bytes(8, "big") + block_digest)


def ack_hash(term: int, index: int, block_digest: bytes) -> bytes:
    """H("ACK" || T || L || m)."""
    return digest(b"ACK" + term.to_bytes(8, "big") + index.to_bytes(8, "big") + block_digest)


# --- elections -----------------------------------------------------------------

@wire.register(0x40)
@dataclass(frozen=True)
class RequestVote:
    term: int
    candidate: int
    last_log_term: int
    last_log_index: int


@wire.register(0x41)
@dataclass(frozen=True)
class VoteChallenge:
    term: int
    voter: int
    commit_term: int
    commit_index: int
    nonce: bytes


@wire.register(0x42)
@dataclass(frozen=True)
class ProofResponse:
    term: int
    candidate: int
    commit_term: int
    commit_index: int
    log_hash: bytes
    attestation: Attestation


@wire.register(0x43)
@dataclass(frozen=True)
class VoteGrant:
    term: int
    voter: int


@wire.register(0x44)
@dataclass(frozen=True)
class VoteReject:
    term: int
    voter: int
    reason: str


# Accounting categories. Consensus traffic is what the communication-count
# formula measures; everything else is tallied separately.
PHASE_OF = {
    PrePrepare: "pre_prepare",
    Prepare: "prepare",
    AppendEntriesReply: "append_reply",
    AppendEntriesCommit: "commit",
    AppendEntriesCommitReply: "commit_reply",
    Checkpoint: "checkpoint",
    ViewChange: "view_change",
    NewView: "new_view",
    Endorse: "endorse",
    Request: "client_request",
    Forward: "forward",
    GroupReply: "client_reply",
    RequestVote: "election",
    VoteChallenge: "election",
    ProofResponse: "election",
    VoteGrant: "election",
    VoteReject: "election",
}

CONSENSUS_PHASES = ("pre_prepare", "prepare", "append_entries", "append_reply", "commit", "commit_reply")


def phase_of(msg) -> str:
    if isinstance(msg, AppendEntries):
        if msg.is_heartbeat:
            return "heartbeat"
        return "repair" if msg.repair else "append_entries"
    if isinstance(msg, AppendEntriesReply):
        if msg.index == 0:
            return "heartbeat"
        return "repair" if msg.repair else "append_reply"
    return PHASE_OF[type(msg)]
