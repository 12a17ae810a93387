"""Byzantine-hardened Raft inside one group.

Replication carries the inter-group certificate with every entry and commits
only on an aggregate of more than 3n/4 partial signatures. Elections follow
Committed Proof: a voter challenges the candidate to show, under remote
attestation, the hash of the voter's last committed entry.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

from .crypto import (
    AggregateSignature,
    SigningKey,
    aggregate,
    digest,
    partial_sign,
    verify_aggregate,
    verify_partial,
)
from .messages import (
    AppendEntries,
    AppendEntriesCommit,
    AppendEntriesCommitReply,
    AppendEntriesReply,
    Block,
    GroupReply,
    ProofResponse,
    Proofs,
    RequestVote,
    VoteChallenge,
    VoteGrant,
    VoteReject,
    ack_hash,
    entry_hash,
)
from .runtime import Directory, Faults, StateMachine, intra_threshold, vote_quorum
from .usig import AttestationClaim

LEADER, FOLLOWER, CANDIDATE = "leader", "follower", "candidate"

STALE_TERM = "StaleTerm"
PREV_MISMATCH = "PrevMismatch"
BAD_LEADER_SIG = "BadLeaderSig"
BAD_PROOF_UI = "BadProofUI"
SEQ_MISMATCH = "SeqMismatch"
BAD_AGGREGATE = "BadAggregate"
INSUFFICIENT_SIGNERS = "InsufficientSigners"
STALE_COMMIT = "StaleCommit"
NOT_LEADER = "NotLeader"
BAD_PROOFS = "BadProofs"
MISSING_ENTRY = "MissingEntry"

GENESIS_APP_STATE = digest(b"app-genesis")
NO_ENTRY_HASH = entry_hash(0, 0, b"")


@dataclass
class LogEntry:
    term: int
    index: int
    block: Block
    proofs: Proofs
    commit_cert: Optional[AggregateSignature] = None

    @property
    def hash(self) -> bytes:
        return entry_hash(self.term, self.index, self.block.digest)


def tampered(block: Block) -> Block:
    reqs = tuple(replace(r, op=r.op + b"#tampered") for r in block.requests)
    return Block.make(reqs, block.batch_id)


def check_proofs(directory: Directory, block: Block, proofs: Optional[Proofs]) -> bool:
    """f+1 distinct group leaders certified exactly this block, in this order slot."""
    if proofs is None or not block.well_formed():
        return False
    trust = directory.trust
    if proofs.order_ui.issuer != directory.primary(proofs.view):
        return False
    if not trust.check_ui(proofs.order_ui, block.digest):
        return False
    issuers = {ui.issuer for ui in proofs.uis}
    if len(issuers) != len(proofs.uis) or len(issuers) < directory.f + 1:
        return False
    if not issuers <= set(directory.seats):
        return False
    return all(trust.check_ui(ui, block.digest) for ui in proofs.uis)


class GroupMember(StateMachine):
    def __init__(self, node_id: int, group_id: int, enclave, signing_key: SigningKey, directory: Directory,
                 faults: Optional[Faults] = None, rng: Optional[random.Random] = None, timers: bool = True):
        super().__init__()
        self.id = node_id
        self.group_id = group_id
        self.enclave = enclave
        self.key = signing_key
        self.dir = directory
        self.faults = faults or Faults()
        self.rng = rng or random.Random(node_id)
        self.timers = timers
        self.members = sorted(directory.groups[group_id])
        self.peers = [m for m in self.members if m != node_id]
        self.n = len(self.members)
        self.threshold = intra_threshold(self.n)
        self.keys = directory.group_keys(group_id)
        self.has_tee = directory.has_tee.get(node_id, True)

        self.leader_id = directory.leaders[group_id]
        self.role = LEADER if self.leader_id == node_id else FOLLOWER
        self.term = 1
        self.voted_for: Dict[int, int] = {1: self.leader_id}
        self.log: List[LogEntry] = []
        self.commit_index = 0
        self.app_state = GENESIS_APP_STATE
        self.results: Dict[int, bytes] = {}
        self.applied: List[bytes] = []

        self.replies: Dict[int, Dict[int, object]] = {}
        self.acks: Dict[int, Dict[int, object]] = {}
        self.replied = set()
        self.next_index: Dict[int, int] = {p: 1 for p in self.peers}
        self.held_commits: Dict[int, AppendEntriesCommit] = {}

        self.grants = set()
        self.challenges: Dict[tuple, tuple] = {}
        self.candidacies = 0
        self.rejects: List[tuple] = []

    # -- bookkeeping ----------------------------------------------------------

    @property
    def last_index(self) -> int:
        return len(self.log)

    @property
    def last_term(self) -> int:
        return self.log[-1].term if self.log else 0

    def entry(self, index: int) -> Optional[LogEntry]:
        return self.log[index - 1] if 1 <= index <= len(self.log) else None

    def committed_digests(self) -> List[bytes]:
        return [e.block.digest for e in self.log[: self.commit_index]]

    def _reject(self, reason: str, *info):
        self.rejects.append((reason,) + info)
        self.note("reject", self.id, reason, *info)

    def _apply(self, e: LogEntry):
        self.app_state = digest(self.app_state + e.block.digest)
        self.results[e.index] = self.app_state
        self.applied.append(e.block.digest)
        self.note("intra_commit", self.group_id, self.id, e.index, e.block.digest.hex()[:8])

    def boot(self, now: int = 0) -> list:
        self._begin(now)
        if self.role == LEADER:
            self._arm_heartbeat()
        else:
            self._arm_election()
        return self._end()

    def _arm_election(self):
        if self.timers:
            t = self.dir.timing.election_timeout
            self.set_timer("election", self.rng.randint(t, 2 * t))

    def _arm_heartbeat(self):
        if self.timers:
            self.set_timer("heartbeat", self.dir.timing.heartbeat_interval)

    def on_timer(self, name: str, token: int, now: int = 0) -> list:
        self._begin(now)
        if self.timer_live(name, token):
            if name == "election" and self.role != LEADER:
                self.start_election()
            elif name == "heartbeat" and self.role == LEADER:
                self.heartbeat()
                self._arm_heartbeat()
        return self._end()

    def handle(self, src: int, msg, now: int = 0) -> list:
        self._begin(now)
        if src in self.keys:
            handler = self._HANDLERS.get(type(msg))
            if handler is not None:
                handler(self, msg)
        return self._end()

    # -- leader broadcast -----------------------------------------------------

    def start(self, block: Block, proofs: Proofs, now: int = 0) -> list:
        self._begin(now)
        self.leader_broadcast(block, proofs)
        return self._end()

    def leader_broadcast(self, block: Block, proofs: Proofs):
        if self.role != LEADER:
            self._reject(NOT_LEADER, block.digest.hex()[:8])
            return
        if not check_proofs(self.dir, block, proofs):
            self._reject(BAD_PROOFS, block.digest.hex()[:8])
            return
        if any(e.block.digest == block.digest for e in self.log):
            return
        index = self.last_index + 1
        e = LogEntry(self.term, index, block, proofs)
        self.log.append(e)
        sig = partial_sign(self.key, e.hash)
        self.replies[index] = {self.id: sig}
        sent, sent_sig = block, sig
        if self.faults.active("TamperBlock", self.now):
            # signs the altered block so only the inter-group proofs give it away
            sent = tampered(block)
            sent_sig = partial_sign(self.key, entry_hash(self.term, index, sent.digest))
        prev = self.entry(index - 1)
        for p in self.peers:
            self.send(p, AppendEntries(self.term, self.id, prev.term if prev else 0, index - 1, self.commit_index,
                                       index, sent, proofs, sent_sig, None, self.term))
            self.next_index[p] = index + 1
        self._try_leader_commit()

    # -- follower reply -------------------------------------------------------

    def _accept_leader(self, msg: AppendEntries) -> bool:
        if msg.term < self.term:
            return False
        if msg.term > self.term or self.role != FOLLOWER or self.leader_id != msg.leader:
            self.term = msg.term
            self.role = FOLLOWER
            self.leader_id = msg.leader
        if not self.faults.active("ForgedFreshnessCandidate", self.now):
            self._arm_election()
        return True

    def follower_handle_append(self, msg: AppendEntries):
        if self.role == LEADER and msg.term <= self.term:
            return
        if not self._accept_leader(msg):
            if not msg.is_heartbeat:
                self._reply(msg, False, STALE_TERM)
            return
        if self.faults.active("ForgedFreshnessCandidate", self.now):
            return
        prev = self.entry(msg.prev_index)
        prev_ok = msg.prev_index == 0 or (prev is not None and prev.term == msg.prev_term)
        if msg.is_heartbeat:
            if not prev_ok and msg.prev_index > self.commit_index:
                self.send(msg.leader, AppendEntriesReply(self.term, self.id, 0, False, PREV_MISMATCH,
                                                         None, self.commit_index))
            return
        if not prev_ok:
            self._reply(msg, False, PREV_MISMATCH)
            return
        entry_term = msg.entry_term or msg.term
        h = entry_hash(entry_term, msg.index, msg.block.digest)
        if msg.sig is None or msg.sig.signer != msg.leader or not verify_partial(self.keys[msg.leader], h, msg.sig):
            self._reply(msg, False, BAD_LEADER_SIG)
            return
        if not check_proofs(self.dir, msg.block, msg.proofs):
            self._reply(msg, False, BAD_PROOF_UI)
            return
        if prev is not None and msg.index > 1 and not msg.proofs.order_key > prev.proofs.order_key:
            self._reply(msg, False, SEQ_MISMATCH)
            return
        existing = self.entry(msg.index)
        if existing is not None and existing.block.digest != msg.block.digest:
            if msg.index <= self.commit_index:
                self._reply(msg, False, "ConflictCommitted")
                return
            del self.log[msg.index - 1:]
            existing = None
        if existing is None:
            stored = tampered(msg.block) if self.faults.active("TamperBlock", self.now) else msg.block
            self.log.append(LogEntry(entry_term, msg.index, stored, msg.proofs))
        if msg.commit_cert is not None and msg.index == self.commit_index + 1:
            if self._cert_ok(entry_term, msg.index, msg.block.digest, msg.commit_cert):
                self._commit(self.log[msg.index - 1], msg.commit_cert, ack_to=None)
        # a Byzantine follower that tampered its copy still signs the original
        self._reply(msg, True, "", partial_sign(self.key, h))
        self._drain_commits()

    def _reply(self, msg: AppendEntries, success: bool, reason: str, sig=None):
        if not success:
            self._reject(reason, msg.index)
        self.send(msg.leader, AppendEntriesReply(self.term, self.id, msg.index, success, reason, sig,
                                                 self.last_index, msg.repair))

    # -- leader commit --------------------------------------------------------

    def leader_handle_reply(self, msg: AppendEntriesReply):
        if self.role != LEADER:
            return
        if msg.term > self.term:
            self._step_down(msg.term)
            return
        if not msg.success:
            if msg.reason == PREV_MISMATCH:
                self._repair(msg.sender, msg.match_index)
            return
        e = self.entry(msg.index)
        if e is None:
            return
        sig = msg.sig
        if sig is None or sig.signer != msg.sender or not verify_partial(self.keys[msg.sender], e.hash, sig):
            self._reject("ForgedReply", msg.sender, msg.index)
            return
        if msg.index > self.commit_index:
            self.replies.setdefault(msg.index, {})[msg.sender] = sig
            self._try_leader_commit()
        if msg.repair and msg.index < self.last_index and self.next_index.get(msg.sender, 0) <= msg.index + 1:
            self.next_index[msg.sender] = msg.index + 1
            self._send_repair(msg.sender, msg.index + 1)

    def _try_leader_commit(self):
        while self.commit_index < self.last_index:
            index = self.commit_index + 1
            votes = self.replies.get(index, {})
            if len(votes) < self.threshold:
                return
            e = self.log[index - 1]
            agg = aggregate(votes.values())
            e.commit_cert = agg
            self.commit_index = index
            self._apply(e)
            self.acks[index] = {self.id: partial_sign(self.key, ack_hash(e.term, index, e.block.digest))}
            for p in self.peers:
                self.send(p, AppendEntriesCommit(e.term, self.id, index, e.block, agg))
            self._try_group_reply(index)

    def _cert_ok(self, term: int, index: int, block_digest: bytes, agg: AggregateSignature) -> bool:
        try:
            valid = verify_aggregate(self.keys, entry_hash(term, index, block_digest), agg)
        except Exception:
            return False
        return valid and agg.count_signers() >= self.threshold

    # -- commit reply ---------------------------------------------------------

    def follower_handle_commit(self, msg: AppendEntriesCommit):
        # no term check: an entry from an earlier term still carries a valid certificate
        if msg.index <= self.commit_index:
            self._reject(STALE_COMMIT, msg.index)
            return
        e = self.entry(msg.index)
        if e is None or msg.index > self.commit_index + 1:
            self.held_commits[msg.index] = msg
            return
        try:
            valid = verify_aggregate(self.keys, entry_hash(e.term, msg.index, msg.block.digest), msg.agg)
        except Exception:
            valid = False
        if not valid:
            self._reject(BAD_AGGREGATE, msg.index)
            return
        if msg.agg.count_signers() < self.threshold:
            self._reject(INSUFFICIENT_SIGNERS, msg.index)
            return
        honest_copy = e.block.digest == msg.block.digest
        if not honest_copy and not self.faults.active("TamperBlock", self.now):
            self._reject("CommitDigestMismatch", msg.index)
            return
        self._commit(e, msg.agg, ack_to=msg.leader)
        self._drain_commits()

    def _commit(self, e: LogEntry, cert: AggregateSignature, ack_to: Optional[int]):
        e.commit_cert = cert
        self.commit_index = e.index
        if self.faults.active("FakeCommitClaim", self.now):
            self.note("fake_commit", self.group_id, self.id, e.index)
        else:
            self._apply(e)
        if ack_to is not None:
            # signs whatever it stored; a tampered copy yields an ACK the leader discards
            self.send(ack_to, AppendEntriesCommitReply(e.term, self.id, e.index, e.block,
                                                       partial_sign(self.key, ack_hash(e.term, e.index, e.block.digest))))

    def _drain_commits(self):
        while self.commit_index + 1 in self.held_commits and self.entry(self.commit_index + 1) is not None:
            msg = self.held_commits.pop(self.commit_index + 1)
            self.follower_handle_commit(msg)
        for idx in [i for i in self.held_commits if i <= self.commit_index]:
            del self.held_commits[idx]

    def leader_handle_commit_reply(self, msg: AppendEntriesCommitReply):
        if self.role != LEADER:
            return
        e = self.entry(msg.index)
        if e is None or msg.sig.signer != msg.sender:
            return
        if not verify_partial(self.keys[msg.sender], ack_hash(e.term, msg.index, e.block.digest), msg.sig):
            self._reject("ForgedAck", msg.sender, msg.index)
            return
        self.acks.setdefault(msg.index, {})[msg.sender] = msg.sig
        self._try_group_reply(msg.index)

    def _try_group_reply(self, index: int):
        votes = self.acks.get(index, {})
        if index in self.replied or len(votes) < self.threshold:
            return
        self.replied.add(index)
        e = self.log[index - 1]
        agg = aggregate(votes.values())
        keys = tuple(r.key for r in e.block.requests)
        reply = GroupReply(self.group_id, self.id, e.proofs.view, e.term, index, e.block.digest,
                           self.results[index], keys, agg)
        self.note("group_reply", self.group_id, index, e.block.digest.hex()[:8])
        for client in sorted({r.client for r in e.block.requests}):
            self.send(client, reply)

    # -- repair ---------------------------------------------------------------

    def _repair(self, peer: int, match_index: int):
        nxt = max(1, min(self.next_index.get(peer, 1) - 1, match_index + 1))
        self.next_index[peer] = nxt
        self._send_repair(peer, nxt)

    def _send_repair(self, peer: int, index: int):
        e = self.entry(index)
        if e is None:
            return
        prev = self.entry(index - 1)
        sig = partial_sign(self.key, e.hash)
        self.send(peer, AppendEntries(self.term, self.id, prev.term if prev else 0, index - 1, self.commit_index,
                                      index, e.block, e.proofs, sig, e.commit_cert, e.term, True))

    # -- heartbeats -----------------------------------------------------------

    def heartbeat(self):
        prev = self.entry(self.commit_index)
        for p in self.peers:
            self.send(p, AppendEntries(self.term, self.id, prev.term if prev else 0, self.commit_index,
                                       self.commit_index))

    # -- elections ------------------------------------------------------------

    def start_election(self):
        if not self.has_tee:
            self.note("no_tee_restart", self.group_id, self.id)
            self._arm_election()
            return
        self.term += 1
        self.role = CANDIDATE
        self.leader_id = None
        self.voted_for[self.term] = self.id
        self.grants = {self.id}
        self.candidacies += 1
        self.note("candidate", self.group_id, self.id, self.term)
        if self.faults.active("ForgedFreshnessCandidate", self.now):
            last_term, last_index = 10**6, 10**6
        else:
            last_term, last_index = self.last_term, self.last_index
        for p in self.peers:
            self.send(p, RequestVote(self.term, self.id, last_term, last_index))
        self._arm_election()

    def commit_point(self):
        e = self.entry(self.commit_index)
        return (e.term, e.index) if e else (0, 0)

    def handle_request_vote(self, msg: RequestVote):
        if msg.term <= self.term:
            self._vote_reject(msg.candidate, msg.term, STALE_TERM)
            return
        if self.voted_for.get(msg.term) not in (None, msg.candidate):
            self._vote_reject(msg.candidate, msg.term, "AlreadyVoted")
            return
        if (msg.last_log_term, msg.last_log_index) < (self.last_term, self.last_index):
            self._vote_reject(msg.candidate, msg.term, "StaleLog")
            return
        ct, ci = self.commit_point()
        nonce = self.rng.getrandbits(128).to_bytes(16, "big")
        self.challenges[(msg.candidate, msg.term)] = (nonce, ct, ci)
        self.send(msg.candidate, VoteChallenge(msg.term, self.id, ct, ci, nonce))

    def candidate_prove(self, msg: VoteChallenge):
        if self.role != CANDIDATE or msg.term != self.term:
            return
        if self.faults.active("ForgedFreshnessCandidate", self.now):
            log_hash = digest(b"forged-freshness")
        elif msg.commit_index == 0:
            log_hash = NO_ENTRY_HASH
        else:
            e = self.entry(msg.commit_index)
            if e is None or e.term != msg.commit_term:
                self._reject(MISSING_ENTRY, msg.voter, msg.commit_index)
                return
            log_hash = e.hash
        att = self.enclave.attest(msg.nonce, AttestationClaim(self.has_tee, log_hash))
        self.send(msg.voter, ProofResponse(msg.term, self.id, msg.commit_term, msg.commit_index, log_hash, att))

    def grant_vote(self, msg: ProofResponse):
        pending = self.challenges.pop((msg.candidate, msg.term), None)
        if pending is None:
            return
        nonce, ct, ci = pending
        if msg.term <= self.term:
            self._vote_reject(msg.candidate, msg.term, STALE_TERM)
            return
        if self.voted_for.get(msg.term) not in (None, msg.candidate):
            self._vote_reject(msg.candidate, msg.term, "AlreadyVoted")
            return
        e = self.entry(ci)
        own_hash = e.hash if e is not None else NO_ENTRY_HASH
        att = msg.attestation
        if (msg.commit_term, msg.commit_index) != (ct, ci) or msg.log_hash != own_hash:
            self._vote_reject(msg.candidate, msg.term, "LogHashMismatch")
            return
        if (att.subject != msg.candidate or att.claim.log_hash != msg.log_hash or not att.claim.has_tee
                or not self.dir.trust.verify_attestation(att, nonce)):
            self._vote_reject(msg.candidate, msg.term, "BadAttestation")
            return
        self.term = msg.term
        self.voted_for[msg.term] = msg.candidate
        if self.role != FOLLOWER:
            self.role = FOLLOWER
            self.cancel_timer("heartbeat")
        self.leader_id = None
        self._arm_election()
        self.note("vote_granted", self.group_id, self.id, msg.candidate, msg.term)
        self.send(msg.candidate, VoteGrant(msg.term, self.id))

    def _vote_reject(self, candidate: int, term: int, reason: str):
        self.note("vote_rejected", self.group_id, self.id, candidate, term, reason)
        self.send(candidate, VoteReject(term, self.id, reason))

    def handle_vote_grant(self, msg: VoteGrant):
        if self.role != CANDIDATE or msg.term != self.term:
            return
        self.grants.add(msg.voter)
        if len(self.grants) >= vote_quorum(self.n):
            self._become_leader()

    def handle_vote_reject(self, msg: VoteReject):
        pass

    def _become_leader(self):
        self.role = LEADER
        self.leader_id = self.id
        self.cancel_timer("election")
        self.note("leader_elected", self.group_id, self.id, self.term)
        for p in self.peers:
            self.next_index[p] = self.last_index + 1
        self.heartbeat()
        self._arm_heartbeat()
        for index in range(self.commit_index + 1, self.last_index + 1):
            e = self.log[index - 1]
            self.replies[index] = {self.id: partial_sign(self.key, e.hash)}
            for p in self.peers:
                self._send_repair(p, index)

    def _step_down(self, term: int):
        self.term = term
        self.role = FOLLOWER
        self.leader_id = None
        self.cancel_timer("heartbeat")
        self._arm_election()

    def _on_append(self, msg: AppendEntries):
        self.follower_handle_append(msg)

    _HANDLERS = {
        AppendEntries: _on_append,
        AppendEntriesReply: leader_handle_reply,
        AppendEntriesCommit: follower_handle_commit,
        AppendEntriesCommitReply: leader_handle_commit_reply,
        RequestVote: handle_request_vote,
        VoteChallenge: candidate_prove,
        ProofResponse: grant_vote,
        VoteGrant: handle_vote_grant,
        VoteReject: handle_vote_reject,
    }


__all__ = ["GroupMember", "LogEntry", "check_proofs", "tampered"]
