"""Two-step USIG-backed BFT among group leaders, with checkpoints and view change.

Every message a replica sends carries a fresh UI from its enclave and goes to
every other leader, so each receiver sees a sender's messages as the gap-free
counter sequence 1, 2, 3, ... Messages are released to the protocol strictly
in that order (the FIFO rule); anything ahead of a gap waits.
"""
from __future__ import annotations

import hmac
from collections import OrderedDict
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

from .crypto import digest, mac
from .messages import (
    Block,
    Checkpoint,
    Endorse,
    Forward,
    NewView,
    PrePrepare,
    Prepare,
    Proofs,
    ReplayItem,
    Request,
    ViewChange,
    ui_bytes,
)
from .runtime import Directory, Faults, StartIntra, StateMachine

GENESIS_STATE = digest(b"genesis")

# drop reasons
WRONG_VIEW = "WrongView"
NOT_PRIMARY = "NotPrimary"
BAD_CLIENT_SIG = "BadClientSig"
ALREADY_EXECUTED = "AlreadyExecuted"
FIFO_GAP = "FifoGap"
BAD_UI = "BadUI"
STALE_SEQ = "StaleSeq"
BAD_CHECKPOINT_CERT = "BadCheckpointCert"
COUNTER_MISMATCH = "CounterMismatch"
HOLE_IN_O = "HoleInO"
REPLAY_SET_MISMATCH = "ReplaySetMismatch"
BAD_VCC = "BadVcc"

UI_MESSAGES = (PrePrepare, Prepare, Checkpoint, ViewChange, NewView, Endorse)


def sign_request(client_key: bytes, req: Request) -> Request:
    return replace(req, sig=mac(client_key, req.signing_bytes()))


def request_sig_ok(directory: Directory, req: Request) -> bool:
    key = directory.client_keys.get(req.client)
    return key is not None and hmac.compare_digest(req.sig, mac(key, req.signing_bytes()))


class InterReplica(StateMachine):
    def __init__(self, node_id: int, enclave, directory: Directory, faults: Optional[Faults] = None):
        super().__init__()
        self.id = node_id
        self.enclave = enclave
        self.dir = directory
        self.faults = faults or Faults()
        self.seats = list(directory.seats)
        self.k = len(self.seats)
        self.f = directory.f

        self.view = 0
        self.vc_sent_for = 0  # highest view this replica has asked to move to
        self.vc_attempts = 0
        self.vreq: Dict[int, int] = {}
        self.accepted_seq: Dict[int, int] = {}
        self.vacc: Dict[int, int] = {s: 0 for s in self.seats if s != node_id}
        self.held: Dict[int, Dict[int, object]] = {s: {} for s in self.seats if s != node_id}
        self.future: List[object] = []

        self.preprepared: Dict[Tuple[int, int], Tuple[Block, object]] = {}
        self.accept_order: List[Tuple[int, int]] = []
        self.votes: Dict[Tuple[int, int], Dict[int, object]] = {}
        self.committed: Dict[Tuple[int, int], bytes] = {}
        self.exec_pos = 0
        self.executed: List[Tuple[Tuple[int, int], bytes]] = []
        self.executed_keys = set()
        self.exec_count = 0
        self.chain = GENESIS_STATE
        self.proof_pool: Dict[bytes, Dict[int, object]] = {}
        self.order_ui: Dict[Tuple[int, int], object] = {}
        self.intra_queue: List[Tuple[Tuple[int, int], Block]] = []

        self.o_buffer: List[object] = []
        self.checkpoint_votes: Dict[tuple, Dict[int, Checkpoint]] = {}
        self.own_checkpoints: Dict[int, Checkpoint] = {}
        self.stable_cert: Tuple[Checkpoint, ...] = ()
        self.stable_count = 0
        self.cert_history: List[Tuple[Checkpoint, ...]] = [()]

        self.pending: "OrderedDict[Tuple[int, int], Request]" = OrderedDict()
        self.vc_msgs: Dict[int, Dict[int, ViewChange]] = {}
        self.nv_sent = set()
        self.next_batch = 0
        self.armed = set()
        self.drops: List[Tuple[str, object]] = []
        self.installed: List[NewView] = []

    # -- entry points ---------------------------------------------------------

    def handle(self, src: int, msg, now: int = 0) -> list:
        self._begin(now)
        if isinstance(msg, Request):
            self._on_request(msg, direct=True)
        elif isinstance(msg, Forward):
            self._on_request(msg.request, direct=False)
        elif isinstance(msg, UI_MESSAGES):
            if msg.sender != src or src not in self.vacc:
                self._drop("Spoofed", msg)
            else:
                if isinstance(msg, Prepare):
                    self._offer(msg.embedded_preprepare())
                self._offer(msg)
        return self._end()

    def on_timer(self, name: str, token: int, now: int = 0) -> list:
        self._begin(now)
        if self.timer_live(name, token):
            self.armed.discard(name)
            if name == "request" and self.pending:
                self.start_view_change(self.view + 1)
            elif name == "view_change" and self.vc_sent_for > self.view:
                self.start_view_change(self.vc_sent_for + 1)
            elif name == "batch":
                self._propose(force=True)
        return self._end()

    def client_request(self, req: Request, now: int = 0) -> list:
        return self.handle(-1, req, now)

    # -- helpers --------------------------------------------------------------

    @property
    def primary(self) -> int:
        return self.dir.primary(self.view)

    @property
    def is_primary(self) -> bool:
        return self.primary == self.id

    @property
    def in_view_change(self) -> bool:
        return self.vc_sent_for > self.view

    def _drop(self, reason: str, msg):
        self.drops.append((reason, msg))
        self.note("drop", self.id, reason, type(msg).__name__)

    def _broadcast(self, msg):
        for s in self.seats:
            if s != self.id:
                self.send(s, msg)

    def _new_ui(self, msg):
        return self.enclave.create_ui(ui_bytes(msg))

    def _send_ui(self, msg):
        """Attach a fresh UI, log the message in O and send it to every leader."""
        msg = replace(msg, ui=self._new_ui(msg))
        self.o_buffer.append(msg)
        self._broadcast(msg)
        return msg

    def _valid_ui(self, msg) -> bool:
        ui = msg.ui
        return ui is not None and ui.issuer == msg.sender and self.dir.trust.check_ui(ui, ui_bytes(msg))

    # -- FIFO -----------------------------------------------------------------

    def _offer(self, msg):
        sender = msg.sender
        if sender not in self.vacc:
            return
        if not self._valid_ui(msg):
            self._drop(BAD_UI, msg)
            return
        cv = msg.ui.cv
        if cv <= self.vacc[sender] or cv in self.held[sender]:
            return
        self.held[sender][cv] = msg
        if cv > self.vacc[sender] + 1:
            self.note("hold", self.id, FIFO_GAP, sender, cv, self.vacc[sender])
        while self.vacc[sender] + 1 in self.held[sender]:
            nxt = self.held[sender].pop(self.vacc[sender] + 1)
            self.vacc[sender] += 1
            self._process(nxt)

    def _process(self, msg):
        if isinstance(msg, (PrePrepare, Prepare, Endorse)):
            if msg.view > self.view:
                self.future.append(msg)
                return
            if msg.view < self.view or self.in_view_change:
                self._drop(WRONG_VIEW, msg)
                return
        if isinstance(msg, PrePrepare):
            self._on_preprepare(msg)
        elif isinstance(msg, Prepare):
            self._on_prepare(msg)
        elif isinstance(msg, Checkpoint):
            self._on_checkpoint(msg)
        elif isinstance(msg, ViewChange):
            self.handle_view_change(msg)
        elif isinstance(msg, NewView):
            self.handle_new_view(msg)
        elif isinstance(msg, Endorse):
            self._on_endorse(msg)

    # -- client requests ------------------------------------------------------

    def _on_request(self, req: Request, direct: bool):
        if not request_sig_ok(self.dir, req):
            self._drop(BAD_CLIENT_SIG, req)
            return
        if req.seq <= self.vreq.get(req.client, 0) or req.seq <= self.accepted_seq.get(req.client, 0):
            self._drop(STALE_SEQ, req)
            return
        if req.key in self.pending:
            if not self.is_primary and direct:
                self.send(self.primary, Forward(req))
            return
        if any(c == req.client for c, _ in self.pending):
            # one request per client in flight
            self._drop("ClientBusy", req)
            return
        self.pending[req.key] = req
        if self.is_primary and not self.in_view_change:
            self._propose()
        else:
            if direct and not self.in_view_change:
                self.send(self.primary, Forward(req))
            self._arm_request_timer()

    def _arm_request_timer(self):
        if "request" not in self.armed and self.pending and not self.is_primary:
            self.armed.add("request")
            self.set_timer("request", self.dir.timing.request_timeout * 2 ** self.vc_attempts)

    def _disarm(self, name: str):
        self.armed.discard(name)
        self.cancel_timer(name)

    def _propose(self, force: bool = False):
        if not self.is_primary or self.in_view_change:
            return
        if self.faults.active("SilentPrimary", self.now) or self.faults.active("CrashSilent", self.now):
            return
        while self.pending:
            fresh = [r for r in self.pending.values()
                     if r.seq > self.accepted_seq.get(r.client, 0) and r.seq > self.vreq.get(r.client, 0)]
            if not fresh:
                break
            if len(fresh) < self.dir.batch_size and not force:
                self.set_timer("batch", self.dir.timing.batch_timeout)
                break
            batch = fresh[: self.dir.batch_size]
            self.next_batch += 1
            block = Block.make(batch, self.next_batch)
            if self.faults.active("EquivocateBlocks", self.now):
                self._equivocate(block)
                continue
            ui = self.enclave.create_ui(block.digest)
            pp = PrePrepare(self.view, self.id, block, ui)
            self.o_buffer.append(pp)
            self._broadcast(pp)
            self._accept(pp)
            force = False

    def _equivocate(self, block: Block):
        """Faulty primary: a different block to each half of the backups."""
        self.next_batch += 1
        twin = Block.make(block.requests, self.next_batch)
        backups = [s for s in self.seats if s != self.id]
        halves = (backups[: len(backups) // 2 or 1], backups[len(backups) // 2 or 1:])
        pps = []
        for b in (block, twin):
            ui = self.enclave.create_ui(b.digest)
            pps.append(PrePrepare(self.view, self.id, b, ui))
        for pp, half in zip(pps, halves):
            self.o_buffer.append(pp)
            for s in half:
                self.send(s, pp)
        for pp, half in zip(pps, halves):
            prep = Prepare(self.view, self.id, self.id, pp.block, pp.ui, self.enclave.create_ui(pp.block.digest))
            self.o_buffer.append(prep)
            for s in half:
                self.send(s, prep)
        for pp in pps:
            self.preprepared[(pp.view, pp.ui.cv)] = (pp.block, pp.ui)
        for r in block.requests:
            self.accepted_seq[r.client] = max(self.accepted_seq.get(r.client, 0), r.seq)
        self.note("equivocate", self.id, block.digest.hex()[:8], twin.digest.hex()[:8])

    # -- normal case ----------------------------------------------------------

    def _on_preprepare(self, pp: PrePrepare):
        if pp.sender != self.primary:
            self._drop(NOT_PRIMARY, pp)
            return
        if not pp.block.well_formed() or not all(request_sig_ok(self.dir, r) for r in pp.block.requests):
            self._drop(BAD_CLIENT_SIG, pp)
            return
        if any(r.seq <= max(self.accepted_seq.get(r.client, 0), self.vreq.get(r.client, 0))
               for r in pp.block.requests):
            self._drop(ALREADY_EXECUTED, pp)
            return
        self._accept(pp)

    def _accept(self, pp: PrePrepare):
        key = (pp.view, pp.ui.cv)
        self.preprepared[key] = (pp.block, pp.ui)
        self.order_ui[key] = pp.ui
        self.accept_order.append(key)
        for r in pp.block.requests:
            self.accepted_seq[r.client] = max(self.accepted_seq.get(r.client, 0), r.seq)
        self.note("accept", self.id, key, pp.block.digest.hex()[:8])
        ui = self._new_ui(pp)
        prep = Prepare(pp.view, self.id, pp.sender, pp.block, pp.ui, ui)
        self.o_buffer.append(prep)
        self._broadcast(prep)
        self._record_vote(key, self.id, pp.block.digest, ui)
        if not self.is_primary:
            self._arm_request_timer()
        self._try_commit(key)

    def _on_prepare(self, prep: Prepare):
        if prep.ui_origin.issuer != self.dir.primary(prep.view) or prep.origin != prep.ui_origin.issuer:
            self._drop(NOT_PRIMARY, prep)
            return
        if not self.dir.trust.check_ui(prep.ui_origin, prep.block.digest):
            self._drop(BAD_UI, prep)
            return
        key = (prep.view, prep.ui_origin.cv)
        self._record_vote(key, prep.sender, prep.block.digest, prep.ui)
        self._try_commit(key)

    def _record_vote(self, key, sender: int, block_digest: bytes, ui):
        self.votes.setdefault(key, {})[sender] = ui
        self.proof_pool.setdefault(block_digest, {})[sender] = ui

    def _try_commit(self, key):
        if key in self.committed or key not in self.preprepared:
            return
        block, _ = self.preprepared[key]
        if key not in self.order_ui:
            return
        if len(self.votes.get(key, {})) >= self.f + 1:
            self.committed[key] = block.digest
            self.note("inter_commit", self.id, key, block.digest.hex()[:8])
            self._execute_ready()

    def _execute_ready(self):
        while self.exec_pos < len(self.accept_order) and self.accept_order[self.exec_pos] in self.committed:
            key = self.accept_order[self.exec_pos]
            self.exec_pos += 1
            block, _ = self.preprepared[key]
            self._execute(key, block)

    def _execute(self, key, block: Block):
        if key in self.executed_keys:
            return
        if all(r.seq <= self.vreq.get(r.client, 0) for r in block.requests):
            self.note("skip_executed", self.id, key)
            return
        for r in block.requests:
            self.vreq[r.client] = max(self.vreq.get(r.client, 0), r.seq)
            self.accepted_seq[r.client] = max(self.accepted_seq.get(r.client, 0), r.seq)
            self.pending.pop(r.key, None)
        self.executed_keys.add(key)
        self.executed.append((key, block.digest))
        self.exec_count += 1
        self.chain = digest(self.chain + block.digest)
        self.note("execute", self.id, key, block.digest.hex()[:8])
        self.intra_queue.append((key, block))
        self._flush_intra()
        self._disarm("request")
        if self.pending:
            self._arm_request_timer()
        else:
            self.vc_attempts = 0
        if self.exec_count % self.dir.checkpoint_interval == 0:
            self._send_checkpoint()

    def proofs_for(self, key, block: Block) -> Optional[Proofs]:
        pool = self.proof_pool.get(block.digest, {})
        if len(pool) < self.f + 1 or key not in self.order_ui:
            return None
        chosen = tuple(pool[s] for s in sorted(pool)[: self.f + 1])
        return Proofs(key[0], self.order_ui[key], chosen)

    def _flush_intra(self):
        while self.intra_queue:
            key, block = self.intra_queue[0]
            proofs = self.proofs_for(key, block)
            if proofs is None:
                return
            self.intra_queue.pop(0)
            self._out.append(StartIntra(block, proofs))

    # -- checkpoints ----------------------------------------------------------

    def _send_checkpoint(self):
        cp = Checkpoint(self.id, self.exec_count, self.chain, tuple(sorted(self.vreq.items())))
        cp = self._send_ui(cp)
        # own checkpoint anchors O; it is carried in C_latest, not in O
        self.o_buffer.remove(cp)
        self.own_checkpoints[cp.count] = cp
        self._on_checkpoint(cp)

    def _on_checkpoint(self, cp: Checkpoint):
        slot = (cp.count, cp.state_digest, cp.vreq)
        self.checkpoint_votes.setdefault(slot, {})[cp.sender] = cp
        own = self.own_checkpoints.get(cp.count)
        votes = self.checkpoint_votes[slot]
        if own is None or own.state_digest != cp.state_digest or cp.count <= self.stable_count:
            return
        if len(votes) >= self.f + 1:
            others = [votes[s] for s in sorted(votes) if s != self.id][: self.f]
            self.stable_cert = tuple(sorted([own] + others, key=lambda c: c.sender))
            self.stable_count = cp.count
            self.cert_history.append(self.stable_cert)
            self.o_buffer = [m for m in self.o_buffer if m.ui.cv > own.ui.cv]
            self.note("stable_checkpoint", self.id, cp.count)

    # -- view change ----------------------------------------------------------

    def start_view_change(self, new_view: int):
        if new_view <= max(self.view, self.vc_sent_for):
            return
        if self.faults.active("CrashSilent", self.now):
            return
        self.vc_sent_for = new_view
        self.vc_attempts += 1
        self._disarm("request")
        c_latest = self.stable_cert
        if self.faults.active("StaleCheckpointInViewChange", self.now):
            c_latest = self.cert_history[0]
        vc = self._send_ui(ViewChange(self.id, new_view, c_latest, tuple(self.o_buffer)))
        self.note("view_change", self.id, new_view)
        self.vc_msgs.setdefault(new_view, {})[self.id] = vc
        self.set_timer("view_change", self.dir.timing.request_timeout * 2 ** self.vc_attempts)
        self._maybe_new_view(new_view)

    def validate_view_change(self, vc: ViewChange) -> Optional[str]:
        """None when the message passes all three checks, else the failing reason."""
        if not self._valid_ui(vc):
            return BAD_UI
        baseline = 0
        if vc.c_latest:
            cert = vc.c_latest
            slots = {(c.count, c.state_digest, c.vreq) for c in cert}
            senders = {c.sender for c in cert}
            if (len(slots) != 1 or len(senders) != len(cert) or len(cert) < self.f + 1
                    or not all(self._valid_ui(c) for c in cert)):
                return BAD_CHECKPOINT_CERT
            own = [c for c in cert if c.sender == vc.sender]
            if not own:
                return BAD_CHECKPOINT_CERT
            baseline = own[0].ui.cv
        o = sorted(vc.o, key=lambda m: m.ui.cv if m.ui else -1)
        for m in o:
            if m.sender != vc.sender or not self._valid_ui(m):
                return BAD_UI
            if isinstance(m, Prepare) and not self._valid_order_ui(m.view, m.ui_origin, m.block):
                return BAD_UI
            if isinstance(m, Endorse) and not self._valid_order_ui(m.item.view, m.item.order_ui, m.item.block):
                return BAD_UI
        cvs = [m.ui.cv for m in o]
        if cvs and cvs[0] != baseline + 1:
            # O must start right after the sender's checkpoint in C_latest
            return BAD_CHECKPOINT_CERT
        if cvs != list(range(baseline + 1, baseline + 1 + len(cvs))):
            return HOLE_IN_O
        highest = cvs[-1] if cvs else baseline
        if vc.ui.cv != highest + 1:
            return COUNTER_MISMATCH
        return None

    def _valid_order_ui(self, view: int, ui, block: Block) -> bool:
        return ui.issuer == self.dir.primary(view) and self.dir.trust.check_ui(ui, block.digest)

    def handle_view_change(self, vc: ViewChange):
        reason = self.validate_view_change(vc)
        if reason is not None:
            self._drop(reason, vc)
            return
        if vc.new_view <= self.view:
            return
        self.vc_msgs.setdefault(vc.new_view, {})[vc.sender] = vc
        for w in sorted(self.vc_msgs):
            if w > max(self.view, self.vc_sent_for) and len(self.vc_msgs[w]) >= self.f + 1:
                self.start_view_change(w)
        self._maybe_new_view(vc.new_view)

    def compute_replay_set(self, vcc) -> Tuple[ReplayItem, ...]:
        newest = max((vc.c_latest for vc in vcc), key=lambda c: c[0].count if c else 0)
        covered = dict(newest[0].vreq) if newest else {}
        items: Dict[Tuple[int, int], ReplayItem] = {}
        for vc in vcc:
            for m in vc.o:
                if isinstance(m, PrePrepare):
                    if m.sender != self.dir.primary(m.view):
                        continue
                    item = ReplayItem(m.view, m.ui, m.block)
                elif isinstance(m, Prepare):
                    item = ReplayItem(m.view, m.ui_origin, m.block)
                elif isinstance(m, Endorse):
                    item = m.item
                else:
                    continue
                if all(r.seq <= covered.get(r.client, 0) for r in item.block.requests):
                    continue
                items.setdefault(item.order_key, item)
        return tuple(items[key] for key in sorted(items))

    def _maybe_new_view(self, w: int):
        if self.dir.primary(w) != self.id or w in self.nv_sent or w <= self.view:
            return
        if self.faults.active("SilentPrimary", self.now) or self.faults.active("CrashSilent", self.now):
            return
        vcs = self.vc_msgs.get(w, {})
        if len(vcs) < self.f + 1:
            return
        if self.id not in vcs:
            self.start_view_change(w)
            vcs = self.vc_msgs.get(w, {})
            if self.id not in vcs:
                return
        others = [vcs[s] for s in sorted(vcs) if s != self.id][: self.f]
        vcc = tuple([vcs[self.id]] + others)
        s = self.compute_replay_set(vcc)
        if self.faults.active("OmitFromReplaySet", self.now) and s:
            s = s[1:]
        self.nv_sent.add(w)
        nv = self._send_ui(NewView(self.id, w, vcc, s))
        self.note("new_view_sent", self.id, w, len(s))
        self._install(nv)

    def handle_new_view(self, nv: NewView):
        if nv.new_view <= self.view:
            return
        if nv.sender != self.dir.primary(nv.new_view):
            self._drop(NOT_PRIMARY, nv)
            return
        senders = {vc.sender for vc in nv.vcc}
        if (len(senders) != len(nv.vcc) or len(nv.vcc) < self.f + 1 or nv.sender not in senders
                or any(vc.new_view != nv.new_view or self.validate_view_change(vc) is not None for vc in nv.vcc)):
            self._drop(BAD_VCC, nv)
            self.start_view_change(nv.new_view + 1)
            return
        if self.compute_replay_set(nv.vcc) != nv.s:
            self._drop(REPLAY_SET_MISMATCH, nv)
            self.start_view_change(nv.new_view + 1)
            return
        self._install(nv)

    def _install(self, nv: NewView):
        self.view = nv.new_view
        self.installed.append(nv)
        self.vc_sent_for = max(self.vc_sent_for, self.view)
        self._disarm("view_change")
        self.note("new_view", self.id, self.view, len(nv.s))
        for item in nv.s:
            key = item.order_key
            self.order_ui.setdefault(key, item.order_ui)
            self.preprepared.setdefault(key, (item.block, item.order_ui))
            for r in item.block.requests:
                self.accepted_seq[r.client] = max(self.accepted_seq.get(r.client, 0), r.seq)
        # replayed blocks are already ordered; drop any not-yet-executed
        # acceptances from the old view and execute S in key order
        self.accept_order = [k for k in self.accept_order if k in self.executed_keys]
        self.exec_pos = len(self.accept_order)
        for item in nv.s:
            if item.order_key not in self.executed_keys:
                self.accept_order.append(item.order_key)
                self.exec_pos += 1
                self._execute(item.order_key, item.block)
        self.accepted_seq = dict(self.vreq)
        for item in nv.s:
            e = self._send_ui(Endorse(self.view, self.id, item, None))
            self._record_vote(item.order_key, self.id, item.block.digest, e.ui)
        self._flush_intra()
        future, self.future = self.future, []
        for m in future:
            self._process(m)
        for key in list(self.pending):
            c, seq = key
            if seq <= self.vreq.get(c, 0):
                self.pending.pop(key)
        if self.is_primary:
            self._propose()
        elif self.pending:
            for req in self.pending.values():
                self.send(self.primary, Forward(req))
            self._disarm("request")
            self._arm_request_timer()

    def _on_endorse(self, e: Endorse):
        if not self._valid_order_ui(e.item.view, e.item.order_ui, e.item.block):
            self._drop(BAD_UI, e)
            return
        self.proof_pool.setdefault(e.item.block.digest, {})[e.sender] = e.ui
        self._flush_intra()
