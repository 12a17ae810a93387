"""Deterministic discrete-event world: nodes, network, client driver."""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Dict, List, Optional

from ..client import ClientState
from ..crypto import SigningKey, derive_secret
from ..grouping import Node, init_hash_ring, initial_grouping
from ..inter import InterReplica
from ..intra import GroupMember
from ..messages import (
    Checkpoint,
    Endorse,
    Forward,
    GroupReply,
    NewView,
    PrePrepare,
    Prepare,
    Request,
    ViewChange,
    phase_of,
)
from ..runtime import Directory, Faults, Note, Send, SetTimer, StartIntra
from ..usig import Enclave, TrustRegistry
from .config import ConfigInvalid, SimConfig
from .faults import FaultScript, ScriptError, check_bounds
from .metrics import Metrics
from .safety import verdict
from .trace import TraceWriter

INTER_TYPES = (Request, Forward, PrePrepare, Prepare, Checkpoint, ViewChange, NewView, Endorse)

MSG, TIMER = 0, 1


def build_groups(cfg: SimConfig) -> Dict[int, List[int]]:
    if cfg.grouping == "even":
        groups, start = {}, 0
        for g, size in enumerate(cfg.sizes()):
            groups[g] = list(range(start, start + size))
            start += size
        return groups
    ring = init_hash_ring(cfg.k, cfg.grouping_params.v_per_group, salt=str(cfg.seed))
    nodes = [Node(i, f"10.{i // 65536}.{i // 256 % 256}.{i % 256}") for i in range(cfg.n_total)]
    return initial_grouping(ring, nodes, cfg.seed)


class SimNode:
    def __init__(self, node_id: int, member: GroupMember, inter: Optional[InterReplica], faults: Faults):
        self.id = node_id
        self.member = member
        self.inter = inter
        self.faults = faults

    def machine(self, layer: str):
        return self.inter if layer == "inter" else self.member

    def deliver(self, src: int, msg, now: int):
        if isinstance(msg, INTER_TYPES):
            if self.inter is None:
                return "inter", []
            return "inter", self.inter.handle(src, msg, now)
        return "intra", self.member.handle(src, msg, now)


@dataclass
class RunResult:
    metrics: Metrics
    trace: bytes
    world: "World"


class World:
    def __init__(self, cfg: SimConfig):
        cfg.validate()
        self.cfg = cfg
        seed = cfg.seed
        self.groups = build_groups(cfg)
        self.non_tee = set(cfg.non_tee)
        self.seats = []
        for g in sorted(self.groups):
            tee = [m for m in sorted(self.groups[g]) if m not in self.non_tee]
            if not tee:
                raise ConfigInvalid(f"group {g} has no TEE-equipped member to lead it")
            self.seats.append(tee[0])
        replicas = sorted(m for ms in self.groups.values() for m in ms)
        self.client_id = cfg.n_total
        client_key = derive_secret("client", seed, self.client_id)

        usig_secrets = {i: derive_secret("usig", seed, i) for i in replicas}
        attest_secrets = {i: derive_secret("attest", seed, i) for i in replicas}
        sign_keys = {i: SigningKey(i, derive_secret("sig", seed, i)) for i in replicas}
        self.directory = Directory(
            seats=list(self.seats),
            groups={g: sorted(ms) for g, ms in self.groups.items()},
            leaders={g: self.seats[g] for g in self.groups},
            trust=TrustRegistry(usig_secrets, attest_secrets),
            sig_keys={i: k.verifying_key() for i, k in sign_keys.items()},
            client_keys={self.client_id: client_key},
            has_tee={i: i not in self.non_tee for i in replicas},
            timing=cfg.timing,
            batch_size=cfg.batch_size,
            checkpoint_interval=cfg.checkpoint_interval,
            strict_client_quorum=cfg.strict_client_quorum,
        )
        try:
            faults = FaultScript.parse(cfg.faults).resolve(self.seats, self.directory.groups)
        except ScriptError:
            raise
        if not cfg.allow_out_of_bounds:
            check_bounds(faults, self.seats, self.directory.groups)
        self.faults = faults

        self.nodes: Dict[int, SimNode] = {}
        for g, members in self.directory.groups.items():
            for i in members:
                fl = faults.get(i, Faults())
                enclave = Enclave(i, usig_secrets[i], attest_secrets[i], has_tee=i not in self.non_tee)
                member = GroupMember(i, g, enclave, sign_keys[i], self.directory, fl,
                                     rng=random.Random(f"node|{seed}|{i}"))
                inter = InterReplica(i, enclave, self.directory, fl) if i in self.seats else None
                self.nodes[i] = SimNode(i, member, inter, fl)

        self.client = ClientState(self.client_id, client_key,
                                  {g: self.directory.group_keys(g) for g in self.groups},
                                  len(self.seats), cfg.strict_client_quorum)
        self.client_view = 0
        self.client_timer = 0
        self.submitted_at = 0

        self.net_rng = random.Random(f"net|{seed}")
        self.queue: list = []
        self.seq = 0
        self.now = 0
        self.medium_free = 0
        self.busy = 0  # non-heartbeat messages in flight
        self.metrics = Metrics(requests=cfg.requests)
        self.trace = TraceWriter(cfg.to_json())

    # -- plumbing -------------------------------------------------------------

    def correct_nodes(self) -> set:
        return {i for i, node in self.nodes.items() if not node.faults.byzantine}

    def _push(self, tick: int, kind: int, data):
        self.seq += 1
        heapq.heappush(self.queue, (tick, self.seq, kind, data))

    def _delay(self) -> int:
        net = self.cfg.network
        return self.net_rng.randint(net.delay_min, net.delay_max)

    def transmit(self, src: int, dst: int, msg):
        net = self.cfg.network
        phase = phase_of(msg)
        self.metrics.phase_counts[phase] += 1
        start = self.now
        if net.tx_time:
            start = max(start, self.medium_free)
            self.medium_free = start + net.tx_time
            start += net.tx_time
        if start < net.gst:
            at = start + self.net_rng.randint(1, net.pre_gst_delay_max)
            if net.drop_rate and self.net_rng.random() < net.drop_rate:
                # lost copy; the link layer retransmits once the network stabilizes
                at = net.gst + self._delay()
                self.trace.add(self.now, "drop", src, dst, phase)
        else:
            at = start + self._delay()
        heartbeat = phase == "heartbeat"
        if not heartbeat:
            self.busy += 1
        self.trace.add(self.now, "send", src, dst, (at, msg))
        self._push(at, MSG, (src, dst, msg, heartbeat))

    def apply(self, node_id: int, layer: str, effects):
        for eff in effects:
            if isinstance(eff, Send):
                self.transmit(node_id, eff.dst, eff.msg)
            elif isinstance(eff, SetTimer):
                self._push(self.now + eff.delay, TIMER, (node_id, layer, eff.name, eff.token))
            elif isinstance(eff, Note):
                self.metrics.notes[eff.kind] += 1
                self.trace.add(self.now, "note", node_id, -1, (eff.kind, eff.data))
            elif isinstance(eff, StartIntra):
                node = self.nodes[node_id]
                self.apply(node_id, "intra", node.member.start(eff.block, eff.proofs, self.now))

    def crashed(self, node_id: int) -> bool:
        node = self.nodes.get(node_id)
        return node is not None and node.faults.active("CrashSilent", self.now)

    # -- client ---------------------------------------------------------------

    def _client_submit(self):
        req = self.client.submit(f"op-{self.client.seq + 1}".encode())
        self.submitted_at = self.now
        self.trace.add(self.now, "client_submit", self.client_id, -1, req.seq)
        self.transmit(self.client_id, self.directory.primary(self.client_view), req)
        self._arm_client_timer()

    def _arm_client_timer(self):
        self.client_timer += 1
        self._push(self.now + self.cfg.timing.client_timeout, TIMER, (self.client_id, "client", "retry", self.client_timer))

    def _client_timeout(self, token: int):
        if token != self.client_timer or self.client.pending is None:
            return
        self.trace.add(self.now, "client_retry", self.client_id, -1, self.client.pending.seq)
        for s in self.seats:
            self.transmit(self.client_id, s, self.client.pending)
        self._arm_client_timer()

    def _client_receive(self, msg):
        if not isinstance(msg, GroupReply):
            return
        self.client_view = max(self.client_view, msg.view)
        done = self.client.collect_reply(msg)
        if done is None:
            return
        self.metrics.completed += 1
        self.metrics.latencies.append(self.now - self.submitted_at)
        self.metrics.reply_groups.append(done.groups)
        self.trace.add(self.now, "client_done", self.client_id, -1, (done.request.seq, done.block_digest, done.groups))
        self.client_timer += 1
        if self.client.seq < self.cfg.requests:
            self._client_submit()

    # -- main loop ------------------------------------------------------------

    def boot(self):
        for i in sorted(self.nodes):
            self.apply(i, "intra", self.nodes[i].member.boot(0))
        if self.cfg.requests:
            self._client_submit()

    def finished(self) -> bool:
        return self.metrics.completed >= self.cfg.requests and self.busy == 0 and self.now >= self.cfg.min_ticks

    def step(self) -> bool:
        if not self.queue:
            return False
        tick, _, kind, data = heapq.heappop(self.queue)
        self.now = tick
        if kind == MSG:
            src, dst, msg, heartbeat = data
            if not heartbeat:
                self.busy -= 1
            if dst == self.client_id:
                self._client_receive(msg)
            elif dst in self.nodes and not self.crashed(dst):
                layer, effects = self.nodes[dst].deliver(src, msg, tick)
                self._emit(dst, layer, effects)
        else:
            node_id, layer, name, token = data
            if layer == "client":
                self._client_timeout(token)
            elif not self.crashed(node_id):
                effects = self.nodes[node_id].machine(layer).on_timer(name, token, tick)
                self._emit(node_id, layer, effects)
        return True

    def _emit(self, node_id: int, layer: str, effects):
        if self.crashed(node_id):
            return
        self.apply(node_id, layer, effects)

    def run(self) -> RunResult:
        self.boot()
        while not self.finished() and self.now <= self.cfg.max_ticks:
            if not self.step():
                break
        m = self.metrics
        m.end_tick = self.now
        m.liveness = m.completed >= self.cfg.requests
        m.safety, m.violations = verdict(self, strict=self.cfg.strict_safety)
        self.trace.add(self.now, "end", -1, -1, (m.completed, m.safety, m.liveness))
        return RunResult(m, self.trace.getvalue(), self)


def run(cfg: SimConfig) -> RunResult:
    return World(cfg).run()
