import random
from collections import deque

from trbft.inter import InterReplica, sign_request
from trbft.intra import GroupMember
from trbft.messages import Request
from trbft.runtime import Faults, Send, StartIntra
from trbft.sim.explore import make_fixture


class InterCluster:
    """k leaders wired through an in-order queue; ``hold`` lets a test stash messages."""

    def __init__(self, k=3, faults=None, checkpoint_interval=10, seed=0, n=3):
        self.fx = make_fixture(k, n, seed)
        self.dir = self.fx.directory
        self.dir.checkpoint_interval = checkpoint_interval
        faults = faults or {}
        self.reps = {s: InterReplica(s, self.fx.enclaves[s], self.dir, faults.get(s, Faults()))
                     for s in self.dir.seats}
        self.queue = deque()
        self.starts = {s: [] for s in self.dir.seats}
        self.notes = []
        self.sent = []
        self.seq = 0
        self.drop = lambda src, dst, msg: False

    def request(self, op=b"op", seq=None, client=None):
        client = self.fx.client_id if client is None else client
        self.seq = seq if seq is not None else self.seq + 1
        return sign_request(self.fx.client_key, Request(op, self.seq, client))

    def feed(self, node, effects):
        for e in effects:
            if isinstance(e, Send):
                self.sent.append((node, e.dst, e.msg))
                if not self.drop(node, e.dst, e.msg):
                    self.queue.append((node, e.dst, e.msg))
            elif isinstance(e, StartIntra):
                self.starts[node].append(e)
            else:
                self.notes.append((node, e))

    def submit(self, req, to=None):
        to = self.dir.primary(self.reps[self.dir.seats[0]].view) if to is None else to
        self.feed(to, self.reps[to].handle(-1, req, 0))

    def pump(self, limit=100_000):
        steps = 0
        while self.queue and steps < limit:
            src, dst, msg = self.queue.popleft()
            if dst in self.reps:
                self.feed(dst, self.reps[dst].handle(src, msg, 0))
            steps += 1
        return steps

    def fire(self, node, name):
        rep = self.reps[node]
        self.feed(node, rep.on_timer(name, rep._tokens.get(name, 0), 0))


def certified_blocks(n=4, count=1, seed=0):
    """Fixture plus ``count`` (block, proofs) pairs ordered by a fault-free inter round."""
    c = InterCluster(3, seed=seed, n=n)
    for i in range(count):
        c.submit(c.request(op=f"op-{i + 1}".encode()))
        c.pump()
    return c.fx, [(s.block, s.proofs) for s in c.starts[c.dir.seats[0]]]


class GroupNet:
    """Members of group 0 with an in-order queue; client-bound messages land in ``outbox``."""

    def __init__(self, n=4, count=1, faults=None, seed=0, no_tee=()):
        self.fx, self.blocks = certified_blocks(n, count, seed)
        d = self.fx.directory
        for m in no_tee:
            d.has_tee[m] = False
        faults = faults or {}
        self.members = {m: GroupMember(m, 0, self.fx.enclaves[m], self.fx.keys[m], d,
                                       faults.get(m, Faults()), random.Random(m), timers=False)
                        for m in d.groups[0]}
        self.ids = sorted(self.members)
        self.leader = self.ids[0]
        self.queue = deque()
        self.outbox = []
        self.notes = []
        self.drop = lambda src, dst, msg: False

    def feed(self, node, effects):
        for e in effects:
            if isinstance(e, Send):
                if self.drop(node, e.dst, e.msg):
                    continue
                if e.dst in self.members:
                    self.queue.append((node, e.dst, e.msg))
                else:
                    self.outbox.append((node, e.dst, e.msg))
            elif not isinstance(e, StartIntra) and hasattr(e, "kind"):
                self.notes.append(e)

    def start(self, i=0, node=None):
        node = self.leader if node is None else node
        block, proofs = self.blocks[i]
        self.feed(node, self.members[node].start(block, proofs, 0))

    def deliver(self, src, dst, msg):
        self.feed(dst, self.members[dst].handle(src, msg, 0))

    def pump(self, limit=100_000):
        steps = 0
        while self.queue and steps < limit:
            self.deliver(*self.queue.popleft())
            steps += 1
        return steps

    def call(self, node, fn, *args):
        m = self.members[node]
        m._begin(0)
        getattr(m, fn)(*args)
        self.feed(node, m._end())

    def noted(self, kind):
        return [e.data for e in self.notes if e.kind == kind]
