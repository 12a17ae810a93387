from math import factorial

from trbft.runtime import Send
from trbft.sim.explore import (
    explore,
    inter_agreement,
    inter_scenario,
    intra_agreement,
    intra_scenario,
)


class Recorder:
    def __init__(self, echo_to=None):
        self.seen = []
        self.echo_to = echo_to

    def handle(self, src, msg, now):
        self.seen.append(msg)
        if self.echo_to is not None and not msg.startswith("re-"):
            return [Send(self.echo_to, "re-" + msg)]
        return []


def test_order_sensitive_toy_is_divergent():
    machines = {1: Recorder()}
    pending = [(0, 1, m) for m in "abc"]
    res = explore(machines, pending, lambda s: tuple(s[1].seen))
    assert res.paths == factorial(3)
    assert len(res.outcomes) == 6 and res.divergent
    # the caller's machines are untouched
    assert machines[1].seen == []


def test_caused_messages_are_interleaved_too():
    machines = {1: Recorder(echo_to=2), 2: Recorder()}
    pending = [(0, 1, "a"), (0, 2, "b")]
    res = explore(machines, pending, lambda s: frozenset(s[2].seen))
    # orders of {a, b, re-a} with a before re-a
    assert res.paths == 3
    assert not res.divergent


def test_inter_fault_free_is_frozen():
    res = explore(*inter_scenario(3)[:3])
    assert (res.paths, res.states, len(res.outcomes)) == (12096, 1017, 1)
    assert inter_agreement(res)


def test_intra_one_entry():
    nodes, pending, outcome, fx, block = intra_scenario(4)
    res = explore(nodes, pending, outcome, fx.shared)
    assert res.paths == 8100 and not res.divergent
    (out,) = res.outcomes
    assert all(log == (block.digest,) for node, log in out if node != "replied")
    assert intra_agreement(res)
