from dataclasses import replace

import pytest

from trbft import inter as I
from trbft.intra import check_proofs
from trbft.messages import Checkpoint, Forward, NewView, PrePrepare, ViewChange
from trbft.runtime import Faults, inter_f, primary_of_view
from conftest import InterCluster


def drops(rep, reason):
    return [m for r, m in rep.drops if r == reason]


@pytest.mark.parametrize("v,k,want", [(0, 4, 0), (5, 4, 1), (7, 7, 0)])
def test_primary_rotation(v, k, want):
    assert primary_of_view(v, k) == want


def test_tolerance_arithmetic():
    assert [inter_f(k) for k in (3, 4, 5, 6, 7)] == [1, 1, 2, 2, 3]


def test_primary_sends_preprepare_and_prepare_to_every_backup():
    c = InterCluster(3)
    p = c.dir.seats[0]
    c.submit(c.request())
    kinds = sorted((type(m).__name__, dst) for src, dst, m in c.sent)
    backups = c.dir.seats[1:]
    assert kinds == sorted([("PrePrepare", b) for b in backups] + [("Prepare", b) for b in backups])
    pp = next(m for _, _, m in c.sent if isinstance(m, PrePrepare))
    assert pp.ui.cv == 1 and pp.sender == p


def test_fault_free_round_commits_everywhere_in_two_steps():
    c = InterCluster(3)
    c.submit(c.request())
    c.pump()
    digests = {tuple(d for _, d in r.executed) for r in c.reps.values()}
    assert len(digests) == 1 and len(next(iter(digests))) == 1
    for s, rep in c.reps.items():
        assert len(c.starts[s]) == 1
        start = c.starts[s][0]
        assert check_proofs(c.dir, start.block, start.proofs)
        assert len(start.proofs.uis) == inter_f(3) + 1
    # Vacc advanced for every peer
    backup = c.reps[c.dir.seats[1]]
    assert backup.vacc[c.dir.seats[0]] == 2


def test_replayed_and_badly_signed_requests_are_dropped():
    c = InterCluster(3)
    p = c.reps[c.dir.seats[0]]
    req = c.request()
    c.submit(req)
    c.pump()
    c.sent.clear()
    c.submit(req)
    assert drops(p, I.STALE_SEQ) and not c.sent
    c.submit(replace(c.request(), sig=b"\x00" * 32))
    assert drops(p, I.BAD_CLIENT_SIG) and not c.sent


def test_one_request_per_client_in_flight():
    c = InterCluster(3)
    b = c.dir.seats[1]
    c.drop = lambda src, dst, msg: True
    c.submit(c.request(), to=b)
    c.submit(c.request(), to=b)
    assert drops(c.reps[b], "ClientBusy")


def test_backup_forwards_to_primary():
    c = InterCluster(3)
    b = c.dir.seats[1]
    c.submit(c.request(), to=b)
    assert [(dst, type(m)) for _, dst, m in c.sent] == [(c.dir.seats[0], Forward)]
    c.pump()
    assert all(len(r.executed) == 1 for r in c.reps.values())


def test_fifo_gap_holds_later_counters():
    c = InterCluster(3)
    p, b = c.dir.seats[0], c.dir.seats[1]
    c.drop = lambda src, dst, msg: True
    c.submit(c.request())
    to_b = [m for src, dst, m in c.sent if dst == b]
    pp, prep = to_b
    rep = c.reps[b]
    rep.handle(p, prep, 0)  # counter 2 first; its embedded PRE-PREPARE is counter 1
    assert rep.vacc[p] == 2
    # a fresh replica that only sees counter 2 without the embedded message waits
    c2 = InterCluster(3)
    c2.drop = lambda src, dst, msg: True
    c2.submit(c2.request())
    pp2 = [m for src, dst, m in c2.sent if dst == b and isinstance(m, PrePrepare)][0]
    later = replace(pp2, ui=c2.fx.enclaves[p].create_ui(pp2.block.digest))
    rep2 = c2.reps[b]
    out = rep2.handle(p, later, 0)
    assert rep2.vacc[p] == 0 and later.ui.cv in rep2.held[p]
    assert any(getattr(e, "kind", "") == "hold" for e in out)
    rep2.handle(p, pp2, 0)
    assert rep2.vacc[p] == 1


def test_preprepare_checks():
    c = InterCluster(3)
    b1, b2 = c.dir.seats[1], c.dir.seats[2]
    block = I.Block.make((c.request(),), 1)
    ui = c.fx.enclaves[b1].create_ui(block.digest)
    c.reps[b2].handle(b1, PrePrepare(0, b1, block, ui), 0)
    assert drops(c.reps[b2], I.NOT_PRIMARY)
    p = c.dir.seats[0]
    wrong = PrePrepare(3, p, block, c.fx.enclaves[p].create_ui(block.digest))
    c.reps[b2].handle(p, wrong, 0)
    assert not c.reps[b2].accept_order  # future view is stashed, not accepted
    forged = PrePrepare(0, p, block, replace(ui, issuer=p))
    c.reps[b1].handle(p, forged, 0)
    assert drops(c.reps[b1], I.BAD_UI)


def test_duplicate_prepare_counts_once():
    c = InterCluster(5)
    c.drop = lambda src, dst, msg: True
    c.submit(c.request())
    p, b = c.dir.seats[0], c.dir.seats[1]
    pp, prep = [m for src, dst, m in c.sent if dst == b]
    rep = c.reps[b]
    rep.handle(p, pp, 0)
    rep.handle(p, prep, 0)
    rep.handle(p, prep, 0)
    key = (0, pp.ui.cv)
    assert set(rep.votes[key]) == {p, b}
    assert key not in rep.committed  # f+1 = 3 distinct signers needed at k=5


def test_checkpoint_stabilizes_and_truncates_o():
    c = InterCluster(3, checkpoint_interval=2)
    for _ in range(2):
        c.submit(c.request())
        c.pump()
    for rep in c.reps.values():
        assert rep.stable_count == 2
        assert len(rep.stable_cert) == inter_f(3) + 1
        assert all(m.ui.cv > rep.own_checkpoints[2].ui.cv for m in rep.o_buffer)
    # a third block lands in O after the watermark
    c.submit(c.request())
    c.pump()
    assert all(rep.o_buffer for rep in c.reps.values())


def test_mismatched_checkpoints_do_not_stabilize():
    c = InterCluster(3, checkpoint_interval=1)
    rep = c.reps[c.dir.seats[0]]
    ui = rep.enclave.create_ui(b"cp")
    rep.own_checkpoints[5] = Checkpoint(rep.id, 5, b"a" * 32, (), ui)
    rep._on_checkpoint(rep.own_checkpoints[5])
    for s in c.dir.seats[1:]:
        rep._on_checkpoint(Checkpoint(s, 5, b"b" * 32, ()))
    assert rep.stable_count == 0
    # positive control: one matching peer is enough at k=3
    rep._on_checkpoint(Checkpoint(c.dir.seats[1], 5, b"a" * 32, ()))
    assert rep.stable_count == 5


def test_view_change_is_idempotent_and_counter_is_next():
    c = InterCluster(3)
    c.submit(c.request())
    c.pump()
    b = c.reps[c.dir.seats[1]]
    before = b.enclave.counter
    c.feed(b.id, [])
    b._begin(0)
    b.start_view_change(1)
    b.start_view_change(1)
    vcs = [e.msg for e in b._end() if hasattr(e, "msg") and isinstance(e.msg, ViewChange)]
    assert len(vcs) == 2  # one VIEW-CHANGE broadcast to two peers
    vc = vcs[0]
    assert vc.ui.cv == before + 1
    assert b.validate_view_change(vc) is None


def make_vc(c, node):
    rep = c.reps[node]
    rep._begin(0)
    rep.start_view_change(rep.view + 1)
    out = rep._end()
    return next(e.msg for e in out if hasattr(e, "msg") and isinstance(e.msg, ViewChange))


def test_view_change_validation_reasons():
    c = InterCluster(3)
    for _ in range(3):
        c.submit(c.request())
        c.pump()
    b, judge = c.dir.seats[1], c.reps[c.dir.seats[2]]
    vc = make_vc(c, b)
    assert judge.validate_view_change(vc) is None
    assert len(vc.o) == 3

    def resign(msg):
        return replace(msg, ui=c.fx.enclaves[b].create_ui(I.ui_bytes(replace(msg, ui=None))))

    holey = vc.o[:1] + vc.o[2:]
    assert judge.validate_view_change(replace(vc, o=holey)) == I.BAD_UI
    # re-signed so only the hole is wrong
    assert judge.validate_view_change(resign(replace(vc, o=holey))) == I.HOLE_IN_O
    # the enclave has moved on since O was taken, so the new UI skips counters
    assert judge.validate_view_change(resign(vc)) == I.COUNTER_MISMATCH
    assert judge.validate_view_change(replace(vc, ui=replace(vc.ui, cert=bytes(32)))) == I.BAD_UI


def test_checkpoint_certificate_validation():
    c = InterCluster(3, checkpoint_interval=2)
    for _ in range(3):
        c.submit(c.request())
        c.pump()
    b, judge = c.dir.seats[1], c.reps[c.dir.seats[2]]
    vc = make_vc(c, b)
    assert vc.c_latest and judge.validate_view_change(vc) is None

    def resign(msg):
        return replace(msg, ui=c.fx.enclaves[b].create_ui(I.ui_bytes(replace(msg, ui=None))))

    assert judge.validate_view_change(resign(replace(vc, c_latest=()))) == I.BAD_CHECKPOINT_CERT
    short = resign(replace(vc, c_latest=vc.c_latest[:1]))
    assert judge.validate_view_change(short) == I.BAD_CHECKPOINT_CERT


def test_stale_checkpoint_is_caught():
    faults = {3: Faults()}
    faults[3].add("StaleCheckpointInViewChange")
    c = InterCluster(3, faults=faults, checkpoint_interval=2)
    for _ in range(3):
        c.submit(c.request())
        c.pump()
    vc = make_vc(c, 3)
    assert vc.c_latest == ()
    assert c.reps[6].validate_view_change(vc) == I.BAD_CHECKPOINT_CERT


def run_view_change(k, omit):
    c = InterCluster(k)
    if omit:
        c.reps[c.dir.seats[1]].faults.add("OmitFromReplaySet")
    c.submit(c.request())
    c.pump()
    block = c.reps[c.dir.seats[1]].executed[0][1]
    # the primary goes quiet; every backup times out on a new request
    silent = Faults()
    silent.add("SilentPrimary")
    c.reps[c.dir.seats[0]].faults = silent
    req = c.request()
    for s in c.dir.seats[1:]:
        c.feed(s, c.reps[s].handle(-1, req, 0))
    c.pump()
    for s in c.dir.seats[1:]:
        c.fire(s, "request")
    c.pump()
    return c, block


def test_new_view_replays_committed_block():
    c, block = run_view_change(3, omit=False)
    for s in c.dir.seats[1:]:
        rep = c.reps[s]
        assert rep.view == 1
        nv = rep.installed[-1]
        assert block in [item.block.digest for item in nv.s]
        assert [d for _, d in rep.executed][0] == block
        assert len(rep.executed) == 2  # the new primary then orders the pending request


def test_omitting_new_primary_is_rejected():
    c, block = run_view_change(5, omit=True)
    correct = c.dir.seats[2:]
    for s in correct:
        rep = c.reps[s]
        assert drops(rep, I.REPLAY_SET_MISMATCH), s
    # escalation drives a view with a correct primary that replays the block
    for s in correct:
        c.fire(s, "view_change")
    c.pump()
    for s in correct:
        rep = c.reps[s]
        assert rep.view >= 2
        assert block in [d for _, d in rep.executed]


def test_replay_set_is_sorted_and_skips_checkpointed_blocks():
    c = InterCluster(3, checkpoint_interval=1)
    c.submit(c.request())
    c.pump()
    c.submit(c.request())
    c.pump()
    vcs = [make_vc(c, s) for s in c.dir.seats]
    s = c.reps[c.dir.seats[0]].compute_replay_set(vcs)
    # both blocks are under the newest stable checkpoint
    assert s == ()
    c2 = InterCluster(3)
    for _ in range(3):
        c2.submit(c2.request())
        c2.pump()
    vcs = [make_vc(c2, x) for x in c2.dir.seats]
    items = c2.reps[c2.dir.seats[0]].compute_replay_set(vcs)
    assert [i.order_key for i in items] == sorted(i.order_key for i in items)
    assert len(items) == 3


def test_new_view_with_bad_vcc_is_rejected():
    c, _ = run_view_change(3, omit=False)
    rep = c.reps[c.dir.seats[1]]
    p2 = c.dir.seats[2]
    bogus = NewView(p2, 2, (), (), c.fx.enclaves[p2].create_ui(b"x"))
    rep._begin(0)
    rep.handle_new_view(bogus)
    rep._end()
    assert drops(rep, I.BAD_VCC)


def test_equivocating_primary_cannot_split_backups():
    f = Faults()
    f.add("EquivocateBlocks")
    c = InterCluster(5, faults={0: f})
    c.submit(c.request())
    c.pump()
    correct = c.dir.seats[1:]
    logs = {tuple(c.reps[s].executed) for s in correct}
    assert len(logs) == 1
    assert len(next(iter(logs))) == 1
