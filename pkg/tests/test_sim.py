import json

import pytest
from hypothesis import given, settings, strategies as st

from trbft.cli import main
from trbft.intra import LogEntry, tampered
from trbft.sim import (
    ConfigInvalid,
    DivergenceDetected,
    FaultScript,
    NetworkModel,
    ScriptError,
    ScriptOutOfBounds,
    SimConfig,
    World,
    load_config,
    run,
    save_config,
)
from trbft.sim.experiments import (
    analytic_comparison,
    check_formula,
    divisor_groupings,
    expected_message_count,
    sweep,
)
from trbft.sim.export import CSV_HEADER, ExportError, export, from_json, to_csv, to_json
from trbft.sim.faults import check_bounds
from trbft.sim.metrics import percentile
from trbft.sim.safety import check_world, verdict
from trbft.sim.trace import events_of_kind, read_trace


# -- config --------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = SimConfig(n_total=12, k=3, seed=4, network=NetworkModel(delay_max=20, gst=100))
    path = tmp_path / "c.json"
    save_config(cfg, path)
    assert load_config(path) == cfg
    assert SimConfig.from_json(cfg.to_json()) == cfg


@pytest.mark.parametrize("data", [
    {"n_total": 12, "k": 1},
    {"n_total": 12, "k": 3, "n": 5},
    {"n_total": 12, "k": 6},
    {"n_total": 12, "k": 2, "group_sizes": [5, 5]},
    {"n_total": 12, "k": 3, "grouping": "ring"},
    {"n_total": 12, "k": 3, "network": {"delay_min": 0}},
    {"n_total": 12, "k": 3, "network": {"drop_rate": 1.0}},
    {"n_total": 12, "k": 3, "bogus": 1},
    {"n_total": 12, "k": 3, "non_tee": [12]},
    {"n_total": 12, "k": 3, "timing": {"no_such": 1}},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigInvalid):
        SimConfig.from_dict(data)


def test_bad_json():
    with pytest.raises(ConfigInvalid):
        SimConfig.from_json("{")
    with pytest.raises(ConfigInvalid):
        SimConfig.from_json("[1]")


def test_uneven_sizes_allowed():
    cfg = SimConfig.from_dict({"n_total": 13, "k": 3, "group_sizes": [4, 4, 5]})
    r = run(cfg)
    assert r.metrics.liveness and r.metrics.safety
    assert sorted(len(m) for m in r.world.groups.values()) == [4, 4, 5]


# -- fault scripts -------------------------------------------------------------

SEATS = [0, 4, 8]
GROUPS = {0: [0, 1, 2, 3], 1: [4, 5, 6, 7], 2: [8, 9, 10, 11]}


def test_selectors():
    script = FaultScript.parse(json.dumps([
        {"select": "leader", "group": 1, "behavior": "SilentPrimary", "start": 5},
        {"select": "follower", "group": "*", "rank": 1, "behavior": "TamperBlock"},
        {"select": "seat", "index": 2, "behavior": "EquivocateBlocks"},
        {"select": "node", "id": 3, "behavior": "CrashSilent", "start": 10, "end": 20},
    ]))
    f = script.resolve(SEATS, GROUPS)
    assert sorted(f) == [2, 3, 4, 6, 8, 10]
    assert f[4].active("SilentPrimary", 5) and not f[4].active("SilentPrimary", 4)
    assert f[3].active("CrashSilent", 19) and not f[3].active("CrashSilent", 20)


@pytest.mark.parametrize("raw", [
    [{"select": "leader", "behavior": "Nope"}],
    [{"select": "boss", "behavior": "CrashSilent"}],
    [{"select": "node", "behavior": "CrashSilent"}],
    [{"select": "leader", "group": 7, "behavior": "CrashSilent"}],
    [{"select": "follower", "rank": 3, "behavior": "CrashSilent"}],
    [{"select": "leader", "behavior": "CrashSilent", "colour": 1}],
    [5],
])
def test_script_errors(raw):
    with pytest.raises(ScriptError):
        FaultScript.parse(raw).resolve(SEATS, GROUPS)


def test_bounds():
    two_seats = FaultScript.parse([{"select": "seat", "index": i, "behavior": "SilentPrimary"} for i in (0, 1)])
    with pytest.raises(ScriptOutOfBounds):
        check_bounds(two_seats.resolve(SEATS, GROUPS), SEATS, GROUPS)
    # n=4 tolerates no Byzantine follower
    one = FaultScript.parse([{"select": "follower", "group": 0, "behavior": "TamperBlock"}])
    with pytest.raises(ScriptOutOfBounds):
        check_bounds(one.resolve(SEATS, GROUPS), SEATS, GROUPS)
    cfg = SimConfig(n_total=12, k=3, faults=[{"select": "follower", "group": 0, "behavior": "TamperBlock"}])
    with pytest.raises(ScriptOutOfBounds):
        World(cfg)
    cfg.allow_out_of_bounds = True
    World(cfg)


# -- message accounting ----------------------------------------------------------

@pytest.mark.parametrize("k", range(2, 11))
def test_measured_count_matches_closed_form(k):
    for n in range(3, 9):
        m = run(SimConfig(n_total=k * n, k=k, n=n)).metrics
        assert m.completed == 1 and m.safety
        assert m.consensus_messages == expected_message_count(k, n), (k, n, dict(m.phase_counts))


def test_count_scales_with_requests():
    m = run(SimConfig(n_total=20, k=4, requests=5)).metrics
    assert m.completed == 5
    assert m.consensus_messages == 5 * expected_message_count(4, 5)


def test_closed_form_rejects_degenerate_shapes():
    with pytest.raises(ValueError):
        expected_message_count(1, 5)
    with pytest.raises(ValueError):
        expected_message_count(3, 2)


def test_formula_table_and_comparison():
    assert divisor_groupings(60) == [2, 3, 4, 5, 6, 10, 12, 15, 20]
    rows = {r["k"]: r for r in check_formula(60)}
    assert all(r["formula"] == r["closed_form"] for r in rows.values())
    assert "255" in rows[6]["note"] and not rows[3]["note"]
    cmp = {r["protocol"]: r for r in analytic_comparison(36, 6)}
    assert cmp["MinBFT"] == {"protocol": "MinBFT", "messages": 1295, "tolerance": 17}
    assert cmp["R-PBFT"]["tolerance"] == 1
    assert (cmp["T-RBFT"]["tolerance_inter"], cmp["T-RBFT"]["tolerance_per_group"]) == (2, 1)


def test_percentile_nearest_rank():
    assert percentile([], 50) == 0
    assert percentile([5], 99) == 5
    assert percentile(list(range(1, 101)), 50) == 50
    assert percentile(list(range(1, 101)), 99) == 99


# -- fault runs ------------------------------------------------------------------

def test_silent_primary_recovers_through_view_change():
    cfg = SimConfig(n_total=15, k=5, requests=3,
                    faults=[{"select": "seat", "index": 0, "behavior": "SilentPrimary", "start": 85}])
    r = run(cfg)
    assert r.metrics.liveness and r.metrics.safety
    views = {r.world.nodes[s].inter.view for s in r.world.seats[1:]}
    assert min(views) >= 1


def test_crashed_follower_is_tolerated():
    cfg = SimConfig(n_total=15, k=3, n=5, requests=2,
                    faults=[{"select": "follower", "group": "*", "rank": 0, "behavior": "CrashSilent"}])
    m = run(cfg).metrics
    assert m.liveness and m.safety


def test_lossy_network_before_gst():
    cfg = SimConfig(n_total=12, k=3, requests=3, seed=2,
                    network=NetworkModel(delay_min=5, delay_max=15, gst=300, drop_rate=0.2))
    m = run(cfg).metrics
    assert m.liveness and m.safety


def test_safety_checker_negative_control():
    r = run(SimConfig(n_total=12, k=3, requests=2))
    w = r.world
    assert check_world(w) == []
    victim = w.nodes[w.directory.groups[1][2]].member
    e = victim.log[0]
    victim.log[0] = LogEntry(e.term, e.index, tampered(e.block), e.proofs, e.commit_cert)
    seat = w.nodes[w.seats[2]].inter
    seat.executed[1] = (seat.executed[1][0], b"\x00" * 32)
    problems = check_world(w)
    assert any("group 1" in p for p in problems)
    assert any("diverging" in p for p in problems)
    ok, _ = verdict(w)
    assert not ok
    with pytest.raises(DivergenceDetected):
        verdict(w, strict=True)


# -- determinism, trace, grouping -------------------------------------------------

def test_same_seed_same_trace_and_different_seed_differs():
    cfg = SimConfig(n_total=12, k=3, requests=2, network=NetworkModel(delay_min=5, delay_max=15))
    a, b = run(cfg), run(cfg)
    assert a.trace == b.trace
    cfg.seed = 1
    assert run(cfg).trace != a.trace
    header, events = read_trace(a.trace)
    assert SimConfig.from_json(header.config_json).requests == 2
    assert len(events_of_kind(events, "client_done")) == 2
    assert events[-1].kind == "end"


def test_hash_grouping_mode():
    cfg = SimConfig(n_total=24, k=4, grouping="hash", requests=2)
    r = run(cfg)
    assert r.metrics.liveness and r.metrics.safety
    sizes = [len(m) for m in r.world.groups.values()]
    assert sum(sizes) == 24 and min(sizes) >= 3


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(3, 4), (4, 3), (2, 5)]))
def test_random_seeds_stay_safe_and_live(seed, shape):
    k, n = shape
    cfg = SimConfig(n_total=k * n, k=k, n=n, seed=seed, requests=2,
                    network=NetworkModel(delay_min=3, delay_max=30, gst=150, drop_rate=0.1))
    m = run(cfg).metrics
    assert m.safety and m.liveness


# -- export ------------------------------------------------------------------------

def test_export_formats(tmp_path):
    rows = sweep(SimConfig(n_total=12, k=3), [2, 3])
    text = to_csv(rows)
    lines = text.splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 3
    assert lines[1].startswith("2,6,12,") and lines[1].endswith("true,true")
    assert to_csv([]) == CSV_HEADER + "\n"
    back = from_json(to_json(rows))
    assert [r["messages_measured"] for r in back] == [expected_message_count(2, 6), expected_message_count(3, 4)]
    assert export(rows, tmp_path / "r.json").read_text() == to_json(rows)
    with pytest.raises(ExportError):
        export(rows, tmp_path / "missing" / "r.csv")
    with pytest.raises(ValueError):
        export(rows, tmp_path / "r.xml")
    with pytest.raises(ValueError):
        from_json('{"columns": ["k"], "rows": []}')


def test_sweep_rejects_non_divisor():
    with pytest.raises(ValueError):
        sweep(SimConfig(n_total=12, k=3), [5])


# -- CLI ---------------------------------------------------------------------------

def test_cli_end_to_end(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    save_config(SimConfig(n_total=12, k=3, requests=2), cfg_path)
    trace = tmp_path / "t.bin"
    assert main(["run", "--config", str(cfg_path), "--trace", str(trace)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["completed"] == 2 and summary["safety"] is True
    assert main(["replay", "--trace", str(trace)]) == 0
    assert "identical=yes" in capsys.readouterr().out
    out = tmp_path / "s.csv"
    assert main(["sweep", "--config", str(cfg_path), "--groups", "2,3", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == CSV_HEADER
    capsys.readouterr()
    assert main(["check-formula", "--n-total", "60", "--groups", "6"]) == 0
    assert "251" in capsys.readouterr().out
    assert main(["compare", "--n-total", "36", "--groups", "6"]) == 0
    assert '"tolerance": 17' in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_total": 12, "k": 1}')
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "absent.json")]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["sweep", "--config", str(bad), "--groups", "a,b"])
