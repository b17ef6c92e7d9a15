from __future__ import annotations

import re
from pathlib import Path

import pytest

from treasury_ledger.cli import (
    EXIT_INPUT,
    EXIT_OK,
    EXIT_REJECT,
    format_event_line,
    main,
    params_from_text,
    params_to_text,
    parse_event_line,
)
from treasury_ledger.crypto import canonical_serialize
from treasury_ledger.experiments import toy_world
from treasury_ledger.ledger import Ledger
from treasury_ledger.state import btc

DATA = Path(__file__).resolve().parents[1] / "data"
POLICIES = Path(__file__).resolve().parents[1] / "policies"
SEED = "01" * 32


def run(capsys, *argv) -> tuple[int, dict[str, list[str]], str]:
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    kv: dict[str, list[str]] = {}
    for line in out.splitlines():
        m = re.match(r"^([a-z_]+)=(.*)$", line)
        if m:
            kv.setdefault(m[1], []).append(m[2])
    return code, kv, out


@pytest.fixture
def toy(tmp_path, capsys):
    """Ledger path with the toy events, a snapshot and a confirmed anchor."""
    lp = tmp_path / "led"
    base = ("--ledger-path", lp)
    assert run(capsys, *base, "init", "--domains", DATA / "toy.domains", "--seed", SEED)[0] == EXIT_OK
    assert run(capsys, *base, "append", DATA / "toy.events")[0] == EXIT_OK
    assert run(capsys, *base, "snapshot", "--coins", DATA / "toy.coins", "--t", 5)[0] == EXIT_OK
    assert run(capsys, *base, "anchor")[0] == EXIT_OK
    return base


def test_event_line_roundtrip():
    e = parse_event_line("7 cold exch 1.5 abcd kind=transfer desk=a")
    assert (e.t, e.v, e.evid, e.meta) == (7, btc("1.5"), b"\xab\xcd", {"kind": "transfer", "desk": "a"})
    back = parse_event_line(format_event_line(e))
    assert canonical_serialize(back) == canonical_serialize(e)
    assert parse_event_line("1 a b 250sat -").v == 250


def test_toy_lifecycle_report(toy, capsys):
    code, kv, out = run(capsys, *toy, "mine", 6)
    assert code == EXIT_OK
    assert "balance cold 60 BTC" in out and "balance exch 20 BTC" in out and "balance coll 20 BTC" in out
    assert len(kv["confirmed"]) == 1 and kv["confirmed"][0].startswith("5:")
    assert kv["records"] == ["6"]


def test_toy_commitment_matches_library(toy, capsys):
    run(capsys, *toy, "mine", 6)
    code, kv, _ = run(capsys, *toy, "replay", "--to", 5)
    assert code == EXIT_OK and kv["verify"] == ["ok"]
    assert kv["commitment_at"] == [f"5:{toy_world().ledger.commitment_at(5).hex()}"]


def test_malformed_append_reports_line_and_leaves_ledger(toy, capsys, tmp_path):
    lp = Path(toy[1])
    before = (lp / Ledger.RECORDS).read_bytes()
    bad = tmp_path / "bad.events"
    bad.write_text("9 cold exch 1 -\n\n10 cold exch 0.000000001 -\n")
    code = main([*map(str, toy), "append", str(bad)])
    assert code == EXIT_INPUT and f"{bad}:3" in capsys.readouterr().err
    # the first line is valid but a later line fails an append-time check
    bad.write_text("9 cold exch 1 -\n8 cold exch 1 -\n")
    assert main([*map(str, toy), "append", str(bad)]) == EXIT_INPUT
    assert f"{bad}:2" in capsys.readouterr().err
    assert (lp / Ledger.RECORDS).read_bytes() == before


def test_repeated_snapshot_has_identical_totals(toy, capsys):
    _, a, _ = run(capsys, *toy, "snapshot")
    _, b, out = run(capsys, *toy, "snapshot")
    assert "snapshot_total cold 60 BTC" in out
    assert int(b["records"][0]) == int(a["records"][0]) + 1


def test_view_and_verify(toy, capsys, tmp_path):
    run(capsys, *toy, "mine", 6)
    bundle = tmp_path / "pub"
    code, kv, _ = run(capsys, *toy, "view", "public_investor", "--out", bundle)
    assert code == EXIT_OK
    assert kv["row"] == [f"0|*|B_tot|{btc(100)}", f"0|*|B_enc|{btc(20)}"]
    code, kv, _ = run(capsys, *toy, "verify-view", bundle)
    assert code == EXIT_OK and kv["verdict"] == ["accept"]

    # verification from the bundle alone
    code, kv, _ = run(capsys, "--ledger-path", tmp_path / "none", "--chain-path", Path(toy[1]) / "chain.json",
                      "verify-view", bundle)
    assert code == EXIT_OK

    view_txt = bundle / "view.txt"
    view_txt.write_text(view_txt.read_text().replace(str(btc(100)), str(btc(101))))
    code, kv, _ = run(capsys, *toy, "verify-view", bundle)
    assert code == EXIT_REJECT and kv["reason"] == ["RECOMPUTE_MISMATCH"]


def test_view_from_policy_file_and_wrong_substrate(toy, capsys, tmp_path):
    run(capsys, *toy, "mine", 6)
    bundle = tmp_path / "reg"
    code, kv, _ = run(capsys, *toy, "view", POLICIES / "regulator.policy", "--out", bundle)
    assert code == EXIT_OK and f"0|coll|balance|{btc(20)}" in kv["row"]
    empty_chain = tmp_path / "fresh.json"
    code, kv, _ = run(capsys, *toy, "--chain-path", empty_chain, "verify-view", bundle)
    assert code == EXIT_REJECT and kv["reason"] == ["ANCHOR_DEPTH"]


def test_delayed_policy_hides_recent_flows(toy, capsys, tmp_path):
    run(capsys, *toy, "mine", 6)
    code, kv, _ = run(capsys, *toy, "view", POLICIES / "public_investor_delayed.policy", "--out", tmp_path / "d")
    # nothing is older than the 30-tick delay yet
    assert code == EXIT_OK and "row" not in kv and kv["as_of"] == ["5"]


def test_reorg_scenario_then_reconfirm(tmp_path, capsys):
    base = ("--ledger-path", tmp_path / "led", "--k-confirmations", 3)
    run(capsys, *base, "init", "--domains", DATA / "toy.domains", "--seed", SEED)
    run(capsys, *base, "append", DATA / "toy.events")
    _, kv, _ = run(capsys, *base, "anchor")
    first = kv["anchor_tx"][0]
    code, kv, _ = run(capsys, *base, "mine", 1, "--scenario", DATA / "reorg.scenario")
    assert code == EXIT_OK and "confirmed" not in kv
    assert kv["pending_anchor"][0] != f"4:{first}"
    _, kv, _ = run(capsys, *base, "mine", 3)
    assert kv["confirmed"][0].startswith("4:")


def test_stats(toy, capsys, tmp_path):
    run(capsys, *toy, "mine", 6)
    code, kv, _ = run(capsys, *toy, "stats", "--years", 2)
    assert code == EXIT_OK
    assert (kv["records"], kv["events"], kv["snapshots"], kv["anchors"]) == (["5"], ["4"], ["1"], ["1"])
    assert kv["anchor_payload_bytes"] == ["52"] and kv["projected_anchors"] == ["24"]
    empty = ("--ledger-path", tmp_path / "empty")
    run(capsys, *empty, "init", "--domain", "a:ONCHAIN", "--domain", "x:EXTERNAL", "--domain", "f:FEE")
    _, kv, _ = run(capsys, *empty, "stats")
    assert (kv["records"], kv["events"], kv["anchors"]) == (["0"], ["0"], ["0"])


def test_aggregate(toy, capsys, tmp_path):
    run(capsys, *toy, "mine", 6)
    bundle = tmp_path / "pub"
    run(capsys, *toy, "view", "public_investor", "--out", bundle)
    code, kv, _ = run(capsys, *toy, "aggregate", bundle, "--claim", "10000", "--claim", "19900",
                      "--circulating", "19600000")
    assert code == EXIT_OK and kv["total"] == ["30000 BTC"] and kv["consistent"] == ["yes"]
    code, kv, _ = run(capsys, *toy, "aggregate", bundle, "--claim", "10000", "--claim", "19900",
                      "--circulating", "25000")
    assert code == EXIT_REJECT and kv["consistent"] == ["no"]


def test_experiment_command(capsys, tmp_path):
    m = tmp_path / "m.manifest"
    m.write_text("game = NEQ\nadversary = null\ntrials = 2\n")
    code, kv, out = run(capsys, "--ledger-path", tmp_path, "experiment", m, "--per-trial")
    assert code == EXIT_OK and kv["total_wins"] == ["0"] and "trial 1 won=0" in out
    m.write_text("game = COLL\nadversary = x\n")
    assert main(["--ledger-path", str(tmp_path), "experiment", str(m)]) == EXIT_INPUT


def test_replay_exports_events_and_detects_tampering(toy, capsys, tmp_path):
    out = tmp_path / "events.out"
    code, kv, _ = run(capsys, *toy, "replay", "--events-out", out)
    assert code == EXIT_OK
    assert [parse_event_line(x) for x in out.read_text().splitlines()] == toy_world().events
    cfile = Path(toy[1]) / Ledger.COMMITMENTS
    data = bytearray(cfile.read_bytes())
    data[0] ^= 1
    cfile.write_bytes(bytes(data))
    code, kv, _ = run(capsys, *toy, "replay")
    assert code == EXIT_REJECT and kv["verify"][0].startswith("fail")


def test_input_errors(tmp_path, capsys):
    lp = ("--ledger-path", str(tmp_path / "led"))
    assert main([*lp, "stats"]) == EXIT_INPUT
    assert main([*lp, "init", "--domain", "a:NOPE"]) == EXIT_INPUT
    assert main([*lp, "init", "--domain", "a:ONCHAIN", "--domain", "x:EXTERNAL", "--domain", "f:FEE"]) == EXIT_OK
    assert main([*lp, "init", "--domain", "a:ONCHAIN"]) == EXIT_INPUT
    assert main([*lp, "--k-confirmations", "9", "anchor"]) == EXIT_INPUT
    assert main([*lp, "view", "nobody", "--out", str(tmp_path / "v")]) == EXIT_INPUT
    assert main([*lp, "aggregate", "--circulating", "1.000000001"]) == EXIT_INPUT


def test_tpl_home_default(monkeypatch, tmp_path):
    from treasury_ledger.cli import default_ledger_path

    monkeypatch.setenv("TPL_HOME", str(tmp_path))
    assert default_ledger_path() == tmp_path / "ledger"


def test_params_text_roundtrip():
    pp = toy_world().pp
    assert params_from_text(params_to_text(pp)) == pp
