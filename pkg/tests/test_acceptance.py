"""Acceptance criteria, one test each. Every test records a single
``[PASS]``/``[FAIL]`` line with its measurement and wall time; conftest.py
prints them in the terminal summary."""

from __future__ import annotations

import random
import sys
import time
from contextlib import contextmanager

import pytest

from treasury_ledger.crypto import canonical_serialize
from treasury_ledger.experiments import (
    NEQ_STRATEGIES,
    POLCOMP_STRATEGIES,
    Adversary,
    Evidence,
    aggregate_supply_check,
    all_tampers,
    expected_case,
    random_world,
    run_exp_sound_restricted,
    run_neq,
    run_pol_comp,
    run_view_correctness,
    synthetic_year,
    toy_world,
)
from treasury_ledger.ledger import Ledger, commitments_of, ledger_stats
from treasury_ledger.policy import gen_view, verify_view
from treasury_ledger.por import PoRSnapshot
from treasury_ledger.state import (
    Domain,
    DomainKind,
    DomainRegistry,
    ExposureVector,
    TreasuryEvent,
    apply_event,
    btc,
    total_exposure,
)

MB = 10**6


@pytest.fixture
def criterion(record_property):
    return lambda number, title, limit_s=None: _criterion(record_property, number, title, limit_s)


@contextmanager
def _criterion(record_property, number: int, title: str, limit_s: float | None):
    """Yields a dict for the test to fill with ``ok`` and ``detail``; records
    the verdict line (time limit included) and then asserts it."""
    res = {"ok": False, "detail": ""}
    t0 = time.perf_counter()
    try:
        yield res
    finally:
        dt = time.perf_counter() - t0
        ok = bool(res["ok"]) and (limit_s is None or dt < limit_s)
        limit = f" limit {limit_s:g}s" if limit_s is not None else ""
        line = f"[{'PASS' if ok else 'FAIL'}] {number:2d} {title}: {res['detail']} ({dt:.2f}s{limit})"
        record_property("acceptance", line)
    assert res["ok"], line
    assert limit_s is None or dt < limit_s, line


def test_01_worked_example(criterion):
    with criterion(1, "worked example replay", 1.0) as r:
        reg = DomainRegistry([Domain("cust", DomainKind.CUSTODIAN), Domain("exch", DomainKind.EXCHANGE),
                              Domain("fee", DomainKind.FEE)])
        s0 = ExposureVector({"cust": btc(100), "exch": 0, "fee": 0}, 0)
        s1 = apply_event(s0, TreasuryEvent(1, "cust", "exch", btc(10), b"e1", {}), reg)
        s2 = apply_event(s1, TreasuryEvent(2, "exch", "fee", btc("0.00005"), b"e2", {}), reg)
        got = ((s1["cust"], s1["exch"]), (s2["exch"], s2["fee"]))
        r["ok"] = got == ((9_000_000_000, 1_000_000_000), (999_995_000, 5_000)) and \
            total_exposure(s1, reg) - total_exposure(s2, reg) == 5_000
        r["detail"] = f"(cust, exch)={got[0]} sat then (exch, fee)={got[1]} sat"


def test_02_toy_prefix(criterion):
    with criterion(2, "toy prefix replay") as r:
        w = toy_world()
        st = w.ledger.records[4]
        fold = tuple(w.ledger.state[d] for d in ("cold", "exch", "coll"))
        pub = gen_view(w.ledger, "public_investor")
        reg = gen_view(w.ledger, "regulator")
        reg_vec = {row[1]: row[3] for row in reg.rows("balance")}
        checks = [
            fold == (btc(60), btc(20), btc(20)),
            isinstance(st, PoRSnapshot) and dict(st.totals) == {"cold": btc(60), "exch": btc(20), "coll": btc(20)},
            (pub.value("*", "B_tot"), pub.value("*", "B_enc")) == (btc(100), btc(20)),
            reg_vec == {"cold": btc(60), "exch": btc(20), "coll": btc(20)},
            bool(verify_view(pub, w.ledger.policies["public_investor"], w.chain, w.pp)),
            bool(verify_view(reg, w.ledger.policies["regulator"], w.chain, w.pp)),
        ]
        r["ok"] = all(checks)
        r["detail"] = (f"fold={tuple(v // btc(1) for v in fold)} BTC, V_pub=({pub.value('*', 'B_tot') // btc(1)}, "
                       f"{pub.value('*', 'B_enc') // btc(1)}) BTC, V_reg={ {k: v // btc(1) for k, v in reg_vec.items()} }")


def test_03_conservation(criterion):
    with criterion(3, "conservation property suite", 10.0) as r:
        rng = random.Random(3)
        bad = steps = 0
        for _ in range(10_000):
            n = rng.randint(2, 8)
            doms = [Domain(f"d{i}", rng.choice([DomainKind.ONCHAIN, DomainKind.CUSTODIAN, DomainKind.EXCHANGE,
                                                 DomainKind.DERIVATIVE, DomainKind.COLLATERAL])) for i in range(n - 1)]
            reg = DomainRegistry(doms + [Domain("fee", DomainKind.FEE)])
            ids = [d.id for d in doms]
            s = ExposureVector({**{d: rng.randint(-10**12, 10**12) for d in ids}, "fee": 0}, 0)
            total = total_exposure(s, reg)
            for t in range(1, rng.randint(1, 20) + 1):
                if len(ids) < 2:
                    break
                src, dst = rng.sample(ids, 2)
                s = apply_event(s, TreasuryEvent(t, src, dst, rng.randint(0, 10**10), b"", {}), reg)
                steps += 1
                bad += total_exposure(s, reg) != total
        r["ok"] = bad == 0
        r["detail"] = f"10000 sequences, {steps} internal steps, {bad} violations"


def test_04_view_correctness(criterion):
    with criterion(4, "view correctness", 60.0) as r:
        res = run_view_correctness(1000, seed=4, max_records=32)
        r["ok"] = bool(res) and res.pairs == 1000
        r["detail"] = (f"{res.pairs} pairs, honest rejected {res.honest_rejected}, "
                       f"{res.mutations_accepted}/{res.mutations} mutations accepted")


def test_05_non_equivocation(criterion):
    with criterion(5, "non-equivocation suite", 300.0) as r:
        wins = {s: run_neq(Adversary(s, s), 1000, seed=5).wins for s in sorted(NEQ_STRATEGIES)}
        control = run_neq(Adversary("broken", "edit_value_keep_digest"), 20, seed=5, broken_hash=True)
        r["ok"] = sum(wins.values()) == 0 and control.won and control.evidence == Evidence.HASH_COLLISION
        r["detail"] = (f"{len(wins)} adversaries x 1000 trials, {sum(wins.values())} wins; broken-hash control "
                       f"{control.wins}/20 wins, evidence {control.evidence.value}")


def test_06_restricted_exposure_soundness(criterion):
    with criterion(6, "restricted exposure soundness") as r:
        tampers = all_tampers(toy_world())
        out = run_exp_sound_restricted(Adversary("exhaustive", "exhaustive"), ("cold", "exch", "coll"), (2, 5))
        misses = [t.detail for t, tp in zip(out.trials, tampers)
                  if t.won or t.evidence != expected_case(tp) or t.locus != tp.position]
        r["ok"] = len(out.trials) == len(tampers) > 0 and not misses
        cases = sorted({t.evidence.value for t in out.trials})
        r["detail"] = f"{len(out.trials)} tampers, {len(misses)} misses, cases {','.join(cases)}"


def test_07_policy_completeness(criterion):
    with criterion(7, "policy completeness for V_hist") as r:
        trials = wins = 0
        for s in sorted(POLCOMP_STRATEGIES):
            for out in (run_pol_comp(Adversary(s, s), trials=20, seed=7, max_events=32),
                        run_pol_comp(Adversary(s, s), world=toy_world())):
                trials += len(out.trials)
                wins += out.wins
        r["ok"] = trials > 0 and wins == 0
        r["detail"] = f"{trials} single-event deletions over {len(POLCOMP_STRATEGIES)} strategies, {wins} accepted"


def test_08_supply_check(criterion):
    with criterion(8, "aggregate supply check") as r:
        circ = btc(19_600_000)
        ok_case = aggregate_supply_check([btc(10_000), btc(15_000), btc(5_000)], circ, 0)
        eps = btc(1)
        edge = aggregate_supply_check([circ - btc(30_000), btc(30_000) + eps], circ, eps)
        over = aggregate_supply_check([circ - btc(30_000), btc(30_000) + eps + 1], circ, eps)
        r["ok"] = bool(ok_case) and bool(edge) and not over
        r["detail"] = (f"30000 BTC vs 19.6M consistent={bool(ok_case)}; at circulating+eps consistent={bool(edge)}; "
                       f"+1 sat consistent={bool(over)}")


def test_09_cost_model(criterion, tmp_path):
    with criterion(9, "cost model") as r:
        w = synthetic_year()
        st = ledger_stats(w.ledger)
        w.ledger.save(tmp_path)
        size = (tmp_path / Ledger.RECORDS).stat().st_size
        t0 = time.perf_counter()
        back = Ledger.load(tmp_path, read_only=True)
        failure = back.verify()
        verify_s = time.perf_counter() - t0
        per_event = size / st.events
        r["ok"] = ((st.events, st.snapshots, st.anchors) == (20_000, 12, 12) and failure is None
                   and size <= 10 * MB and per_event <= 500 and verify_s < 30)
        r["detail"] = (f"{st.events} events, {st.snapshots} snapshots, {st.anchors} anchors; {size / MB:.2f} MB, "
                       f"{per_event:.1f} B/event, re-verify {verify_s:.1f}s (limit 30s)")


def test_10_persistence_roundtrip(criterion, tmp_path):
    with criterion(10, "persistence round-trip") as r:
        ledgers = [toy_world().ledger] + [random_world(random.Random(i), 16, n_snapshots=2).ledger for i in range(20)]
        empty = Ledger.setup(toy_world().ledger.registry, b"\x09" * 32)
        ledgers.append(empty)
        mismatched = 0
        for i, led in enumerate(ledgers):
            led.save(tmp_path / str(i))
            back = Ledger.load(tmp_path / str(i), read_only=True)
            recomputed = commitments_of(canonical_serialize(rec) for rec in back.records)
            mismatched += not (back.commitments == recomputed == led.commitments)
        r["ok"] = mismatched == 0
        r["detail"] = f"{len(ledgers)} ledgers, {mismatched} with differing C_i"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
