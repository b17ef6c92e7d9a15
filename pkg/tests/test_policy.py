from __future__ import annotations

import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treasury_ledger.anchor import SimChain
from treasury_ledger.errors import InputError, UnknownPolicy
from treasury_ledger.experiments import anchor_now, random_policy, toy_registry, toy_world, view_mutations
from treasury_ledger.ledger import Ledger, coins_for_balances, reserve_balances
from treasury_ledger.policy import (
    Policy,
    RejectReason,
    View,
    evaluate,
    exposure_policy,
    gen_view,
    history_policy,
    history_view,
    leakage_pub,
    public_investor_policy,
    regulator_policy,
    render_table,
    verify_view,
    visible_events,
)
from treasury_ledger.state import Domain, DomainKind, DomainRegistry, TreasuryEvent, btc


def test_public_investor_view_on_toy():
    w = toy_world()
    view = gen_view(w.ledger, "public_investor")
    assert view.as_of == 5 and view.as_of_time == 5
    assert view.value("*", "B_tot") == btc(100)
    assert view.value("*", "B_enc") == btc(20)
    assert verify_view(view, w.ledger.policies["public_investor"], w.chain, w.pp)


def test_regulator_view_on_toy():
    w = toy_world()
    view = gen_view(w.ledger, "regulator")
    assert [(r[1], r[3]) for r in view.rows("balance")] == [("cold", btc(60)), ("coll", btc(20)), ("exch", btc(20))]
    assert [(r[1], r[3]) for r in view.rows("encumbered")] == [("cold", 0), ("coll", 1), ("exch", 0)]


def test_identity_policy_on_empty_ledger():
    led = Ledger.setup(toy_registry(), b"\x02" * 32)
    pol = Policy("identity")
    led.register_policy(pol)
    assert gen_view(led, pol).table == ()


def test_unknown_policy():
    w = toy_world()
    with pytest.raises(UnknownPolicy):
        gen_view(w.ledger, "nobody")
    with pytest.raises(UnknownPolicy):
        gen_view(w.ledger, Policy("unregistered"))


def test_verify_rejections():
    w = toy_world()
    pol = w.ledger.policies["public_investor"]
    view = gen_view(w.ledger, pol)
    edited = replace(view, table=((0, "*", "B_tot", btc(101)), view.table[1]))
    assert verify_view(edited, pol, w.chain, w.pp).reason == RejectReason.RECOMPUTE_MISMATCH
    assert verify_view(view, regulator_policy(w.ledger.registry), w.chain, w.pp).reason == RejectReason.POLICY_MISMATCH

    # a view of the full 6-record ledger whose anchor is not yet buried
    pending = w.ledger.anchor_trigger(w.chain)
    w.chain.mine(w.pp.k - 1)
    fresh = replace(gen_view(w.ledger, pol, as_of=6), anchor_txid=pending.txid)
    assert verify_view(fresh, pol, w.chain, w.pp).reason == RejectReason.ANCHOR_DEPTH


def test_existence_check_in_verify():
    w = toy_world()
    pol = w.ledger.policies["regulator"]
    view = gen_view(w.ledger, pol)
    assert verify_view(view, pol, w.chain, w.pp, coins=w.coins)
    w.coins.spend(view.records[4].coins[0].coin_id)
    res = verify_view(view, pol, w.chain, w.pp, coins=w.coins)
    assert res.reason == RejectReason.POR_EXISTENCE and res.index == 5


def test_history_views():
    w = toy_world()
    assert [r[0] for r in history_view(w.ledger).table] == [1, 2, 3, 4]
    coll = history_policy(["coll"], policy_id="hist-coll")
    w.ledger.register_policy(coll)
    assert [r[0] for r in history_view(w.ledger, coll).table] == [3, 4]
    led = Ledger.setup(toy_registry(), b"\x03" * 32)
    assert history_view(led).table == ()
    with pytest.raises(InputError):
        history_view(w.ledger, "regulator")


def test_leakage_profile():
    w = toy_world()
    assert leakage_pub(w.ledger, [(0, 5)]) == [(btc(100), btc(20))]
    assert leakage_pub(Ledger.setup(toy_registry(), b"\x04" * 32), [(0, 5)]) == [(0, 0)]
    reg = DomainRegistry([Domain("a", DomainKind.ONCHAIN), Domain("x", DomainKind.EXTERNAL), Domain("f", DomainKind.FEE)])
    led = Ledger.setup(reg, b"\x05" * 32)
    led.append_event(TreasuryEvent(1, "x", "a", 7, b"", {}))
    assert leakage_pub(led, [(0, 1)]) == [(7, 0)]


def test_delay_and_materiality():
    reg = toy_registry()
    events = [
        TreasuryEvent(1, "ext", "cold", btc(100), b"", {}),
        TreasuryEvent(5, "cold", "exch", btc("0.5"), b"", {}),
        TreasuryEvent(9, "cold", "coll", btc(10), b"", {}),
    ]
    assert [e.t for e in visible_events(Policy("p", delay=4), events, 10)] == [1, 5]
    assert [e.t for e in visible_events(Policy("p", min_abs=btc(1)), events, 10)] == [1, 9]
    # 0.5 BTC is under 1% of the 110.5 BTC of visible flow
    assert [e.t for e in visible_events(Policy("p", min_bps=100), events, 10)] == [1, 9]
    flows = evaluate(Policy("f", aggregate="flow", bucket=4), events, 10, reg)
    assert (4, "exch", "in", btc("0.5")) in flows and (8, "cold", "out", btc(10)) in flows


def test_exposure_policy_scope():
    reg = toy_registry()
    pol = exposure_policy(["cold", "exch"])
    events = [TreasuryEvent(1, "ext", "cold", btc(5), b"", {}), TreasuryEvent(2, "cold", "coll", btc(2), b"", {})]
    assert evaluate(pol, events, 2, reg) == ((0, "*", "B_tot", btc(3)), (0, "*", "B_enc", 0))


def test_policy_text_roundtrip(tmp_path):
    reg = toy_registry()
    pols = [public_investor_policy(reg, delay=30), regulator_policy(reg), history_policy(["coll"]),
            Policy("odd", labels={"cold": "vault", "exch": "venue"}, min_bps=25, bucket=7)]
    for p in pols:
        assert Policy.from_text(p.to_text()) == p
        (tmp_path / f"{p.policy_id}.policy").write_text(p.to_text())
        assert Policy.load(tmp_path / f"{p.policy_id}.policy") == p
    with pytest.raises(InputError):
        Policy("bad", aggregate="median")


def test_view_bundle_roundtrip(tmp_path):
    w = toy_world()
    view = gen_view(w.ledger, "regulator")
    view.save(tmp_path / "bundle")
    back = View.load(tmp_path / "bundle")
    assert back == view
    assert back.to_text() == view.to_text()
    assert "coll" in render_table(view)


# -- view correctness and faithfulness ---------------------------------------


def test_single_field_mutations_rejected():
    for seed in range(20):
        rng = random.Random(seed)
        w = toy_world(seed=bytes([seed + 1]) * 32)
        pol = random_policy(rng, w.ledger.registry)
        w.ledger.register_policy(pol)
        view = gen_view(w.ledger, pol)
        assert verify_view(view, pol, w.chain, w.pp)
        for name, bad in view_mutations(view, rng):
            assert not verify_view(bad, pol, w.chain, w.pp), name


def _ledger_with(events, seed: bytes) -> tuple[Ledger, SimChain]:
    reg = DomainRegistry([
        # signed kinds: the generated flows may leave a or b short
        Domain("a", DomainKind.DERIVATIVE), Domain("b", DomainKind.COLLATERAL), Domain("hidden", DomainKind.CUSTODIAN),
        Domain("x", DomainKind.EXTERNAL), Domain("f", DomainKind.FEE),
    ])
    led = Ledger.setup(reg, seed, k=2)
    for e in events:
        led.append_event(e)
    led.snapshot_trigger(coins_for_balances(reserve_balances(led.state, led.registry), led.registry,
                                            led.treasury_pk), t=1000)
    chain = SimChain(k=2)
    anchor_now(led, chain)
    return led, chain


visible_steps = st.lists(
    st.tuples(st.sampled_from([("x", "a"), ("x", "b"), ("a", "b"), ("b", "a")]), st.integers(0, 10**9),
              st.sampled_from(["transfer", "trade"])),
    min_size=1, max_size=8,
)


@settings(max_examples=40, deadline=None)
@given(visible_steps, st.lists(st.integers(1, 10**6), max_size=8), st.sampled_from(["balance", "summary", "flow", "history"]))
def test_faithful_under_noise_padding(steps, noise, aggregate):
    """Filtered-out noise between visible events never changes the table."""
    plain, padded = [], []
    for i, ((s, d), v, kind) in enumerate(steps):
        e = TreasuryEvent(10 * (i + 1), s, d, v, b"", {"kind": kind})
        plain.append(e)
        padded.append(e)
        if i < len(noise):
            padded.append(TreasuryEvent(10 * (i + 1) + 5, "x", "hidden", noise[i], b"", {"kind": "noise"}))
    pol = Policy("faithful", aggregate=aggregate, domains=("a", "b"), scope=("a", "b"), bucket=20)
    la, ca = _ledger_with(plain, b"\x06" * 32)
    lb, cb = _ledger_with(padded, b"\x06" * 32)
    la.register_policy(pol)
    lb.register_policy(pol)
    va, vb = gen_view(la, pol), gen_view(lb, pol)
    assert va.table == vb.table
    assert verify_view(va, pol, ca, la.public_params) and verify_view(vb, pol, cb, lb.public_params)
