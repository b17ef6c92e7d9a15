from __future__ import annotations

import pytest

from treasury_ledger.anchor import MAX_PAYLOAD, SimChain, TxStatus, btc_oracle, run_scenario
from treasury_ledger.errors import (
    InputError,
    InvalidForkPoint,
    PayloadTooLarge,
    PlatformAssumptionViolated,
    SubstrateUnavailable,
)


def test_submit_and_mine():
    chain = SimChain(k=3)
    txid = chain.submit_anchor(b"\x11" * 32)
    assert chain.status(txid) == TxStatus.PENDING
    chain.mine(1)
    assert chain.blocks[-1].txs[0].txid == txid
    assert chain.confirmations(txid) == 1


def test_payload_bound():
    chain = SimChain()
    chain.submit_anchor(b"\x00" * MAX_PAYLOAD)
    with pytest.raises(PayloadTooLarge):
        chain.submit_anchor(b"\x00" * 100)


def test_duplicate_payloads_get_distinct_txids():
    chain = SimChain()
    assert chain.submit_anchor(b"same") != chain.submit_anchor(b"same")


def test_confirmation_depth():
    # k confirmations: the tip block counts as the first
    chain = SimChain(k=6)
    txid = chain.submit_anchor(b"c")
    chain.mine(1)
    chain.mine(4)  # tx at tip - 4: five confirmations
    assert chain.status(txid) == TxStatus.PENDING
    chain.mine(1)  # tx at tip - (k - 1): six confirmations
    assert chain.status(txid) == TxStatus.CONFIRMED
    assert btc_oracle(chain, [txid, b"\x00" * 32]) == {txid: TxStatus.CONFIRMED, b"\x00" * 32: TxStatus.ABSENT}


def test_shallow_reorg_drops_and_resubmission_reconfirms():
    chain = SimChain(k=6)
    txid = chain.submit_anchor(b"anchor")
    chain.mine(3)
    fork = chain.tip - 3
    assert chain.reorg(fork, 5)
    assert chain.status(txid) == TxStatus.ABSENT
    again = chain.submit_anchor(b"anchor")
    chain.mine(6)
    assert chain.status(again) == TxStatus.CONFIRMED


def test_deep_reorg_is_platform_failure():
    chain = SimChain(k=3)
    chain.mine(5)
    with pytest.raises(PlatformAssumptionViolated):
        chain.reorg(chain.tip - 3, 10)
    with pytest.raises(InvalidForkPoint):
        chain.reorg(chain.tip + 1, 10)


def test_shorter_branch_is_ignored():
    chain = SimChain(k=6)
    chain.mine(4)
    before = chain.to_json()
    assert not chain.reorg(chain.tip - 2, 2)
    assert chain.to_json() == before


def test_offline_substrate():
    chain = SimChain()
    chain.available = False
    with pytest.raises(SubstrateUnavailable):
        chain.submit_anchor(b"x")


def test_scripted_scenarios_are_deterministic():
    script = ["SUBMIT aa", "MINE 2", "REORG 0 3  # replaces both mined blocks", "SUBMIT bb", "MINE 6"]
    a, b = SimChain(k=6), SimChain(k=6)
    ta, tb = run_scenario(a, script), run_scenario(b, script)
    assert ta == tb and a.to_json() == b.to_json()
    assert a.status(ta[0]) == TxStatus.ABSENT
    assert a.status(ta[1]) == TxStatus.CONFIRMED


def test_scenario_errors_carry_line_numbers():
    with pytest.raises(InputError, match="line 2"):
        run_scenario(SimChain(), ["MINE 1", "JUMP 3"])
    with pytest.raises(InputError, match="line 1"):
        run_scenario(SimChain(), ["SUBMIT zz"])


def test_persistence_roundtrip(tmp_path):
    chain = SimChain(k=4, seed=b"s")
    run_scenario(chain, ["SUBMIT 01", "MINE 3", "SUBMIT 02"])
    chain.save(tmp_path / "chain.json")
    back = SimChain.load(tmp_path / "chain.json")
    assert back.to_json() == chain.to_json()
    assert back.submit_anchor(b"z") == chain.submit_anchor(b"z")
