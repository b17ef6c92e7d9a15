"""Security-game harness with scripted adversaries.

Each game builds an honest execution, hands the adversary what the game
allows it to hold, and judges the adversary's output with the public
verification procedures. Losses are classified by the check that caught
them:

* POR_DISCREPANCY      a snapshot failed its root, totals or fold agreement
* POT_DISCREPANCY      a receipt failed its hash link or a signature
* COMMITMENT_MISMATCH  records do not hash to the canonical anchored commitment
* VIEW_MISMATCH        the policy does not reproduce the claimed table
* HASH_COLLISION       distinct records under one commitment (a win)

Adversaries are named strategies plus parameters, so every run is
reproducible from a manifest.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .anchor import SimChain
from .crypto import BROKEN_TRUNCATED, SHA256, KeyPair, canonical_serialize, use_hash_scheme
from .errors import InputError, InvalidCoin, MalformedAdversaryOutput
from .ledger import (
    AnchorMeta,
    Ledger,
    LivenessConfig,
    PublicParams,
    Scheduler,
    anchor_payload,
    check_liveness,
    coins_for_balances,
    commitments_of,
    reserve_balances,
)
from .policy import (
    Policy,
    RejectReason,
    Verdict,
    View,
    as_of_time,
    evaluate,
    exposure_policy,
    gen_view,
    history_policy,
    verify_view,
)
from .por import CoinRecord, CoinRegistry, PoRSnapshot, snapshot
from .pot import PoTChain, PoTRecord, append_receipt, make_receipt, verify_chain
from .state import (
    SAT_PER_BTC,
    Domain,
    DomainKind,
    DomainRegistry,
    ExposureVector,
    TreasuryEvent,
    btc,
    fold_events,
    is_closed,
)

BTC = SAT_PER_BTC
SUPPLY_CAP = 21_000_000 * BTC


class Game(str, Enum):
    COLL = "COLL"
    POT_FORGE = "POT_FORGE"
    NEQ = "NEQ"
    EXP_SOUND_RESTRICTED = "EXP_SOUND_RESTRICTED"
    POL_COMP = "POL_COMP"


class Evidence(str, Enum):
    POR_DISCREPANCY = "POR_DISCREPANCY"
    POT_DISCREPANCY = "POT_DISCREPANCY"
    HASH_COLLISION = "HASH_COLLISION"
    COMMITMENT_MISMATCH = "COMMITMENT_MISMATCH"
    VIEW_MISMATCH = "VIEW_MISMATCH"
    NONE = "NONE"


_REASON_EVIDENCE = {
    RejectReason.POT_INVALID: Evidence.POT_DISCREPANCY,
    RejectReason.EVENT_INVALID: Evidence.POT_DISCREPANCY,
    RejectReason.POR_INVALID: Evidence.POR_DISCREPANCY,
    RejectReason.POR_EXISTENCE: Evidence.POR_DISCREPANCY,
    RejectReason.COMMITMENT_MISMATCH: Evidence.COMMITMENT_MISMATCH,
    RejectReason.ANCHOR_DEPTH: Evidence.COMMITMENT_MISMATCH,
    RejectReason.ANCHOR_META_MISMATCH: Evidence.COMMITMENT_MISMATCH,
    RejectReason.MALFORMED: Evidence.COMMITMENT_MISMATCH,
    RejectReason.RECOMPUTE_MISMATCH: Evidence.VIEW_MISMATCH,
    RejectReason.POLICY_MISMATCH: Evidence.VIEW_MISMATCH,
}


def evidence_of(verdict: Verdict) -> Evidence:
    return Evidence.NONE if verdict.accepted else _REASON_EVIDENCE[verdict.reason]


@dataclass(frozen=True)
class TrialResult:
    won: bool
    evidence: Evidence
    locus: int | None = None
    detail: str = ""


@dataclass
class ExperimentOutcome:
    game: Game
    adversary: str
    trials: list[TrialResult] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def wins(self) -> int:
        return sum(t.won for t in self.trials)

    @property
    def won(self) -> bool:
        return self.wins > 0

    @property
    def evidence(self) -> Evidence:
        """Evidence of the first win, else of the first trial."""
        for t in self.trials:
            if t.won:
                return t.evidence
        return self.trials[0].evidence if self.trials else Evidence.NONE

    def summary_line(self) -> str:
        classes = sorted({t.evidence.value for t in self.trials})
        return (
            f"game={self.game.value} adversary={self.adversary} trials={len(self.trials)} "
            f"wins={self.wins} evidence={','.join(classes)}"
        )


# ---------------------------------------------------------------------------
# worlds
# ---------------------------------------------------------------------------


def toy_registry() -> DomainRegistry:
    return DomainRegistry(
        [
            Domain("cold", DomainKind.ONCHAIN),
            Domain("exch", DomainKind.EXCHANGE),
            Domain("coll", DomainKind.COLLATERAL),
            Domain("ext", DomainKind.EXTERNAL),
            Domain("fee", DomainKind.FEE),
        ]
    )


def toy_events() -> list[TreasuryEvent]:
    """The three-domain reporting example: acquisition, funding, collateral."""
    return [
        TreasuryEvent(1, "ext", "cold", btc(100), b"evid-1-acquisition", {"kind": "acquisition"}),
        TreasuryEvent(2, "cold", "exch", btc(40), b"evid-2-funding", {"kind": "transfer"}),
        TreasuryEvent(3, "exch", "coll", btc(30), b"evid-3-collateral-post", {"kind": "collateral"}),
        TreasuryEvent(4, "coll", "exch", btc(10), b"evid-4-collateral-release", {"kind": "collateral"}),
    ]


@dataclass
class World:
    ledger: Ledger
    chain: SimChain
    coins: CoinRegistry
    events: list[TreasuryEvent]

    @property
    def pp(self) -> PublicParams:
        return self.ledger.public_params


def _snapshot_coins(led: Ledger, label: str) -> list[CoinRecord]:
    return coins_for_balances(reserve_balances(led.state, led.registry), led.registry, led.treasury_pk, label)


def anchor_now(led: Ledger, chain: SimChain) -> AnchorMeta:
    led.anchor_trigger(chain)
    chain.mine(led.k)
    metas = led.poll_anchors(chain)
    return metas[-1]


def toy_world(seed: bytes = b"\x01" * 32, k: int = 6) -> World:
    """Toy ledger: four events, snapshot at t=5, anchor of the 5-record prefix."""
    led = Ledger.setup(toy_registry(), seed=seed, k=k)
    chain = SimChain(k=k)
    events = toy_events()
    for e in events:
        led.append_event(e)
    coins = _snapshot_coins(led, "toy")
    led.snapshot_trigger(coins, t=5)
    anchor_now(led, chain)
    return World(led, chain, CoinRegistry.from_coins(coins), events)


def random_registry(rng: random.Random, n_domains: int) -> DomainRegistry:
    kinds = [DomainKind.ONCHAIN, DomainKind.CUSTODIAN, DomainKind.EXCHANGE, DomainKind.COLLATERAL, DomainKind.DERIVATIVE]
    doms = [Domain(f"d{i}", kinds[i % len(kinds)]) for i in range(n_domains)]
    return DomainRegistry(doms + [Domain("ext", DomainKind.EXTERNAL), Domain("fee", DomainKind.FEE)])


def random_events(rng: random.Random, registry: DomainRegistry, n: int, t0: int = 0) -> list[TreasuryEvent]:
    """Events keeping every reserve balance non-negative; starts with funding."""
    reserve = registry.reserve_domains()
    bal = {d: 0 for d in reserve}
    out = []
    t = t0
    for i in range(n):
        t += rng.randint(1, 3)
        funded = [d for d in reserve if bal[d] > 0]
        roll = rng.random()
        if not funded or roll < 0.15:
            dst = rng.choice(reserve)
            v = rng.randint(1, 50) * BTC // rng.choice((1, 10, 1000))
            src = "ext"
            bal[dst] += v
        else:
            src = rng.choice(funded)
            v = rng.randint(0, bal[src])
            if roll < 0.25:
                dst = registry.fee
            elif roll < 0.32:
                dst = "ext"
            else:
                dst = rng.choice([d for d in reserve if d != src])
            bal[src] -= v
            if dst in bal:
                bal[dst] += v
        kind = rng.choice(("transfer", "fee", "trade", "collateral"))
        evid = rng.randbytes(32)
        out.append(TreasuryEvent(t, src, dst, v, evid, {"kind": kind, "seq": str(i)}))
    return out


def random_world(
    rng: random.Random,
    n_events: int,
    n_domains: int = 4,
    n_snapshots: int = 1,
    tail_events: int = 0,
    k: int = 3,
) -> World:
    """Random honest ledger on even ticks, snapshots on odd ticks spread over
    the first ``n_events - tail_events`` events, full prefix anchored."""
    reg = random_registry(rng, n_domains)
    led = Ledger.setup(reg, seed=rng.randbytes(32), k=k)
    chain = SimChain(k=k, seed=rng.randbytes(8))
    events = [replace(e, t=2 * i) for i, e in enumerate(random_events(rng, reg, n_events), start=1)]
    body = n_events - tail_events
    snap_after = set(rng.sample(range(1, body + 1), min(n_snapshots, body))) if body > 0 else set()
    all_coins: list[CoinRecord] = []
    for i, e in enumerate(events, start=1):
        led.append_event(e)
        if i in snap_after:
            coins = _snapshot_coins(led, f"s{i}")
            all_coins += coins
            led.snapshot_trigger(coins, t=e.t + 1)
    anchor_now(led, chain)
    return World(led, chain, CoinRegistry.from_coins(all_coins), events)


def synthetic_year(
    seed: int = 0,
    n_events: int = 20_000,
    periods: int = 12,
    n_domains: int = 6,
) -> World:
    """Cost-model workload: ``n_events`` events split into ``periods`` equal
    periods, each closed by one snapshot and one confirmed anchor."""
    rng = random.Random(f"year/{seed}")
    reg = random_registry(rng, n_domains)
    led = Ledger.setup(reg, seed=rng.randbytes(32), k=6)
    chain = SimChain(k=6, seed=rng.randbytes(8))
    events = [replace(e, t=2 * i) for i, e in enumerate(random_events(rng, reg, n_events), start=1)]
    per = max(1, n_events // periods)
    all_coins: list[CoinRecord] = []
    for i, e in enumerate(events, start=1):
        led.append_event(e)
        if i % per == 0 and i // per <= periods:
            coins = _snapshot_coins(led, f"m{i // per}")
            all_coins += coins
            led.snapshot_trigger(coins, t=e.t + 1)
            anchor_now(led, chain)
    return World(led, chain, CoinRegistry.from_coins(all_coins), events)


# ---------------------------------------------------------------------------
# adversary toolkit
# ---------------------------------------------------------------------------


def rechain(records: Sequence, start: int, treasury: KeyPair, provider: KeyPair, registry: DomainRegistry) -> list:
    """Re-index, re-hash and re-sign receipts from 1-based ``start`` on, and
    refresh anchor metadata so it matches the rewritten commitments."""
    out = list(records[: start - 1])
    prev = next((r.r for r in reversed(out) if isinstance(r, PoTRecord)), bytes(32))
    for rec in records[start - 1:]:
        i = len(out) + 1
        if isinstance(rec, PoTRecord):
            rec = make_receipt(prev, rec.event, i, treasury, provider)
            prev = rec.r
        elif isinstance(rec, AnchorMeta):
            cs = commitments_of(canonical_serialize(r) for r in out)
            rec = replace(rec, commitment=cs[rec.anchored_index]) if rec.anchored_index < i else rec
        out.append(rec)
    return out


def publish(records: Sequence, pp: PublicParams, chain: SimChain) -> bytes:
    """Anchor the commitment of ``records`` on ``chain`` at depth k."""
    n = len(records)
    c = commitments_of(canonical_serialize(r) for r in records)[n]
    txid = chain.submit_anchor(anchor_payload(pp.tag, n, c))
    chain.mine(pp.k)
    return txid


def make_view(policy: Policy, records: Sequence, pp: PublicParams, anchor_txid: bytes) -> View:
    records = tuple(records)
    t = as_of_time(records)
    events = [r.event for r in records if isinstance(r, PoTRecord)]
    c = commitments_of(canonical_serialize(r) for r in records)[len(records)]
    return View(policy.policy_id, len(records), t, evaluate(policy, events, t, pp.registry), records, c, anchor_txid)


def _first_diff(a: Sequence, b: Sequence) -> int | None:
    for j, (x, y) in enumerate(zip(a, b), start=1):
        if canonical_serialize(x) != canonical_serialize(y):
            return j
    return None if len(a) == len(b) else min(len(a), len(b)) + 1


def _locus(verdict: Verdict, honest: Sequence, forged: Sequence) -> int | None:
    return verdict.index if verdict.index is not None else _first_diff(honest, forged)


@dataclass(frozen=True)
class Adversary:
    id: str
    strategy: str
    params: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# non-equivocation
# ---------------------------------------------------------------------------


def _neq_null(w: World, rng, pol):
    recs = w.ledger.records[: w.ledger.anchors[-1].anchored_index]
    txid = w.ledger.anchors[-1].txid
    return make_view(pol, recs, w.pp, txid), make_view(pol, recs, w.pp, txid)


def _neq_target(w: World, rng) -> tuple[list, int]:
    n = w.ledger.anchors[-1].anchored_index
    recs = list(w.ledger.records[:n])
    idx = [i for i, r in enumerate(recs, start=1) if isinstance(r, PoTRecord)]
    return recs, rng.choice(idx)


def _neq_edit_meta(w: World, rng, pol, reanchor: bool):
    recs, j = _neq_target(w, rng)
    txid = w.ledger.anchors[-1].txid
    alt = list(recs)
    r = alt[j - 1]
    alt[j - 1] = replace(r, meta={**r.meta, "note": "restated"})
    if reanchor:
        alt = rechain(alt, j, w.ledger.treasury_key, w.ledger.provider_key, w.pp.registry)
        alt_txid = publish(alt, w.pp, w.chain)
    else:
        alt_txid = txid
    return make_view(pol, recs, w.pp, txid), make_view(pol, alt, w.pp, alt_txid)


def _neq_edit_value(w: World, rng, pol):
    """Change one value, keep digest, link and signatures byte-identical."""
    recs, j = _neq_target(w, rng)
    txid = w.ledger.anchors[-1].txid
    alt = list(recs)
    r = alt[j - 1]
    alt[j - 1] = replace(r, v=r.v + rng.randint(1, BTC))
    return make_view(pol, recs, w.pp, txid), make_view(pol, alt, w.pp, txid)


def _neq_anchor_race(w: World, rng, pol):
    """Publish a rewritten prefix of equal length and anchor it too."""
    recs, j = _neq_target(w, rng)
    alt = list(recs)
    r = alt[j - 1]
    alt[j - 1] = replace(r, v=r.v + 1)
    alt = rechain(alt, j, w.ledger.treasury_key, w.ledger.provider_key, w.pp.registry)
    alt_txid = publish(alt, w.pp, w.chain)
    return make_view(pol, recs, w.pp, w.ledger.anchors[-1].txid), make_view(pol, alt, w.pp, alt_txid)


NEQ_STRATEGIES: dict[str, Callable] = {
    "null": _neq_null,
    "edit_meta": lambda w, rng, pol: _neq_edit_meta(w, rng, pol, reanchor=False),
    "edit_meta_reanchor": lambda w, rng, pol: _neq_edit_meta(w, rng, pol, reanchor=True),
    "edit_value_keep_digest": _neq_edit_value,
    "anchor_race": _neq_anchor_race,
}


def _neq_world(rng: random.Random) -> World:
    # snapshot early and leave a tail of events after it
    n = rng.randint(4, 12)
    return random_world(rng, n, n_domains=rng.randint(2, 5), n_snapshots=1, tail_events=rng.randint(1, n - 2))


def run_neq(adversary: Adversary, trials: int, seed: int = 0, broken_hash: bool = False) -> ExperimentOutcome:
    strat = NEQ_STRATEGIES.get(adversary.strategy)
    if strat is None:
        raise InputError(f"unknown NEQ strategy {adversary.strategy!r}")
    out = ExperimentOutcome(Game.NEQ, adversary.id)
    if broken_hash:
        out.notes.append("hash scheme: truncated identity (positive control)")
    with use_hash_scheme(BROKEN_TRUNCATED if broken_hash else SHA256):
        for trial in range(trials):
            rng = random.Random(f"neq/{seed}/{trial}")
            w = _neq_world(rng)
            pol = w.ledger.policies["regulator"]
            try:
                va, vb = strat(w, rng, pol)
            except (TypeError, ValueError) as exc:
                raise MalformedAdversaryOutput(str(exc)) from exc
            if not isinstance(va, View) or not isinstance(vb, View) or va.as_of != vb.as_of:
                raise MalformedAdversaryOutput("NEQ output must be two views of equal length")
            ok_a = verify_view(va, pol, w.chain, w.pp)
            ok_b = verify_view(vb, pol, w.chain, w.pp)
            locus = _first_diff(va.records, vb.records)
            if ok_a and ok_b and va.table != vb.table:
                same_c = va.commitment == vb.commitment
                ev = Evidence.HASH_COLLISION if same_c else Evidence.POT_DISCREPANCY
                out.trials.append(TrialResult(True, ev, locus, "two distinct views verify"))
            else:
                bad = ok_b if not ok_b else ok_a
                ev = Evidence.NONE if (ok_a and ok_b) else evidence_of(bad)
                out.trials.append(TrialResult(False, ev, locus, str(bad)))
    return out


# ---------------------------------------------------------------------------
# PoT receipt unforgeability
# ---------------------------------------------------------------------------


@dataclass
class AppendOracle:
    treasury: KeyPair
    provider: KeyPair
    chain: PoTChain = field(default_factory=PoTChain)
    issued: set = field(default_factory=set)

    def append(self, e: TreasuryEvent) -> PoTRecord:
        rec = append_receipt(self.chain, e, self.treasury, self.provider)
        self.issued.add(rec.r)
        return rec


def _forge_replay(oracle: AppendOracle, rng, leaked):
    return list(oracle.chain.records)


def _forge_splice(oracle: AppendOracle, rng, leaked):
    recs = list(oracle.chain.records)
    i = rng.randrange(len(recs) - 1)
    recs[i], recs[i + 1] = recs[i + 1], recs[i]
    return recs


def _forge_fabricate(oracle: AppendOracle, rng, leaked):
    """Append a fabricated receipt signed with whatever keys the adversary holds."""
    recs = list(oracle.chain.records)
    last = recs[-1]
    e = TreasuryEvent(last.t + 1, "ext", "d0", rng.randint(1, 100) * BTC, rng.randbytes(32), {"kind": "forged"})
    treasury, provider = leaked
    recs.append(make_receipt(last.r, e, last.index + 1, treasury, provider))
    return recs


POT_STRATEGIES: dict[str, Callable] = {
    "replay_prefix": _forge_replay,
    "splice": _forge_splice,
    "fabricate": _forge_fabricate,
}


def run_pot_forge(adversary: Adversary, trials: int, seed: int = 0) -> ExperimentOutcome:
    """The adversary holds the treasury key (or both keys when
    ``params['leaked_keys']`` is set) plus append-oracle access."""
    strat = POT_STRATEGIES.get(adversary.strategy)
    if strat is None:
        raise InputError(f"unknown POT_FORGE strategy {adversary.strategy!r}")
    leaked_all = bool(adversary.params.get("leaked_keys"))
    out = ExperimentOutcome(Game.POT_FORGE, adversary.id)
    if leaked_all:
        out.notes.append("provider and treasury keys leaked: outside the signature assumption")
    for trial in range(trials):
        rng = random.Random(f"pot/{seed}/{trial}")
        treasury = KeyPair.from_seed(rng.randbytes(32))
        provider = KeyPair.from_seed(rng.randbytes(32))
        oracle = AppendOracle(treasury, provider)
        reg = random_registry(rng, 3)
        for e in random_events(rng, reg, rng.randint(3, 8)):
            oracle.append(e)
        leaked = (treasury, provider if leaked_all else KeyPair.from_seed(rng.randbytes(32)))
        forged = strat(oracle, rng, leaked)
        if not isinstance(forged, list) or not all(isinstance(r, PoTRecord) for r in forged):
            raise MalformedAdversaryOutput("POT_FORGE output must be a list of receipts")
        res = verify_chain(forged, treasury.public, provider.public)
        fresh = [r for r in forged if r.r not in oracle.issued]
        if res and fresh:
            out.trials.append(TrialResult(True, Evidence.POT_DISCREPANCY, fresh[0].index, "receipt never issued verifies"))
        elif res:
            out.trials.append(TrialResult(False, Evidence.NONE, None, "only oracle receipts"))
        else:
            out.trials.append(TrialResult(False, Evidence.POT_DISCREPANCY, res.index, res.cause.value))
    return out


# ---------------------------------------------------------------------------
# restricted exposure soundness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Tamper:
    """One single-point tampering of the published prefix."""

    kind: str
    position: int
    reanchor: bool = True


def _shift_times(records: list, start: int, by: int) -> list:
    out = list(records)
    for i in range(start - 1, len(out)):
        r = out[i]
        if isinstance(r, (PoTRecord, PoRSnapshot)):
            out[i] = replace(r, t=r.t + by)
    return out


def apply_tamper(w: World, tamper: Tamper, rng: random.Random, adv_provider: KeyPair) -> list:
    """Adversary holds the treasury key only; its provider signatures come
    from ``adv_provider``, which the verifier does not trust."""
    led = w.ledger
    n = led.anchors[-1].anchored_index
    recs = list(led.records[:n])
    j = tamper.position
    r = recs[j - 1]
    one = BTC
    if tamper.kind == "inflate_value":
        if not isinstance(r, PoTRecord):
            raise InputError("inflate_value targets a receipt")
        recs[j - 1] = replace(r, v=r.v + one)
        return recs
    if tamper.kind == "inflate_value_resign":
        if not isinstance(r, PoTRecord):
            raise InputError("inflate_value_resign targets a receipt")
        recs[j - 1] = replace(r, v=r.v + one)
        recs = rechain(recs, j, led.treasury_key, adv_provider, led.registry)
        return _resnapshot(recs, led.registry, led.treasury_pk)
    if tamper.kind == "insert_inbound":
        t = r.t
        recs = _shift_times(recs, j, 1)
        fake = TreasuryEvent(t, "ext", "cold", one, rng.randbytes(32), {"kind": "acquisition"})
        placeholder = make_receipt(bytes(32), fake, j, led.treasury_key, adv_provider)
        recs.insert(j - 1, placeholder)
        recs = rechain(recs, j, led.treasury_key, adv_provider, led.registry)
        return _resnapshot(recs, led.registry, led.treasury_pk)
    if tamper.kind == "inflate_total":
        if not isinstance(r, PoRSnapshot):
            raise InputError("inflate_total targets a snapshot")
        totals = dict(r.totals)
        totals["cold"] += one
        recs[j - 1] = replace(r, totals=totals)
        return recs
    if tamper.kind == "fake_coin":
        if not isinstance(r, PoRSnapshot):
            raise InputError("fake_coin targets a snapshot")
        coins = list(r.coins) + [CoinRecord("fake:0", one, led.treasury_pk, "cold")]
        recs[j - 1] = snapshot(coins, r.t, led.registry)
        return recs
    if tamper.kind == "inflate_coin":
        if not isinstance(r, PoRSnapshot):
            raise InputError("inflate_coin targets a snapshot")
        coins = [replace(c, value=c.value + one) if i == 0 else c for i, c in enumerate(r.coins)]
        recs[j - 1] = snapshot(coins, r.t, led.registry)
        return recs
    raise InputError(f"unknown tamper kind {tamper.kind!r}")


def _resnapshot(recs: list, registry: DomainRegistry, owner: bytes) -> list:
    """Make every snapshot agree with the (tampered) event fold."""
    bal = {d: 0 for d in registry.reserve_domains()}
    out = []
    for r in recs:
        if isinstance(r, PoTRecord):
            if r.src in bal:
                bal[r.src] -= r.v
            if r.dst in bal:
                bal[r.dst] += r.v
        elif isinstance(r, PoRSnapshot):
            try:
                r = snapshot(coins_for_balances(bal, registry, owner, f"adv{r.t}"), r.t, registry)
            except InvalidCoin:
                pass  # no honest-looking coin set realises a negative balance; keep the original
        out.append(r)
    return out


TAMPER_KINDS = {
    PoTRecord: ("inflate_value", "inflate_value_resign", "insert_inbound"),
    PoRSnapshot: ("inflate_total", "fake_coin", "inflate_coin"),
}

EXPECTED_CASE = {
    "inflate_value": Evidence.POT_DISCREPANCY,
    "inflate_value_resign": Evidence.POT_DISCREPANCY,
    "insert_inbound": Evidence.POT_DISCREPANCY,
    "inflate_total": Evidence.POR_DISCREPANCY,
    "fake_coin": Evidence.POR_DISCREPANCY,
    "inflate_coin": Evidence.POR_DISCREPANCY,
}


def all_tampers(w: World) -> list[Tamper]:
    n = w.ledger.anchors[-1].anchored_index
    out = []
    for j, r in enumerate(w.ledger.records[:n], start=1):
        for kind in TAMPER_KINDS.get(type(r), ()):
            out.append(Tamper(kind, j, True))
            out.append(Tamper(kind, j, False))
    return out


def expected_case(t: Tamper) -> Evidence:
    return EXPECTED_CASE[t.kind] if t.reanchor else Evidence.COMMITMENT_MISMATCH


def _claimed_exposure(view: View, records: Sequence, d0: Iterable[str]) -> int:
    d0 = set(d0)
    claims = [r[3] for r in view.table if r[2] == "B_tot"]
    best = max(claims) if claims else 0
    snaps = [r for r in records if isinstance(r, PoRSnapshot)]
    if snaps:
        best = max(best, sum(v for d, v in snaps[-1].totals.items() if d in d0))
    return best


def exp_sound_trial(w: World, tamper: Tamper, d0: Sequence[str], rng: random.Random) -> TrialResult:
    led = w.ledger
    pp = w.pp
    pol = exposure_policy(d0)
    n = led.anchors[-1].anchored_index
    true_total = sum(v for d, v in reserve_balances(
        _fold_prefix(led.records[:n], led.registry), led.registry).items() if d in set(d0))
    adv_provider = KeyPair.from_seed(rng.randbytes(32))
    forged = apply_tamper(w, tamper, rng, adv_provider)
    # the adversary publishes on its own substrate instead of the honest ledger
    adv_chain = SimChain(k=pp.k, seed=rng.randbytes(8))
    if tamper.reanchor:
        txid = publish(forged, pp, adv_chain)
    else:
        txid = publish(led.records[:n], pp, adv_chain)
    view = make_view(pol, forged, pp, txid)
    verdict = verify_view(view, pol, adv_chain, pp, coins=w.coins)
    claimed = _claimed_exposure(view, forged, d0)
    inflated = claimed > true_total
    if verdict and inflated:
        return TrialResult(True, Evidence.HASH_COLLISION, _first_diff(led.records[:n], forged), "inflated view verifies")
    return TrialResult(False, evidence_of(verdict), _locus(verdict, led.records[:n], forged), str(verdict))


def _fold_prefix(records: Sequence, registry: DomainRegistry) -> ExposureVector:
    return fold_events(ExposureVector.zero(registry), [r.event for r in records if isinstance(r, PoTRecord)], registry)


def run_exp_sound_restricted(
    adversary: Adversary,
    d0: Sequence[str] = ("cold", "exch", "coll"),
    interval: tuple[int, int] = (2, 5),
    trials: int = 1,
    seed: int = 0,
) -> ExperimentOutcome:
    """Strategies: a tamper kind (``inflate_total``...), ``exhaustive`` (every
    tamper at every position), or ``undeclared_domain``."""
    out = ExperimentOutcome(Game.EXP_SOUND_RESTRICTED, adversary.id)
    for trial in range(trials):
        rng = random.Random(f"exp/{seed}/{trial}")
        w = toy_world()
        closed = is_closed(d0, w.events, interval, w.ledger.registry.fee)
        if not closed:
            raise InputError(f"{sorted(d0)} is not closed on {interval}: {closed.violation}")
        if adversary.strategy == "undeclared_domain":
            out.trials.append(_undeclared_domain_trial(rng, d0))
            out.notes.append(
                "domain-completeness counterexample: value moved to an undeclared venue is "
                "reported as an outflow, so the restricted game is not won while true "
                "exposure is misreported"
            )
            continue
        if adversary.strategy == "exhaustive":
            tampers = all_tampers(w)
        else:
            pos = adversary.params.get("position")
            tampers = [t for t in all_tampers(w) if t.kind == adversary.strategy
                       and (pos is None or t.position == int(pos))
                       and t.reanchor == bool(adversary.params.get("reanchor", True))]
            if not tampers:
                raise InputError(f"no applicable tamper for {adversary.strategy!r}")
        for t in tampers:
            res = exp_sound_trial(w, t, d0, rng)
            out.trials.append(replace(res, detail=f"{t.kind}@{t.position} reanchor={t.reanchor}: {res.detail}"))
    return out


def _undeclared_domain_trial(rng: random.Random, d0: Sequence[str]) -> TrialResult:
    """The treasury keeps controlling 25 BTC it moved to a venue it
    registered as EXTERNAL. Every check passes and the ledger under-reports;
    the restricted game only counts overstatement, so this is no win."""
    w = toy_world()
    led = w.ledger
    led.append_event(TreasuryEvent(6, "exch", "ext", btc(5), rng.randbytes(32), {"kind": "transfer", "venue": "shadow"}))
    coins = _snapshot_coins(led, "shadow")
    led.snapshot_trigger(coins, t=7)
    anchor_now(led, w.chain)
    pol = exposure_policy(d0)
    led.register_policy(pol)
    view = gen_view(led, pol)
    verdict = verify_view(view, pol, w.chain, led.public_params)
    reported = view.value("*", "B_tot")
    actually_controlled = reported + btc(5)
    return TrialResult(
        False, evidence_of(verdict), None,
        f"view {verdict}; reported {reported} sat, controlled {actually_controlled} sat",
    )


# ---------------------------------------------------------------------------
# policy completeness for the history policy
# ---------------------------------------------------------------------------


def _omit_table_row(w: World, pol: Policy, j: int, rng):
    n = w.ledger.anchors[-1].anchored_index
    view = make_view(pol, w.ledger.records[:n], w.pp, w.ledger.anchors[-1].txid)
    rec = w.ledger.records[j - 1]
    row = (rec.t, pol.label(rec.src), pol.label(rec.dst), rec.v, rec.meta.get("kind", ""))
    table = list(view.table)
    table.remove(row)
    return replace(view, table=tuple(table)), w.chain


def _omit_record(w: World, pol: Policy, j: int, rng, resign: bool):
    n = w.ledger.anchors[-1].anchored_index
    recs = list(w.ledger.records[:n])
    del recs[j - 1]
    if not resign:
        return make_view(pol, recs, w.pp, w.ledger.anchors[-1].txid), w.chain
    # Re-sign the tail with a key of the adversary's choosing, repair the
    # snapshots, pad back to length n and race an anchor onto the public chain.
    adv_provider = KeyPair.from_seed(rng.randbytes(32))
    recs = rechain(recs, j, w.ledger.treasury_key, adv_provider, w.pp.registry)
    pad = snapshot([], as_of_time(recs) + 1, w.pp.registry)
    recs = _resnapshot(recs + [pad], w.pp.registry, w.pp.treasury_pk)
    chain = SimChain.from_json(w.chain.to_json())
    txid = publish(recs, w.pp, chain)
    return make_view(pol, recs, w.pp, txid), chain


POLCOMP_STRATEGIES: dict[str, Callable] = {
    "omit_row": _omit_table_row,
    "omit_record": lambda w, pol, j, rng: _omit_record(w, pol, j, rng, resign=False),
    "omit_record_resign": lambda w, pol, j, rng: _omit_record(w, pol, j, rng, resign=True),
}


def _omits_visible(view: View, honest_events: Sequence[TreasuryEvent], pol: Policy, t_i: int) -> bool:
    shown = {(r[0], r[3]) for r in view.table}
    for e in honest_events:
        if e.t <= t_i - pol.delay and pol.admits(e) and (e.t, e.v) not in shown:
            return True
    return False


def _pol_comp_trial(view: View, chain: SimChain, w: World, pol: Policy, n: int, locus: int | None) -> TrialResult:
    """Score one candidate view against the honest prefix of length ``n``
    and the public anchors on ``chain``."""
    verdict = verify_view(view, pol, chain, w.pp)
    if verdict and view.as_of != n:
        return TrialResult(False, Evidence.NONE, locus, f"view is for prefix {view.as_of}, not {n}")
    t_i = as_of_time(w.ledger.records[:n])
    won = bool(verdict) and _omits_visible(view, w.events, pol, t_i)
    return TrialResult(won, evidence_of(verdict), verdict.index or locus, str(verdict))


def polcomp_world(rng: random.Random, n_events: int, cfg: LivenessConfig | None = None) -> World:
    reg = random_registry(rng, rng.randint(2, 5))
    led = Ledger.setup(reg, seed=rng.randbytes(32), k=3)
    chain = SimChain(k=3, seed=rng.randbytes(8))
    events = [replace(e, t=2 * i) for i, e in enumerate(random_events(rng, reg, n_events), start=1)]
    cfg = cfg or LivenessConfig(1, 8, 4 * n_events + 8)
    # events occupy even ticks, so a snapshot due on one waits a tick
    sched = Scheduler(led, chain, snap_every=cfg.d_snap - 2, anchor_every=cfg.d_anchor)
    end = events[-1].t + 1 if events else 1
    trace = sched.run(events, end)
    anchor_now(led, chain)
    if not check_liveness(trace, cfg):
        raise InputError("honest schedule is not admissible")
    coins = [c for r in led.records if isinstance(r, PoRSnapshot) for c in r.coins]
    return World(led, chain, CoinRegistry.from_coins(coins), events)


def run_pol_comp(
    adversary: Adversary,
    trials: int = 1,
    seed: int = 0,
    max_events: int = 32,
    world: World | None = None,
) -> ExperimentOutcome:
    """Every trial builds a ledger and tries to omit each visible event in turn."""
    strat = POLCOMP_STRATEGIES.get(adversary.strategy)
    if strat is None and adversary.strategy != "honest":
        raise InputError(f"unknown POL_COMP strategy {adversary.strategy!r}")
    out = ExperimentOutcome(Game.POL_COMP, adversary.id)
    for trial in range(trials):
        rng = random.Random(f"pol/{seed}/{trial}")
        w = world or polcomp_world(rng, rng.randint(1, max_events))
        pol = history_policy(adversary.params.get("domains"))
        n = w.ledger.anchors[-1].anchored_index
        if adversary.strategy == "honest":
            view = make_view(pol, w.ledger.records[:n], w.pp, w.ledger.anchors[-1].txid)
            out.trials.append(_pol_comp_trial(view, w.chain, w, pol, n, None))
            continue
        for j, rec in enumerate(w.ledger.records[:n], start=1):
            if not isinstance(rec, PoTRecord) or not pol.admits(rec.event):
                continue
            view, chain = strat(w, pol, j, rng)
            out.trials.append(_pol_comp_trial(view, chain, w, pol, n, j))
    return out


# ---------------------------------------------------------------------------
# view correctness: honest views verify, single-field mutations do not
# ---------------------------------------------------------------------------


def random_policy(rng: random.Random, registry: DomainRegistry, policy_id: str = "rand") -> Policy:
    """Random declarative policy over ``registry`` (no delay, so the honest
    view at the anchored prefix shows every admitted event)."""
    modelled = registry.modelled()
    pick = lambda xs: tuple(rng.sample(xs, rng.randint(1, len(xs))))  # noqa: E731
    return Policy(
        policy_id,
        observer=rng.choice(("public", "regulator", "auditor")),
        aggregate=rng.choice(("balance", "summary", "flow", "history")),
        domains=pick(modelled) if rng.random() < 0.5 else None,
        kinds=pick(["transfer", "fee", "trade", "collateral"]) if rng.random() < 0.3 else None,
        labels={d: f"L{d}" for d in modelled if rng.random() < 0.3},
        encumbered=pick(modelled) if rng.random() < 0.5 else (),
        bucket=rng.choice((0, 0, 4, 16)),
        min_abs=rng.choice((0, 0, BTC // 10)),
        min_bps=rng.choice((0, 0, 50)),
    )


def view_mutations(view: View, rng: random.Random) -> list[tuple[str, View]]:
    """One mutation per view field, each changing exactly that field."""
    flip = lambda b: bytes([b[0] ^ 1]) + b[1:]  # noqa: E731
    out = [
        ("policy_id", replace(view, policy_id=view.policy_id + "x")),
        ("as_of", replace(view, as_of=view.as_of + rng.choice((-1, 1)))),
        ("as_of_time", replace(view, as_of_time=view.as_of_time + 1)),
        ("commitment", replace(view, commitment=flip(view.commitment))),
        ("anchor_txid", replace(view, anchor_txid=flip(view.anchor_txid))),
    ]
    table = list(view.table)
    if table:
        i = rng.randrange(len(table))
        row = list(table[i])
        j = max(k for k, x in enumerate(row) if isinstance(x, int) and not isinstance(x, bool))
        row[j] += 1
        table[i] = tuple(row)
    else:
        table = [(0, "*", "B_tot", 1)]
    out.append(("table", replace(view, table=tuple(table))))
    if view.records:
        recs = list(view.records)
        i = rng.randrange(len(recs))
        r = recs[i]
        if isinstance(r, PoTRecord):
            recs[i] = replace(r, v=r.v + 1)
        elif isinstance(r, PoRSnapshot):
            recs[i] = replace(r, t=r.t + 1)
        else:
            recs[i] = replace(r, height=r.height + 1)
        out.append(("records", replace(view, records=tuple(recs))))
    return out


@dataclass
class ViewCorrectness:
    pairs: int = 0
    honest_rejected: int = 0
    mutations: int = 0
    mutations_accepted: int = 0
    failures: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.honest_rejected == 0 and self.mutations_accepted == 0


def run_view_correctness(pairs: int, seed: int = 0, max_records: int = 32) -> ViewCorrectness:
    res = ViewCorrectness()
    for trial in range(pairs):
        rng = random.Random(f"viewcorr/{seed}/{trial}")
        n_events = rng.randint(1, max_records // 2)
        w = random_world(rng, n_events, rng.randint(2, 6), n_snapshots=rng.randint(0, 3))
        pol = random_policy(rng, w.ledger.registry)
        w.ledger.register_policy(pol)
        view = gen_view(w.ledger, pol)
        res.pairs += 1
        if not verify_view(view, pol, w.chain, w.pp):
            res.honest_rejected += 1
            res.failures.append(f"trial {trial}: honest view rejected")
            continue
        for name, bad in view_mutations(view, rng):
            res.mutations += 1
            if verify_view(bad, pol, w.chain, w.pp):
                res.mutations_accepted += 1
                res.failures.append(f"trial {trial}: mutated {name} accepted")
    return res


# ---------------------------------------------------------------------------
# cross-institution supply consistency
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SupplyCheck:
    consistent: bool
    total: int
    bound: int
    detail: str = ""

    def __bool__(self) -> bool:
        return self.consistent


def aggregate_supply_check(claims: Sequence[int], circulating: int, eps: int) -> SupplyCheck:
    """Claims are per-institution exposures (satoshis) taken from verified
    views. Joint coverage without double counting is the caller's assertion."""
    if circulating < 0 or eps < 0:
        raise InputError("circulating supply and tolerance must be non-negative")
    total = sum(claims)
    bound = min(circulating + eps, SUPPLY_CAP)
    if total > SUPPLY_CAP:
        return SupplyCheck(False, total, bound, "claims exceed the 21M BTC cap")
    if total > circulating + eps:
        return SupplyCheck(False, total, bound, "claims exceed circulating supply plus tolerance")
    return SupplyCheck(True, total, bound)


def claim_from_view(view: View) -> int:
    """B_tot of the latest bucket of a summary view."""
    rows = [r for r in view.table if len(r) == 4 and r[2] == "B_tot"]
    if not rows:
        raise InputError(f"view {view.policy_id!r} carries no B_tot row")
    return max(rows, key=lambda r: r[0])[3]


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    game: Game
    adversary: Adversary
    trials: int
    seed: int
    broken_hash: bool = False


def parse_manifest(text: str) -> list[ManifestEntry]:
    """Blocks of ``key = value`` lines separated by blank lines::

        game = NEQ
        adversary = edit_value_keep_digest
        trials = 1000
        seed = 7
        hash = broken          # optional, NEQ only
        param.leaked_keys = 1  # strategy parameters
    """
    entries = []
    for block in _blocks(text):
        try:
            game = Game(block.pop("game").upper())
            strategy = block.pop("adversary")
        except KeyError as exc:
            raise InputError(f"manifest block lacks {exc}") from None
        except ValueError as exc:
            raise InputError(str(exc)) from None
        params = {k[6:]: v for k, v in block.items() if k.startswith("param.")}
        adv = Adversary(block.get("id", strategy), strategy, params)
        try:
            trials = int(block.get("trials", "1"))
            seed = int(block.get("seed", "0"))
        except ValueError:
            raise InputError("trials and seed must be integers") from None
        hash_name = block.get("hash", "sha256")
        if hash_name not in ("sha256", "broken"):
            raise InputError(f"unknown hash {hash_name!r}")
        entries.append(ManifestEntry(game, adv, trials, seed, hash_name == "broken"))
    return entries


def _blocks(text: str) -> list[dict[str, str]]:
    blocks, cur = [], {}
    for raw in text.splitlines() + [""]:
        line = raw.split("#", 1)[0].strip()
        if not line:
            if cur:
                blocks.append(cur)
                cur = {}
            continue
        if "=" not in line:
            raise InputError(f"manifest line {raw!r} is not 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        cur[k] = v
    return blocks


def run_entry(entry: ManifestEntry) -> ExperimentOutcome:
    adv = entry.adversary
    if entry.game is Game.NEQ:
        return run_neq(adv, entry.trials, entry.seed, entry.broken_hash)
    if entry.game is Game.POT_FORGE:
        return run_pot_forge(adv, entry.trials, entry.seed)
    if entry.game is Game.EXP_SOUND_RESTRICTED:
        return run_exp_sound_restricted(adv, trials=entry.trials, seed=entry.seed)
    if entry.game is Game.POL_COMP:
        return run_pol_comp(adv, entry.trials, entry.seed)
    raise InputError(f"game {entry.game.value} has no executable harness")


def format_outcome(o: ExperimentOutcome, per_trial: bool = False) -> str:
    lines = [o.summary_line()]
    lines += [f"note {n}" for n in dict.fromkeys(o.notes)]
    if per_trial:
        for i, t in enumerate(o.trials):
            lines.append(f"trial {i} won={int(t.won)} evidence={t.evidence.value} locus={t.locus} {t.detail}")
    return "\n".join(lines)


def run_manifest(path: str | Path) -> list[ExperimentOutcome]:
    return [run_entry(e) for e in parse_manifest(Path(path).read_text())]
