"""Declarative disclosure policies, view generation and view verification.

A policy is plain data. Evaluating it over a ledger prefix runs, in order:

1. filter: domain whitelist (an event is kept if either endpoint is listed)
   and event kinds (metadata key ``kind``);
2. delay: keep events with ``t <= as_of_time - delay``;
3. relabel: map domain ids to observer-facing labels;
4. bucket: half-open windows ``[k*w, (k+1)*w)`` of logical time (``w = 0``
   means a single bucket numbered 0);
5. materiality: drop events with ``|v| < min_abs`` or with ``v`` below
   ``min_bps`` basis points of the reference total (the absolute flow of
   the events that survived steps 1-2);
6. aggregate: ``balance``, ``summary``, ``flow`` or ``history``.

Every output depends only on the surviving event subsequence and the
as-of time, never on hidden events.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .anchor import SimChain
from .crypto import canonical_serialize, decode_one
from .errors import DecodeError, InputError, LedgerError, UnknownPolicy
from .ledger import AuditCheck, Ledger, PublicParams, audit_records, canonical_anchor, commitments_of
from .por import CoinRegistry, check_existence_ownership
from .pot import PoTRecord
from .state import DomainRegistry, TreasuryEvent, format_btc

AGGREGATES = ("balance", "summary", "flow", "history")


@dataclass(frozen=True)
class Policy:
    policy_id: str
    observer: str = "public"
    aggregate: str = "balance"
    domains: tuple[str, ...] | None = None
    kinds: tuple[str, ...] | None = None
    labels: Mapping[str, str] = field(default_factory=dict)
    scope: tuple[str, ...] | None = None
    encumbered: tuple[str, ...] = ()
    bucket: int = 0
    delay: int = 0
    min_abs: int = 0
    min_bps: int = 0

    def __post_init__(self) -> None:
        if self.aggregate not in AGGREGATES:
            raise InputError(f"unknown aggregate {self.aggregate!r}")
        if min(self.bucket, self.delay, self.min_abs, self.min_bps) < 0:
            raise InputError("bucket, delay and materiality thresholds must be non-negative")
        for name in ("domains", "kinds", "scope"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple(sorted(set(val))))
        object.__setattr__(self, "encumbered", tuple(sorted(set(self.encumbered))))
        object.__setattr__(self, "labels", dict(sorted(self.labels.items())))

    def __hash__(self) -> int:
        return hash(self.to_text())

    # -- predicates -----------------------------------------------------------

    def admits(self, e: TreasuryEvent) -> bool:
        """Static part of the filter (no delay, no materiality)."""
        if self.domains is not None and e.src not in self.domains and e.dst not in self.domains:
            return False
        if self.kinds is not None and e.meta.get("kind", "") not in self.kinds:
            return False
        return True

    def label(self, did: str) -> str:
        return self.labels.get(did, did)

    # -- text form ------------------------------------------------------------

    def to_text(self) -> str:
        def lst(v):
            return "*" if v is None else ",".join(v)

        lines = [
            f"policy_id = {self.policy_id}",
            f"observer = {self.observer}",
            f"aggregate = {self.aggregate}",
            f"domains = {lst(self.domains)}",
            f"kinds = {lst(self.kinds)}",
            f"labels = {','.join(f'{k}:{v}' for k, v in self.labels.items())}",
            f"scope = {lst(self.scope)}",
            f"encumbered = {','.join(self.encumbered)}",
            f"bucket = {self.bucket}",
            f"delay = {self.delay}",
            f"min_abs = {self.min_abs}",
            f"min_bps = {self.min_bps}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Policy":
        kv: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"policy line {lineno}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            kv[k] = v

        def lst(key):
            v = kv.get(key, "*")
            if v == "*":
                return None
            return tuple(x.strip() for x in v.split(",") if x.strip())

        def num(key):
            try:
                return int(kv.get(key, "0"))
            except ValueError:
                raise InputError(f"policy field {key} must be an integer") from None

        labels = {}
        for pair in filter(None, (p.strip() for p in kv.get("labels", "").split(","))):
            if ":" not in pair:
                raise InputError(f"bad label mapping {pair!r}")
            d, lab = pair.split(":", 1)
            labels[d.strip()] = lab.strip()
        if "policy_id" not in kv:
            raise InputError("policy needs a policy_id")
        unknown = set(kv) - {
            "policy_id", "observer", "aggregate", "domains", "kinds", "labels", "scope",
            "encumbered", "bucket", "delay", "min_abs", "min_bps",
        }
        if unknown:
            raise InputError(f"unknown policy keys: {', '.join(sorted(unknown))}")
        return cls(
            policy_id=kv["policy_id"],
            observer=kv.get("observer", "public"),
            aggregate=kv.get("aggregate", "balance"),
            domains=lst("domains"),
            kinds=lst("kinds"),
            labels=labels,
            scope=lst("scope"),
            encumbered=lst("encumbered") or (),
            bucket=num("bucket"),
            delay=num("delay"),
            min_abs=num("min_abs"),
            min_bps=num("min_bps"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Policy":
        return cls.from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# stock policies
# ---------------------------------------------------------------------------


def public_investor_policy(registry: DomainRegistry, delay: int = 0) -> Policy:
    return Policy("public_investor", "public", "summary", encumbered=tuple(registry.encumbered()), delay=delay)


def regulator_policy(registry: DomainRegistry, delay: int = 0) -> Policy:
    return Policy("regulator", "regulator", "balance", encumbered=tuple(registry.encumbered()), delay=delay)


def history_policy(domains: Iterable[str] | None = None, delay: int = 0, policy_id: str = "history") -> Policy:
    return Policy(policy_id, "auditor", "history", domains=None if domains is None else tuple(domains), delay=delay)


def exposure_policy(d0: Iterable[str], policy_id: str = "exposure") -> Policy:
    return Policy(policy_id, "auditor", "summary", scope=tuple(d0))


def stock_policies(registry: DomainRegistry) -> dict[str, Policy]:
    ps = [public_investor_policy(registry), regulator_policy(registry), history_policy()]
    return {p.policy_id: p for p in ps}


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

Row = tuple


def as_of_time(records: Sequence[object]) -> int:
    for rec in reversed(records):
        t = getattr(rec, "t", None)
        if t is not None:
            return t
    return 0


def visible_events(policy: Policy, events: Sequence[TreasuryEvent], as_of_t: int) -> list[TreasuryEvent]:
    """Events surviving filter, delay and materiality, in ledger order."""
    cutoff = as_of_t - policy.delay
    kept = [e for e in events if policy.admits(e) and e.t <= cutoff]
    ref = sum(abs(e.v) for e in kept)
    return [
        e for e in kept
        if abs(e.v) >= policy.min_abs and abs(e.v) * 10_000 >= policy.min_bps * ref
    ]


def _bucket(policy: Policy, t: int) -> int:
    return t // policy.bucket * policy.bucket if policy.bucket else 0


def evaluate(policy: Policy, events: Sequence[TreasuryEvent], as_of_t: int, registry: DomainRegistry) -> tuple[Row, ...]:
    vis = visible_events(policy, events, as_of_t)
    if policy.aggregate == "history":
        return tuple((e.t, policy.label(e.src), policy.label(e.dst), e.v, e.meta.get("kind", "")) for e in vis)

    scope = [d for d in registry.reserve_domains() if policy.scope is None or d in policy.scope]
    in_scope = set(scope)
    enc = set(policy.encumbered)

    if policy.aggregate == "flow":
        flows: dict[tuple[int, str, str], int] = {}
        for e in vis:
            b = _bucket(policy, e.t)
            if e.src in in_scope:
                key = (b, policy.label(e.src), "out")
                flows[key] = flows.get(key, 0) + e.v
            if e.dst in in_scope:
                key = (b, policy.label(e.dst), "in")
                flows[key] = flows.get(key, 0) + e.v
        return tuple(sorted((b, lab, m, v) for (b, lab, m), v in flows.items()))

    # balance / summary: cumulative fold, reported at the end of every bucket
    # that holds a visible event (or once, in bucket 0, when unbucketed)
    bal = {d: 0 for d in scope}
    marks: list[tuple[int, dict[str, int]]] = []
    for e in vis:
        b = _bucket(policy, e.t)
        if e.src in bal:
            bal[e.src] -= e.v
        if e.dst in bal:
            bal[e.dst] += e.v
        if marks and marks[-1][0] == b:
            marks[-1] = (b, dict(bal))
        else:
            marks.append((b, dict(bal)))
    if not policy.bucket:
        marks = [(0, dict(bal))] if vis else []

    rows: list[Row] = []
    for b, snap in marks:
        if policy.aggregate == "summary":
            rows.append((b, "*", "B_tot", sum(snap.values())))
            rows.append((b, "*", "B_enc", sum(v for d, v in snap.items() if d in enc)))
        else:
            by_label: dict[str, int] = {}
            flag: dict[str, int] = {}
            for d, v in snap.items():
                lab = policy.label(d)
                by_label[lab] = by_label.get(lab, 0) + v
                flag[lab] = max(flag.get(lab, 0), int(d in enc))
            for lab in sorted(by_label):
                rows.append((b, lab, "balance", by_label[lab]))
                rows.append((b, lab, "encumbered", flag[lab]))
    return tuple(rows)


# ---------------------------------------------------------------------------
# views
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class View:
    policy_id: str
    as_of: int
    as_of_time: int
    table: tuple[Row, ...]
    records: tuple
    commitment: bytes
    anchor_txid: bytes

    def rows(self, metric: str | None = None) -> list[Row]:
        return [r for r in self.table if metric is None or (len(r) > 2 and r[2] == metric)]

    def value(self, label: str, metric: str, bucket: int = 0) -> int:
        for r in self.table:
            if r[0] == bucket and r[1] == label and r[2] == metric:
                return r[3]
        raise KeyError((bucket, label, metric))

    # -- bundle ---------------------------------------------------------------

    def to_text(self) -> str:
        lines = [
            f"policy_id = {self.policy_id}",
            f"as_of = {self.as_of}",
            f"as_of_time = {self.as_of_time}",
            f"commitment = {self.commitment.hex()}",
            f"anchor_txid = {self.anchor_txid.hex()}",
            f"rows = {len(self.table)}",
        ]
        lines += ["row " + json.dumps(list(r), separators=(",", ":")) for r in self.table]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        (path / "view.txt").write_text(self.to_text())
        with open(path / "records.tlv", "wb") as fh:
            for r in self.records:
                fh.write(base64.b64encode(canonical_serialize(r)) + b"\n")

    @classmethod
    def from_text(cls, text: str, records: tuple) -> "View":
        head: dict[str, str] = {}
        rows: list[Row] = []
        for line in text.splitlines():
            if line.startswith("row "):
                try:
                    rows.append(tuple(json.loads(line[4:])))
                except json.JSONDecodeError as exc:
                    raise DecodeError(f"bad view row {line!r}") from exc
            elif "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                head[k] = v
        try:
            view = cls(
                head["policy_id"],
                int(head["as_of"]),
                int(head["as_of_time"]),
                tuple(rows),
                records,
                bytes.fromhex(head["commitment"]),
                bytes.fromhex(head["anchor_txid"]),
            )
        except (KeyError, ValueError) as exc:
            raise DecodeError(f"incomplete view header: {exc}") from exc
        if int(head.get("rows", len(rows))) != len(rows):
            raise DecodeError("row count does not match header")
        return view

    @classmethod
    def load(cls, path: str | Path) -> "View":
        path = Path(path)
        records = []
        try:
            text = (path / "view.txt").read_text()
            raw_lines = (path / "records.tlv").read_bytes().splitlines()
        except FileNotFoundError as exc:
            raise InputError(f"incomplete view bundle: {exc.filename}") from None
        for line in raw_lines:
            if line.strip():
                raw = base64.b64decode(line.strip(), validate=True)
                rec, end = decode_one(raw, 0)
                if end != len(raw):
                    raise DecodeError("trailing octets in bundled record")
                records.append(rec)
        return cls.from_text(text, tuple(records))


def _resolve(ledger: Ledger, policy: Policy | str) -> Policy:
    pid = policy if isinstance(policy, str) else policy.policy_id
    registered = ledger.policies.get(pid)
    if registered is None or (not isinstance(policy, str) and registered != policy):
        raise UnknownPolicy(f"policy {pid!r} is not in the ledger catalogue")
    return registered


def gen_view(ledger: Ledger, policy: Policy | str, as_of: int | None = None) -> View:
    """Project the prefix of length ``as_of`` (default: the latest anchored
    prefix, or the whole ledger if nothing is anchored yet)."""
    pol = _resolve(ledger, policy)
    if as_of is None:
        as_of = ledger.latest_anchored_index()
        if as_of is None:
            as_of = len(ledger)
    if not 0 <= as_of <= len(ledger):
        raise InputError(f"as_of {as_of} outside [0, {len(ledger)}]")
    records = tuple(ledger.records[:as_of])
    t = as_of_time(records)
    events = [r.event for r in records if isinstance(r, PoTRecord)]
    meta = ledger.anchor_for(as_of)
    return View(
        pol.policy_id,
        as_of,
        t,
        evaluate(pol, events, t, ledger.registry),
        records,
        ledger.commitment_at(as_of),
        meta.txid if meta else b"",
    )


def history_view(ledger: Ledger, policy: Policy | str = "history", as_of: int | None = None) -> View:
    pol = _resolve(ledger, policy)
    if pol.aggregate != "history":
        raise InputError(f"policy {pol.policy_id!r} is not a history policy")
    return gen_view(ledger, pol, as_of)


class RejectReason(str, Enum):
    POLICY_MISMATCH = "POLICY_MISMATCH"
    MALFORMED = "MALFORMED"
    POT_INVALID = "POT_INVALID"
    EVENT_INVALID = "EVENT_INVALID"
    POR_INVALID = "POR_INVALID"
    POR_EXISTENCE = "POR_EXISTENCE"
    ANCHOR_META_MISMATCH = "ANCHOR_META_MISMATCH"
    COMMITMENT_MISMATCH = "COMMITMENT_MISMATCH"
    ANCHOR_DEPTH = "ANCHOR_DEPTH"
    RECOMPUTE_MISMATCH = "RECOMPUTE_MISMATCH"


_AUDIT_REASON = {
    AuditCheck.INDEX: RejectReason.MALFORMED,
    AuditCheck.POT: RejectReason.POT_INVALID,
    AuditCheck.EVENT: RejectReason.EVENT_INVALID,
    AuditCheck.POR: RejectReason.POR_INVALID,
    AuditCheck.ANCHOR_META: RejectReason.ANCHOR_META_MISMATCH,
}


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: RejectReason | None = None
    index: int | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.accepted

    def __str__(self) -> str:
        if self.accepted:
            return "accept"
        where = f" at record {self.index}" if self.index is not None else ""
        return f"reject {self.reason.value}{where}: {self.detail}"


def _reject(reason: RejectReason, detail: str = "", index: int | None = None) -> Verdict:
    return Verdict(False, reason, index, detail)


def verify_view(
    view: View,
    policy: Policy,
    chain: SimChain,
    pp: PublicParams,
    coins: CoinRegistry | None = None,
) -> Verdict:
    """Accept iff the bundled records hash to the canonical anchor at depth k,
    replay cleanly (receipts, snapshots, anchor metadata) and the policy
    reproduces the table. Checks run in that order."""
    if view.policy_id != policy.policy_id:
        return _reject(RejectReason.POLICY_MISMATCH, f"view is for {view.policy_id!r}")
    if view.as_of != len(view.records):
        return _reject(RejectReason.MALFORMED, f"as_of {view.as_of} but {len(view.records)} records")

    try:
        c_n = commitments_of(canonical_serialize(r) for r in view.records)[view.as_of]
    except LedgerError as exc:
        return _reject(RejectReason.MALFORMED, str(exc))
    if view.commitment != c_n:
        return _reject(RejectReason.COMMITMENT_MISMATCH, "bundled commitment differs from recomputed C")
    anchor = canonical_anchor(chain, pp.tag, view.as_of, pp.k)
    if anchor is None:
        return _reject(RejectReason.ANCHOR_DEPTH, f"no anchor for n={view.as_of} with {pp.k} confirmations")
    if anchor.commitment != c_n:
        return _reject(RejectReason.COMMITMENT_MISMATCH, "anchored commitment differs from recomputed C")
    if anchor.txid != view.anchor_txid:
        return _reject(RejectReason.COMMITMENT_MISMATCH, "cited anchor is not the canonical anchor")

    audit = audit_records(view.records, pp)
    if audit.failure is not None:
        f = audit.failure
        return _reject(_AUDIT_REASON[f.check], f.detail, f.index)

    if coins is not None:
        for i in audit.snapshot_indices:
            res = check_existence_ownership(view.records[i - 1], coins, [pp.treasury_pk])
            if not res:
                return _reject(RejectReason.POR_EXISTENCE, f"{res.kind.value} coin {res.coin_id}", i)

    t = as_of_time(view.records)
    events = [r.event for r in view.records if isinstance(r, PoTRecord)]
    if t != view.as_of_time or evaluate(policy, events, t, pp.registry) != view.table:
        return _reject(RejectReason.RECOMPUTE_MISMATCH, "policy output differs from view table")
    return Verdict(True)


# ---------------------------------------------------------------------------
# leakage profile of the public-investor view
# ---------------------------------------------------------------------------


def leakage_pub(ledger: Ledger, intervals: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """(B_tot, B_enc) at the end of each (lo, hi] reporting interval."""
    reg = ledger.registry
    enc = set(reg.encumbered())
    reserve = reg.reserve_domains()
    events = ledger.events()
    out = []
    for _, hi in intervals:
        bal = {d: 0 for d in reserve}
        for e in events:
            if e.t > hi:
                break
            if e.src in bal:
                bal[e.src] -= e.v
            if e.dst in bal:
                bal[e.dst] += e.v
        out.append((sum(bal.values()), sum(v for d, v in bal.items() if d in enc)))
    return out


def render_table(view: View) -> str:
    """Human-readable table; amounts shown in BTC."""
    lines = [f"# view {view.policy_id} as of record {view.as_of} (t={view.as_of_time})"]
    for r in view.table:
        if len(r) == 4 and r[2] in ("balance", "B_tot", "B_enc", "in", "out"):
            lines.append(f"{r[0]:>8}  {r[1]:<16} {r[2]:<10} {format_btc(r[3])} BTC")
        elif len(r) == 5:
            lines.append(f"{r[0]:>8}  {r[1]} -> {r[2]}  {format_btc(r[3])} BTC  {r[4]}")
        else:
            lines.append("  ".join(str(x) for x in r))
    return "\n".join(lines)


def mutate_view(view: View, **changes) -> View:
    return replace(view, **changes)
