"""The append-only ledger: typed records, commitments, anchoring, persistence
and the liveness checker.

Records are PoT receipts, PoR snapshots and anchor metadata, numbered
densely from 1. The commitment after ``n`` records is

    C_n = H(LEDGER, bytes(rec_1) || ... || bytes(rec_n))

and is maintained incrementally, so appends cost O(1) hash work.

Anchor payload layout (52 octets)::

    b"TPL1" | ledger tag (8) | anchored record count (u64) | C_n (32)

where the ledger tag is the first 8 octets of H(ANCHOR_PAYLOAD, treasury_pk).
For a given ledger tag and count, the first confirmed anchor on the best
chain is the canonical one; later anchors for the same count are ignored.
"""

from __future__ import annotations

import base64
import fcntl
import json
import os
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .anchor import SimChain, TxStatus
from .crypto import (
    DIGEST_SIZE,
    ZERO_DIGEST,
    DomainTag,
    KeyPair,
    RecordTag,
    canonical_record,
    canonical_serialize,
    dec_int,
    decode_one,
    enc_int,
    incremental_hash,
    tagged_hash,
)
from .errors import (
    DecodeError,
    InputError,
    InvariantViolation,
    LedgerError,
    LedgerSealed,
    NonMonotoneTimestamp,
    SnapshotMismatch,
)
from .por import CoinRecord, PoRSnapshot, snapshot, snapshot_fault
from .pot import PoTRecord, check_links, check_receipt, make_receipt
from .state import (
    DomainRegistry,
    ExposureVector,
    TreasuryEvent,
    apply_event,
)

ANCHOR_MAGIC = b"TPL1"
ANCHOR_PAYLOAD_SIZE = 4 + 8 + 8 + DIGEST_SIZE


@canonical_record(RecordTag.ANCHOR_META)
@dataclass(frozen=True)
class AnchorMeta:
    """Finalised anchor of the commitment after ``anchored_index`` records."""

    anchored_index: int
    commitment: bytes
    txid: bytes
    height: int

    def _fields(self):
        return [
            (1, enc_int(self.anchored_index)),
            (2, self.commitment),
            (3, self.txid),
            (4, enc_int(self.height)),
        ]

    @classmethod
    def _from_fields(cls, f):
        return cls(dec_int(f[1]), f[2], f[3], dec_int(f[4]))


def commitments_of(encoded: Iterable[bytes]) -> list[bytes]:
    """[C_0, C_1, ..., C_n] for a sequence of canonical record encodings."""
    h = incremental_hash(DomainTag.LEDGER)
    out = [h.copy().digest()]
    for b in encoded:
        h.update(b)
        out.append(h.copy().digest())
    return out


def empty_commitment() -> bytes:
    return tagged_hash(DomainTag.LEDGER, b"")


# ---------------------------------------------------------------------------
# anchors
# ---------------------------------------------------------------------------


def ledger_tag(treasury_pk: bytes) -> bytes:
    return tagged_hash(DomainTag.ANCHOR_PAYLOAD, treasury_pk)[:8]


def anchor_payload(tag: bytes, n: int, commitment: bytes) -> bytes:
    return ANCHOR_MAGIC + tag + struct.pack(">Q", n) + commitment


def parse_anchor_payload(payload: bytes) -> tuple[bytes, int, bytes] | None:
    if len(payload) != ANCHOR_PAYLOAD_SIZE or not payload.startswith(ANCHOR_MAGIC):
        return None
    return payload[4:12], struct.unpack(">Q", payload[12:20])[0], payload[20:]


@dataclass(frozen=True)
class CanonicalAnchor:
    txid: bytes
    commitment: bytes
    height: int


def canonical_anchor(chain: SimChain, tag: bytes, n: int, k: int) -> CanonicalAnchor | None:
    """First anchor for (tag, n) confirmed at depth ``k`` on the best chain."""
    for block in chain.blocks:
        if chain.tip - block.height + 1 < k:
            break
        for tx in block.txs:
            parsed = parse_anchor_payload(tx.payload)
            if parsed and parsed[0] == tag and parsed[1] == n:
                return CanonicalAnchor(tx.txid, parsed[2], block.height)
    return None


@dataclass
class PendingAnchor:
    anchored_index: int
    commitment: bytes
    txid: bytes


# ---------------------------------------------------------------------------
# public parameters and full-prefix audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PublicParams:
    registry: DomainRegistry
    treasury_pk: bytes
    provider_pk: bytes
    k: int = 6

    @property
    def tag(self) -> bytes:
        return ledger_tag(self.treasury_pk)


class AuditCheck(str, Enum):
    INDEX = "INDEX"
    POT = "POT"
    EVENT = "EVENT"
    POR = "POR"
    ANCHOR_META = "ANCHOR_META"


@dataclass(frozen=True)
class AuditFailure:
    index: int
    check: AuditCheck
    detail: str


@dataclass
class Audit:
    """Result of replaying a record sequence from scratch."""

    failure: AuditFailure | None
    state: ExposureVector
    commitments: list[bytes]
    last_time: int = 0
    last_r: bytes = ZERO_DIGEST
    latest_snapshot: PoRSnapshot | None = None
    snapshot_indices: list[int] = field(default_factory=list)
    anchors: list[AnchorMeta] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failure is None


def reserve_balances(state: ExposureVector, registry: DomainRegistry) -> dict[str, int]:
    return {d: state[d] for d in registry.reserve_domains()}


def audit_records(
    records: Sequence[object],
    pp: PublicParams,
    check_signatures: bool = True,
    check_algebraic: bool = True,
) -> Audit:
    """Replay ``records``: PoT links and signatures, event semantics,
    snapshot consistency (including agreement with the event fold) and
    anchor-metadata commitments. Stops at the first failure."""
    reg = pp.registry
    state = ExposureVector.zero(reg)
    encoded = [canonical_serialize(r) for r in records]
    audit = Audit(None, state, commitments_of(encoded))

    def fail(i: int, check: AuditCheck, detail: str) -> Audit:
        audit.failure = AuditFailure(i, check, detail)
        audit.state = state
        return audit

    for i, rec in enumerate(records, start=1):
        if isinstance(rec, PoTRecord):
            if rec.index != i:
                return fail(i, AuditCheck.INDEX, f"receipt claims index {rec.index}")
            if check_signatures:
                cause = check_receipt(rec, audit.last_r, pp.treasury_pk, pp.provider_pk)
            else:
                cause = check_links(rec, audit.last_r)
            if cause is not None:
                return fail(i, AuditCheck.POT, cause.value)
            audit.last_r = rec.r
            try:
                state = apply_event(ExposureVector(state.balances, audit.last_time), rec.event, reg)
            except LedgerError as exc:
                return fail(i, AuditCheck.EVENT, f"{type(exc).__name__}: {exc}")
            audit.last_time = rec.t
        elif isinstance(rec, PoRSnapshot):
            if rec.t <= audit.last_time:
                return fail(i, AuditCheck.POR, "NonMonotoneTimestamp")
            try:
                fault = snapshot_fault(rec, reg)
            except LedgerError as exc:
                return fail(i, AuditCheck.POR, f"{type(exc).__name__}: {exc}")
            if fault is not None:
                return fail(i, AuditCheck.POR, fault.value)
            if check_algebraic and dict(rec.totals) != reserve_balances(state, reg):
                return fail(i, AuditCheck.POR, "ALGEBRAIC")
            audit.last_time = rec.t
            audit.latest_snapshot = rec
            audit.snapshot_indices.append(i)
        elif isinstance(rec, AnchorMeta):
            n = rec.anchored_index
            if not 0 <= n < i or audit.commitments[n] != rec.commitment:
                return fail(i, AuditCheck.ANCHOR_META, f"does not match C_{n}")
            audit.anchors.append(rec)
        else:
            return fail(i, AuditCheck.INDEX, f"unexpected record {type(rec).__name__}")
    audit.state = state
    return audit


# ---------------------------------------------------------------------------
# liveness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LivenessConfig:
    d_event: int
    d_snap: int
    d_anchor: int

    def __post_init__(self) -> None:
        if min(self.d_event, self.d_snap, self.d_anchor) <= 0:
            raise InputError("liveness bounds must be positive")

    @classmethod
    def parse(cls, text: str) -> "LivenessConfig":
        try:
            a, b, c = (int(x) for x in text.split(","))
        except ValueError:
            raise InputError(f"liveness must be 'd_event,d_snap,d_anchor', got {text!r}") from None
        return cls(a, b, c)

    def __str__(self) -> str:
        return f"{self.d_event},{self.d_snap},{self.d_anchor}"


class TraceKind(str, Enum):
    INPUT = "INPUT"  # event became known to the treasury
    LOGGED = "LOGGED"  # event appended to the ledger
    SNAPSHOT = "SNAPSHOT"
    ANCHOR = "ANCHOR"


@dataclass(frozen=True)
class TraceEntry:
    tick: int
    kind: TraceKind
    ref: str = ""


@dataclass
class Trace:
    start: int
    end: int
    entries: list[TraceEntry] = field(default_factory=list)

    def add(self, tick: int, kind: TraceKind, ref: str = "") -> None:
        self.entries.append(TraceEntry(tick, kind, ref))


@dataclass(frozen=True)
class LivenessResult:
    admissible: bool
    violation: str | None = None
    tick: int | None = None

    def __bool__(self) -> bool:
        return self.admissible


def check_liveness(trace: Trace, cfg: LivenessConfig) -> LivenessResult:
    entries = trace.entries
    if any(a.tick > b.tick for a, b in zip(entries, entries[1:])):
        raise InputError("trace entries are not time-ordered")
    found: list[tuple[int, str]] = []

    inputs: dict[str, int] = {}
    logged: dict[str, int] = {}
    for e in entries:
        if e.kind is TraceKind.INPUT:
            inputs.setdefault(e.ref, e.tick)
        elif e.kind is TraceKind.LOGGED:
            logged.setdefault(e.ref, e.tick)
    for ref, t_in in inputs.items():
        t_log = logged.get(ref)
        if t_log is None:
            if trace.end - t_in > cfg.d_event:
                found.append((t_in + cfg.d_event + 1, f"event {ref} not logged within {cfg.d_event}"))
        elif t_log - t_in > cfg.d_event:
            found.append((t_in + cfg.d_event + 1, f"event {ref} logged after {t_log - t_in} ticks"))

    for kind, bound in ((TraceKind.SNAPSHOT, cfg.d_snap), (TraceKind.ANCHOR, cfg.d_anchor)):
        marks = [trace.start] + [e.tick for e in entries if e.kind is kind] + [trace.end]
        for a, b in zip(marks, marks[1:]):
            if b - a > bound:
                found.append((a + bound + 1, f"{kind.value.lower()} gap of {b - a} ticks from {a}"))
                break

    if not found:
        return LivenessResult(True)
    tick, what = min(found)
    return LivenessResult(False, what, tick)


# ---------------------------------------------------------------------------
# the ledger
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerPrefix:
    records: tuple
    commitment: bytes

    def __len__(self) -> int:
        return len(self.records)


class Ledger:
    """Single-writer ledger state machine. Readers use :meth:`prefix`."""

    def __init__(
        self,
        registry: DomainRegistry,
        treasury_key: KeyPair | None,
        provider_key: KeyPair | None,
        k: int = 6,
        liveness: LivenessConfig | None = None,
        key_seed: bytes | None = None,
        treasury_pk: bytes | None = None,
        provider_pk: bytes | None = None,
    ) -> None:
        if k < 1:
            raise InputError("confirmation depth k must be positive")
        self.registry = registry
        self.treasury_key = treasury_key
        self.provider_key = provider_key
        self.k = k
        self.liveness = liveness
        self.key_seed = key_seed
        self.treasury_pk = treasury_key.public if treasury_key else treasury_pk
        self.provider_pk = provider_key.public if provider_key else provider_pk
        self.read_only = False
        self.records: list = []
        self._encoded: list[bytes] = []
        self._hasher = incremental_hash(DomainTag.LEDGER)
        self._commitments = [self._hasher.copy().digest()]
        self.state = ExposureVector.zero(registry)
        self.last_time = 0
        self.last_r = ZERO_DIGEST
        self.latest_snapshot: PoRSnapshot | None = None
        self.anchors: list[AnchorMeta] = []
        self.pending: list[PendingAnchor] = []
        self.policies: dict = {}
        self._path: Path | None = None
        self._persisted = 0

    # -- setup ----------------------------------------------------------------

    @classmethod
    def setup(
        cls,
        registry: DomainRegistry,
        seed: bytes | None = None,
        k: int = 6,
        liveness: LivenessConfig | None = None,
    ) -> "Ledger":
        """Fresh empty ledger with treasury and provider keys derived from ``seed``."""
        from .policy import stock_policies  # policy builds on this module

        seed = os.urandom(32) if seed is None else seed
        led = cls(
            registry,
            KeyPair.derive(seed, "treasury"),
            KeyPair.derive(seed, "provider"),
            k=k,
            liveness=liveness,
            key_seed=seed,
        )
        led.policies.update(stock_policies(registry))
        return led

    def register_policy(self, policy) -> None:
        """Add a policy to the catalogue; views can only be generated for
        catalogued policies. Re-registering an id replaces it."""
        self.policies[policy.policy_id] = policy

    @property
    def public_params(self) -> PublicParams:
        return PublicParams(self.registry, self.treasury_pk, self.provider_pk, self.k)

    # -- read side ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.records)

    @property
    def commitment(self) -> bytes:
        return self._commitments[-1]

    def commitment_at(self, n: int) -> bytes:
        return self._commitments[n]

    @property
    def commitments(self) -> list[bytes]:
        return list(self._commitments)

    def prefix(self, n: int | None = None) -> LedgerPrefix:
        n = len(self.records) if n is None else n
        return LedgerPrefix(tuple(self.records[:n]), self._commitments[n])

    def encoded(self, i: int) -> bytes:
        return self._encoded[i - 1]

    def events(self) -> list[TreasuryEvent]:
        return [r.event for r in self.records if isinstance(r, PoTRecord)]

    def latest_anchored_index(self) -> int | None:
        return self.anchors[-1].anchored_index if self.anchors else None

    def anchor_for(self, n: int) -> AnchorMeta | None:
        for a in self.anchors:
            if a.anchored_index == n:
                return a
        return None

    # -- write side -----------------------------------------------------------

    def _writable(self) -> None:
        if self.read_only:
            raise LedgerSealed("ledger is open in read-only verification mode")

    def _push(self, rec) -> None:
        b = canonical_serialize(rec)
        self.records.append(rec)
        self._encoded.append(b)
        self._hasher.update(b)
        self._commitments.append(self._hasher.copy().digest())

    def append_event(self, e: TreasuryEvent) -> PoTRecord:
        self._writable()
        new_state = apply_event(ExposureVector(self.state.balances, self.last_time), e, self.registry)
        rec = make_receipt(self.last_r, e, len(self.records) + 1, self.treasury_key, self.provider_key)
        self._push(rec)
        self.state = new_state
        self.last_time = e.t
        self.last_r = rec.r
        return rec

    def snapshot_trigger(
        self, coins: Iterable[CoinRecord], t: int | None = None, honest: bool = True
    ) -> PoRSnapshot:
        self._writable()
        t = self.last_time + 1 if t is None else t
        if t <= self.last_time:
            raise NonMonotoneTimestamp(f"snapshot time {t} does not exceed {self.last_time}")
        snap = snapshot(coins, t, self.registry)
        if honest and dict(snap.totals) != reserve_balances(self.state, self.registry):
            raise SnapshotMismatch(
                f"snapshot totals {dict(snap.totals)} disagree with ledger "
                f"{reserve_balances(self.state, self.registry)}"
            )
        self._push(snap)
        self.last_time = t
        self.latest_snapshot = snap
        return snap

    def anchor_trigger(self, chain: SimChain) -> PendingAnchor:
        """Submit C_n for the current length n; finalised by :meth:`poll_anchors`."""
        self._writable()
        n = len(self.records)
        c = self._commitments[n]
        for p in self.pending:
            if p.anchored_index == n:
                return p
        if self.anchor_for(n) is not None:
            return PendingAnchor(n, c, self.anchor_for(n).txid)
        txid = chain.submit_anchor(anchor_payload(ledger_tag(self.treasury_pk), n, c))
        pend = PendingAnchor(n, c, txid)
        self.pending.append(pend)
        return pend

    def poll_anchors(self, chain: SimChain) -> list[AnchorMeta]:
        """Record ANCHOR_META for anchors now at depth k; resubmit dropped ones."""
        self._writable()
        done: list[AnchorMeta] = []
        still: list[PendingAnchor] = []
        tag = ledger_tag(self.treasury_pk)
        for p in self.pending:
            status = chain.status(p.txid, self.k)
            if status is TxStatus.CONFIRMED:
                _, height = chain.find_tx(p.txid)
                meta = AnchorMeta(p.anchored_index, p.commitment, p.txid, height)
                self._push(meta)
                self.anchors.append(meta)
                done.append(meta)
            elif status is TxStatus.ABSENT:
                p.txid = chain.submit_anchor(anchor_payload(tag, p.anchored_index, p.commitment))
                still.append(p)
            else:
                still.append(p)
        self.pending = still
        return done

    # -- verification ---------------------------------------------------------

    def audit(self, check_signatures: bool = True) -> Audit:
        return audit_records(self.records, self.public_params, check_signatures=check_signatures)

    def verify(self) -> AuditFailure | None:
        """Full re-verification: hashes, signatures, snapshots, commitments."""
        audit = self.audit()
        if audit.failure is not None:
            return audit.failure
        if audit.commitments != self._commitments:
            return AuditFailure(len(self.records), AuditCheck.INDEX, "stored commitments differ")
        return None

    # -- persistence ----------------------------------------------------------

    RECORDS = "records.tlv"
    COMMITMENTS = "commitments.bin"
    META = "meta.json"
    KEYS = "keys.json"
    CHAIN = "chain.json"

    def _meta(self) -> dict:
        return {
            "format": 1,
            "registry": self.registry.to_lines(),
            "k": self.k,
            "liveness": str(self.liveness) if self.liveness else None,
            "treasury_pk": self.treasury_pk.hex(),
            "provider_pk": self.provider_pk.hex(),
            "policies": [p.to_text() for p in self.policies.values()],
            "pending": [[p.anchored_index, p.commitment.hex(), p.txid.hex()] for p in self.pending],
        }

    def save(self, path: str | Path) -> None:
        """Persist to directory ``path``. When saving back to the directory the
        ledger was loaded from, only new records are appended."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        incremental = self._path == path.resolve() and (path / self.RECORDS).exists()
        start = self._persisted if incremental else 0
        mode = "ab" if incremental else "wb"
        with open(path / self.RECORDS, mode) as fh:
            for b in self._encoded[start:]:
                fh.write(base64.b64encode(b) + b"\n")
        with open(path / self.COMMITMENTS, mode) as fh:
            first = start + 1 if incremental else 0
            fh.write(b"".join(self._commitments[first:]))
        _atomic_write(path / self.META, json.dumps(self._meta(), indent=1, sort_keys=True))
        if self.key_seed is not None and not (path / self.KEYS).exists():
            _atomic_write(path / self.KEYS, json.dumps({"seed": self.key_seed.hex()}))
            os.chmod(path / self.KEYS, 0o600)
        self._path = path.resolve()
        self._persisted = len(self.records)

    @classmethod
    def load(cls, path: str | Path, read_only: bool = False, verify: bool = True) -> "Ledger":
        path = Path(path)
        try:
            meta = json.loads((path / cls.META).read_text())
        except FileNotFoundError:
            raise InputError(f"no ledger at {path}") from None
        registry = DomainRegistry.from_lines(meta["registry"])
        liveness = LivenessConfig.parse(meta["liveness"]) if meta.get("liveness") else None
        seed = None
        if not read_only and (path / cls.KEYS).exists():
            seed = bytes.fromhex(json.loads((path / cls.KEYS).read_text())["seed"])
        if seed is not None:
            led = cls.setup(registry, seed, meta["k"], liveness)
        else:
            led = cls(
                registry, None, None, meta["k"], liveness,
                treasury_pk=bytes.fromhex(meta["treasury_pk"]),
                provider_pk=bytes.fromhex(meta["provider_pk"]),
            )
        if led.treasury_pk.hex() != meta["treasury_pk"] or led.provider_pk.hex() != meta["provider_pk"]:
            raise InvariantViolation("key file does not match recorded public keys")

        records = []
        with open(path / cls.RECORDS, "rb") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    raw = base64.b64decode(line, validate=True)
                except ValueError as exc:
                    raise DecodeError(f"{cls.RECORDS} line {lineno}: bad base64") from exc
                rec, end = decode_one(raw, 0)
                if end != len(raw):
                    raise DecodeError(f"{cls.RECORDS} line {lineno}: trailing octets")
                records.append(rec)
        led._rebuild(records, verify)
        stored = (path / cls.COMMITMENTS).read_bytes()
        expect = b"".join(led._commitments)
        if stored != expect:
            raise InvariantViolation("commitment sidecar disagrees with recomputed commitments")
        from .policy import Policy

        led.policies = {}
        for text in meta.get("policies", []):
            pol = Policy.from_text(text)
            led.policies[pol.policy_id] = pol
        led.pending = [
            PendingAnchor(n, bytes.fromhex(c), bytes.fromhex(t)) for n, c, t in meta.get("pending", [])
        ]
        led._path = path.resolve()
        led._persisted = len(records)
        led.read_only = read_only
        return led

    def _rebuild(self, records: Sequence, verify: bool) -> None:
        audit = audit_records(records, self.public_params, check_signatures=verify)
        if audit.failure is not None:
            f = audit.failure
            raise InvariantViolation(f"record {f.index} fails {f.check.value} check: {f.detail}")
        for rec in records:
            self._push(rec)
        self.state = audit.state
        self.last_time = audit.last_time
        self.last_r = audit.last_r
        self.latest_snapshot = audit.latest_snapshot
        self.anchors = list(audit.anchors)

    def aux(self) -> dict:
        """Derived bookkeeping state, recomputable from records alone."""
        return {
            "balances": self.state.as_dict(),
            "last_time": self.last_time,
            "last_r": self.last_r,
            "latest_snapshot": self.latest_snapshot,
            "anchors": list(self.anchors),
            "commitment": self.commitment,
        }


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@contextmanager
def ledger_lock(path: str | Path) -> Iterator[None]:
    """Advisory exclusive lock for the single writer of a ledger directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / ".lock", "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise InputError(f"ledger {path} is locked by another process") from None
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


# ---------------------------------------------------------------------------
# cost model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerStats:
    records: int  # events + snapshots
    events: int
    snapshots: int
    anchors: int
    ledger_bytes: int
    event_bytes: int
    bytes_per_event: float
    anchor_payload_bytes: int

    def projected_anchors(self, years: int, per_year: int = 12) -> int:
        return per_year * years

    def projected_payload_bytes(self, years: int, per_year: int = 12) -> int:
        return self.projected_anchors(years, per_year) * ANCHOR_PAYLOAD_SIZE


def _line_size(b: bytes) -> int:
    return len(base64.b64encode(b)) + 1


def ledger_stats(ledger: Ledger) -> LedgerStats:
    events = snaps = anchors = 0
    total = ev_bytes = 0
    for rec, b in zip(ledger.records, ledger._encoded):
        size = _line_size(b)
        total += size
        if isinstance(rec, PoTRecord):
            events += 1
            ev_bytes += size
        elif isinstance(rec, PoRSnapshot):
            snaps += 1
        else:
            anchors += 1
    return LedgerStats(
        records=events + snaps,
        events=events,
        snapshots=snaps,
        anchors=anchors,
        ledger_bytes=total,
        event_bytes=ev_bytes,
        bytes_per_event=ev_bytes / events if events else 0.0,
        anchor_payload_bytes=anchors * ANCHOR_PAYLOAD_SIZE,
    )


# ---------------------------------------------------------------------------
# honest scheduler harness
# ---------------------------------------------------------------------------


def coins_for_balances(
    balances: dict[str, int], registry: DomainRegistry, owner_key: bytes, label: str = "c"
) -> list[CoinRecord]:
    """One coin per non-zero reserve domain realising ``balances`` exactly."""
    out = []
    for did in registry.reserve_domains():
        v = balances.get(did, 0)
        if v:
            out.append(CoinRecord(f"{label}:{did}", v, owner_key, did))
    return out


@dataclass
class Scheduler:
    """Drives a ledger on a logical clock: events as they arrive, snapshots
    every ``snap_every`` ticks and anchors every ``anchor_every`` ticks, and
    records the resulting trace for :func:`check_liveness`."""

    ledger: Ledger
    chain: SimChain
    snap_every: int
    anchor_every: int
    trace: Trace | None = None

    def run(self, events: Sequence[TreasuryEvent], end: int) -> Trace:
        led = self.ledger
        trace = Trace(led.last_time, end)
        queue = sorted(events, key=lambda e: e.t)
        qi = 0
        last_snap = last_anchor = led.last_time
        for tick in range(led.last_time + 1, end + 1):
            if qi < len(queue) and queue[qi].t == tick:
                e = queue[qi]
                qi += 1
                trace.add(tick, TraceKind.INPUT, str(tick))
                led.append_event(e)
                trace.add(tick, TraceKind.LOGGED, str(tick))
            elif tick - last_snap >= self.snap_every:
                owner = led.treasury_pk
                led.snapshot_trigger(
                    coins_for_balances(reserve_balances(led.state, led.registry), led.registry, owner, f"s{tick}"),
                    t=tick,
                )
                trace.add(tick, TraceKind.SNAPSHOT)
                last_snap = tick
            if tick - last_anchor >= self.anchor_every:
                led.anchor_trigger(self.chain)
                self.chain.mine(led.k)
                led.poll_anchors(self.chain)
                trace.add(tick, TraceKind.ANCHOR)
                last_anchor = tick
        self.trace = trace
        return trace
