"""Proof-of-transit receipts: event digests, the hash chain and dual signatures.

    h_i = H(EVENT_DIGEST, TLV(evid_i, v_i, m_i))
    R_i = H(POT_CHAIN, TLV(R_{i-1}, h_i, src_i, dst_i, t_i)),   R_0 = 0^256

Both the treasury and the provider sign TLV(h_i, src_i, dst_i, t_i, R_i).
Note that v_i is bound only through h_i.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType
from typing import Mapping, Sequence

from .crypto import (
    ZERO_DIGEST,
    DomainTag,
    KeyPair,
    RecordTag,
    canonical_record,
    canonical_serialize,
    dec_int,
    dec_str,
    dec_str_map,
    enc_fields,
    enc_int,
    enc_str,
    enc_str_map,
    tagged_hash,
    verify_signature,
)
from .errors import SigningFailure
from .state import TreasuryEvent


def event_digest(evid: bytes, v: int, meta: Mapping[str, str]) -> bytes:
    """Digest over the primitive evidence, value and metadata only."""
    payload = enc_fields(
        RecordTag.EVENT_DIGEST_INPUT,
        [(1, bytes(evid)), (2, enc_int(v)), (3, enc_str_map(meta))],
    )
    return tagged_hash(DomainTag.EVENT_DIGEST, payload)


def chain_value(prev: bytes, h: bytes, src: str, dst: str, t: int) -> bytes:
    payload = enc_fields(
        RecordTag.CHAIN_INPUT,
        [(1, prev), (2, h), (3, enc_str(src)), (4, enc_str(dst)), (5, enc_int(t))],
    )
    return tagged_hash(DomainTag.POT_CHAIN, payload)


def signed_message(h: bytes, src: str, dst: str, t: int, r: bytes) -> bytes:
    return enc_fields(
        RecordTag.SIGNED_TUPLE,
        [(1, h), (2, enc_str(src)), (3, enc_str(dst)), (4, enc_int(t)), (5, r)],
    )


@canonical_record(RecordTag.POT_RECORD)
@dataclass(frozen=True)
class PoTRecord:
    index: int
    t: int
    src: str
    dst: str
    v: int
    evid: bytes
    meta: Mapping[str, str]
    h: bytes
    r: bytes
    sig_treasury: bytes
    sig_provider: bytes

    def __post_init__(self) -> None:
        object.__setattr__(self, "meta", MappingProxyType(dict(self.meta)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoTRecord):
            return NotImplemented
        return canonical_serialize(self) == canonical_serialize(other)

    def __hash__(self) -> int:
        return hash(canonical_serialize(self))

    @property
    def event(self) -> TreasuryEvent:
        return TreasuryEvent(self.t, self.src, self.dst, self.v, self.evid, self.meta)

    def message(self) -> bytes:
        return signed_message(self.h, self.src, self.dst, self.t, self.r)

    def _fields(self):
        return [
            (1, enc_int(self.index)),
            (2, enc_int(self.t)),
            (3, enc_str(self.src)),
            (4, enc_str(self.dst)),
            (5, enc_int(self.v)),
            (6, bytes(self.evid)),
            (7, enc_str_map(self.meta)),
            (8, self.h),
            (9, self.r),
            (10, self.sig_treasury),
            (11, self.sig_provider),
        ]

    @classmethod
    def _from_fields(cls, f):
        return cls(
            dec_int(f[1]), dec_int(f[2]), dec_str(f[3]), dec_str(f[4]), dec_int(f[5]),
            f[6], dec_str_map(f[7]), f[8], f[9], f[10], f[11],
        )


def make_receipt(
    prev_r: bytes,
    event: TreasuryEvent,
    index: int,
    treasury_key: KeyPair | None,
    provider_key: KeyPair | None,
) -> PoTRecord:
    """Build the receipt following ``prev_r`` without touching any chain."""
    if treasury_key is None or provider_key is None:
        raise SigningFailure("both treasury and provider keys are required")
    h = event_digest(event.evid, event.v, event.meta)
    r = chain_value(prev_r, h, event.src, event.dst, event.t)
    msg = signed_message(h, event.src, event.dst, event.t, r)
    try:
        st = treasury_key.sign(msg)
        sp = provider_key.sign(msg)
    except Exception as exc:  # backend failure or malformed key material
        raise SigningFailure(str(exc)) from exc
    return PoTRecord(index, event.t, event.src, event.dst, event.v, event.evid, event.meta, h, r, st, sp)


@dataclass
class PoTChain:
    records: list[PoTRecord] = field(default_factory=list)
    seed: bytes = ZERO_DIGEST

    @property
    def tip(self) -> bytes:
        return self.records[-1].r if self.records else self.seed

    def __len__(self) -> int:
        return len(self.records)


def append_receipt(
    chain: PoTChain,
    event: TreasuryEvent,
    treasury_key: KeyPair | None,
    provider_key: KeyPair | None,
    index: int | None = None,
) -> PoTRecord:
    rec = make_receipt(chain.tip, event, len(chain) + 1 if index is None else index, treasury_key, provider_key)
    chain.records.append(rec)
    return rec


class DivergenceCause(str, Enum):
    HASH_LINK = "HASH_LINK"
    TREASURY_SIG = "TREASURY_SIG"
    PROVIDER_SIG = "PROVIDER_SIG"


@dataclass(frozen=True)
class Divergence:
    index: int
    cause: DivergenceCause

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class ChainOk:
    tip: bytes

    def __bool__(self) -> bool:
        return True


def check_links(rec: PoTRecord, prev_r: bytes) -> DivergenceCause | None:
    """Recompute h from (evid, v, m) and R from the predecessor."""
    if event_digest(rec.evid, rec.v, rec.meta) != rec.h:
        return DivergenceCause.HASH_LINK
    if chain_value(prev_r, rec.h, rec.src, rec.dst, rec.t) != rec.r:
        return DivergenceCause.HASH_LINK
    return None


def check_receipt(rec: PoTRecord, prev_r: bytes, treasury_pk: bytes, provider_pk: bytes) -> DivergenceCause | None:
    """First failing check of one receipt, or None."""
    cause = check_links(rec, prev_r)
    if cause is not None:
        return cause
    msg = rec.message()
    if not verify_signature(treasury_pk, msg, rec.sig_treasury):
        return DivergenceCause.TREASURY_SIG
    if not verify_signature(provider_pk, msg, rec.sig_provider):
        return DivergenceCause.PROVIDER_SIG
    return None


def verify_chain(
    chain: PoTChain | Sequence[PoTRecord], treasury_pk: bytes, provider_pk: bytes
) -> ChainOk | Divergence:
    if isinstance(chain, PoTChain):
        records, prev = chain.records, chain.seed
    else:
        records, prev = chain, ZERO_DIGEST
    for rec in records:
        cause = check_receipt(rec, prev, treasury_pk, provider_pk)
        if cause is not None:
            return Divergence(rec.index, cause)
        prev = rec.r
    return ChainOk(prev)


def first_divergence(a: Sequence, b: Sequence) -> int | None:
    """1-based position of the first canonically different record, or None
    when one sequence is a prefix of the other."""
    if isinstance(a, PoTChain):
        a = a.records
    if isinstance(b, PoTChain):
        b = b.records
    for j, (x, y) in enumerate(zip(a, b), start=1):
        if canonical_serialize(x) != canonical_serialize(y):
            return j
    return None


def tamper(rec: PoTRecord, **changes) -> PoTRecord:
    """Copy of ``rec`` with fields replaced; signatures are kept as-is."""
    return replace(rec, **changes)
