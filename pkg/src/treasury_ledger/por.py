"""Proof-of-reserves snapshots over coin sets, inclusion proofs and a
simulated coin registry for existence/ownership checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping

from .crypto import (
    MerkleProof,
    RecordTag,
    canonical_record,
    canonical_serialize,
    dec_int,
    dec_int_map,
    dec_records,
    dec_str,
    enc_int,
    enc_int_map,
    enc_records,
    enc_str,
    merkle_commit,
    merkle_prove,
    merkle_verify,
)
from .errors import CoinNotInSnapshot, DecodeError, InvalidCoin
from .state import DomainKind, DomainRegistry

EMPTY_SET_LEAF = b""
SIGNED_KINDS = (DomainKind.DERIVATIVE, DomainKind.COLLATERAL)


@canonical_record(RecordTag.COIN)
@dataclass(frozen=True)
class CoinRecord:
    coin_id: str
    value: int
    owner_key: bytes
    domain: str

    def _fields(self):
        return [
            (1, enc_str(self.coin_id)),
            (2, enc_int(self.value)),
            (3, bytes(self.owner_key)),
            (4, enc_str(self.domain)),
        ]

    @classmethod
    def _from_fields(cls, f):
        return cls(dec_str(f[1]), dec_int(f[2]), f[3], dec_str(f[4]))


@canonical_record(RecordTag.SNAPSHOT)
@dataclass(frozen=True)
class PoRSnapshot:
    t: int
    coins: tuple[CoinRecord, ...]
    root: bytes
    totals: Mapping[str, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "coins", tuple(self.coins))
        object.__setattr__(self, "totals", MappingProxyType(dict(self.totals)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoRSnapshot):
            return NotImplemented
        return canonical_serialize(self) == canonical_serialize(other)

    def __hash__(self) -> int:
        return hash(canonical_serialize(self))

    def _fields(self):
        return [
            (1, enc_int(self.t)),
            (2, enc_records(self.coins)),
            (3, self.root),
            (4, enc_int_map(self.totals)),
        ]

    @classmethod
    def _from_fields(cls, f):
        coins = dec_records(f[2])
        if not all(isinstance(c, CoinRecord) for c in coins):
            raise DecodeError("snapshot coin list holds a non-coin record")
        return cls(dec_int(f[1]), tuple(coins), f[3], dec_int_map(f[4]))


def coin_leaves(coins: Iterable[CoinRecord]) -> list[bytes]:
    leaves = [canonical_serialize(c) for c in coins]
    return leaves or [EMPTY_SET_LEAF]


def compute_totals(coins: Iterable[CoinRecord], registry: DomainRegistry) -> dict[str, int]:
    totals = {d: 0 for d in registry.reserve_domains()}
    for c in coins:
        totals[c.domain] += c.value
    return totals


def _check_coin(c: CoinRecord, registry: DomainRegistry) -> None:
    kind = registry.get(c.domain).kind
    if kind in (DomainKind.EXTERNAL, DomainKind.FEE):
        raise InvalidCoin(f"coin {c.coin_id!r} sits in non-reserve domain {c.domain!r}")
    if c.value < 0 and kind not in SIGNED_KINDS:
        raise InvalidCoin(f"coin {c.coin_id!r} has negative value in {kind.value} domain")


def snapshot(coins: Iterable[CoinRecord], t: int, registry: DomainRegistry) -> PoRSnapshot:
    ordered = sorted(coins, key=lambda c: c.coin_id.encode())
    for a, b in zip(ordered, ordered[1:]):
        if a.coin_id == b.coin_id:
            raise InvalidCoin(f"duplicate coin id {a.coin_id!r}")
    for c in ordered:
        _check_coin(c, registry)
    root = merkle_commit(coin_leaves(ordered))
    return PoRSnapshot(t, tuple(ordered), root, compute_totals(ordered, registry))


class SnapshotFault(str, Enum):
    ORDER = "ORDER"
    ROOT = "ROOT"
    TOTALS = "TOTALS"
    COIN = "COIN"


def snapshot_fault(snap: PoRSnapshot, registry: DomainRegistry) -> SnapshotFault | None:
    """Internal consistency of a snapshot record as received from elsewhere."""
    ids = [c.coin_id.encode() for c in snap.coins]
    if any(a >= b for a, b in zip(ids, ids[1:])):
        return SnapshotFault.ORDER
    try:
        for c in snap.coins:
            _check_coin(c, registry)
    except Exception:
        return SnapshotFault.COIN
    if merkle_commit(coin_leaves(snap.coins)) != snap.root:
        return SnapshotFault.ROOT
    if compute_totals(snap.coins, registry) != dict(snap.totals):
        return SnapshotFault.TOTALS
    return None


@dataclass(frozen=True)
class PoRProof:
    owner_key: bytes
    domain: str
    path: MerkleProof


def prove_inclusion(snap: PoRSnapshot, coin_id: str) -> tuple[CoinRecord, PoRProof]:
    for i, c in enumerate(snap.coins):
        if c.coin_id == coin_id:
            path = merkle_prove(coin_leaves(snap.coins), i)
            return c, PoRProof(c.owner_key, c.domain, path)
    raise CoinNotInSnapshot(f"coin {coin_id!r} not in snapshot at t={snap.t}")


def por_verify(root: bytes, x: str, a: int, proof: PoRProof) -> bool:
    leaf = canonical_serialize(CoinRecord(x, a, proof.owner_key, proof.domain))
    return merkle_verify(root, leaf, proof.path)


# ---------------------------------------------------------------------------
# simulated coin registry (ground truth for existence and ownership)
# ---------------------------------------------------------------------------


@dataclass
class RegistryEntry:
    value: int
    owner_key: bytes
    spent: bool = False


@dataclass
class CoinRegistry:
    entries: dict[str, RegistryEntry] = field(default_factory=dict)

    def add(self, coin_id: str, value: int, owner_key: bytes) -> None:
        if coin_id in self.entries:
            raise InvalidCoin(f"coin {coin_id!r} already exists")
        self.entries[coin_id] = RegistryEntry(value, owner_key)

    def spend(self, coin_id: str) -> None:
        self.entries[coin_id].spent = True

    @classmethod
    def from_coins(cls, coins: Iterable[CoinRecord]) -> "CoinRegistry":
        reg = cls()
        for c in coins:
            reg.add(c.coin_id, c.value, c.owner_key)
        return reg


class ViolationKind(str, Enum):
    NONEXISTENT = "NONEXISTENT"
    NOT_OWNED = "NOT_OWNED"


@dataclass(frozen=True)
class Violation:
    coin_id: str
    kind: ViolationKind

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class PoROk:
    def __bool__(self) -> bool:
        return True


def check_existence_ownership(
    snap: PoRSnapshot, registry: CoinRegistry, treasury_keys: Iterable[bytes]
) -> PoROk | Violation:
    keys = set(treasury_keys)
    for c in snap.coins:
        entry = registry.entries.get(c.coin_id)
        if entry is None or entry.spent or entry.value != c.value:
            return Violation(c.coin_id, ViolationKind.NONEXISTENT)
        if entry.owner_key != c.owner_key or c.owner_key not in keys:
            return Violation(c.coin_id, ViolationKind.NOT_OWNED)
    return PoROk()
