"""Domain-separated hashing, canonical TLV encoding, Merkle trees and signatures.

Canonical record layout (all multi-octet integers big-endian)::

    [record tag: u8][field count: u16][field]*
    field := [field id: u8][length: u32][value octets]

Field values are encoded by type:

* int      -> 8 octets, two's complement (i64)
* str      -> UTF-8
* bytes    -> raw
* str map  -> [count: u32] then per entry, sorted by key octets,
              [klen: u32][key][vlen: u32][value]
* int map  -> [count: u32] then per entry, sorted by key octets,
              [klen: u32][key][i64]
* records  -> [count: u32] then each nested record's canonical bytes

Because every record is self-delimiting, a concatenation of records is
itself an unambiguous encoding; the ledger commitment hashes exactly that.
"""

from __future__ import annotations

import hashlib
import struct
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Any, Callable, Iterator, Mapping, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    PublicFormat,
)

from .errors import DecodeError, EmptyLeafSet, IndexOutOfRange, UnsupportedRecord

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)

I64_MIN = -(1 << 63)
I64_MAX = (1 << 63) - 1


class DomainTag(IntEnum):
    """Single-octet prefixes separating the uses of the hash function."""

    LEDGER = 0x01
    EVENT_DIGEST = 0x02
    POT_CHAIN = 0x03
    MERKLE_LEAF = 0x04
    MERKLE_NODE = 0x05
    ANCHOR_PAYLOAD = 0x06


class RecordTag(IntEnum):
    """First octet of every canonical record. The set is closed."""

    TREASURY_EVENT = 0x10
    EVENT_DIGEST_INPUT = 0x11
    CHAIN_INPUT = 0x12
    SIGNED_TUPLE = 0x13
    POT_RECORD = 0x14
    COIN = 0x15
    SNAPSHOT = 0x16
    ANCHOR_META = 0x17
    LEDGER_RECORD = 0x18


# ---------------------------------------------------------------------------
# hashing
# ---------------------------------------------------------------------------


class Sha256Scheme:
    """Default scheme: SHA-256 over ``tag || payload``."""

    name = "sha256"

    def new(self, tag: int):
        h = hashlib.sha256()
        h.update(bytes((tag,)))
        return h


class _PrefixHasher:
    __slots__ = ("_buf",)

    def __init__(self, initial: bytes) -> None:
        self._buf = initial[:DIGEST_SIZE]

    def update(self, data: bytes) -> None:
        room = DIGEST_SIZE - len(self._buf)
        if room > 0:
            self._buf += bytes(data[:room])

    def copy(self) -> "_PrefixHasher":
        return _PrefixHasher(self._buf)

    def digest(self) -> bytes:
        return self._buf.ljust(DIGEST_SIZE, b"\x00")


class TruncatedIdentityScheme:
    """Deliberately broken scheme: the digest is the first 32 octets of
    ``tag || payload``. Collisions are trivial. Used only as a positive
    control in the experiment harness."""

    name = "truncated-identity"

    def new(self, tag: int) -> _PrefixHasher:
        return _PrefixHasher(bytes((tag,)))


SHA256 = Sha256Scheme()
BROKEN_TRUNCATED = TruncatedIdentityScheme()

_active_scheme: ContextVar[Any] = ContextVar("treasury_ledger_hash_scheme", default=SHA256)


def active_hash_scheme():
    return _active_scheme.get()


@contextmanager
def use_hash_scheme(scheme) -> Iterator[None]:
    """Swap the hash scheme for the current context (thread/task local)."""
    token = _active_scheme.set(scheme)
    try:
        yield
    finally:
        _active_scheme.reset(token)


def tagged_hash(tag: DomainTag, payload: bytes) -> bytes:
    """H(tag || payload) under the active scheme. Always 32 octets."""
    h = _active_scheme.get().new(int(tag))
    h.update(payload)
    return h.digest()


def incremental_hash(tag: DomainTag):
    """Streaming hasher pre-seeded with ``tag``; supports update/copy/digest."""
    return _active_scheme.get().new(int(tag))


# ---------------------------------------------------------------------------
# canonical TLV
# ---------------------------------------------------------------------------

_HDR = struct.Struct(">BH")
_FIELD_HDR = struct.Struct(">BI")
_U32 = struct.Struct(">I")
_I64 = struct.Struct(">q")


def enc_int(value: int) -> bytes:
    if isinstance(value, bool) or not isinstance(value, int):
        raise UnsupportedRecord(f"expected int, got {type(value).__name__}")
    if not I64_MIN <= value <= I64_MAX:
        raise OverflowError(f"integer {value} outside i64 range")
    return _I64.pack(value)


def dec_int(raw: bytes) -> int:
    if len(raw) != 8:
        raise DecodeError(f"integer field must be 8 octets, got {len(raw)}")
    return _I64.unpack(raw)[0]


def enc_str(value: str) -> bytes:
    return value.encode("utf-8")


def dec_str(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError("invalid UTF-8 in string field") from exc


def enc_str_map(mapping: Mapping[str, str]) -> bytes:
    items = sorted(((k.encode("utf-8"), v.encode("utf-8")) for k, v in mapping.items()))
    out = [_U32.pack(len(items))]
    for k, v in items:
        out += [_U32.pack(len(k)), k, _U32.pack(len(v)), v]
    return b"".join(out)


def enc_int_map(mapping: Mapping[str, int]) -> bytes:
    items = sorted((k.encode("utf-8"), v) for k, v in mapping.items())
    out = [_U32.pack(len(items))]
    for k, v in items:
        out += [_U32.pack(len(k)), k, enc_int(v)]
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes, pos: int = 0) -> None:
        self.buf = buf
        self.pos = pos

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise DecodeError("truncated canonical encoding")
        out = self.buf[self.pos:end]
        self.pos = end
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _check_sorted_unique(keys: list[bytes]) -> None:
    if any(a >= b for a, b in zip(keys, keys[1:])):
        raise DecodeError("map keys not in canonical order")


def dec_str_map(raw: bytes) -> dict[str, str]:
    r = _Reader(raw)
    n = r.u32()
    keys, out = [], {}
    for _ in range(n):
        k = r.take(r.u32())
        v = r.take(r.u32())
        keys.append(k)
        out[dec_str(k)] = dec_str(v)
    if not r.done():
        raise DecodeError("trailing octets in map field")
    _check_sorted_unique(keys)
    return out


def dec_int_map(raw: bytes) -> dict[str, int]:
    r = _Reader(raw)
    n = r.u32()
    keys, out = [], {}
    for _ in range(n):
        k = r.take(r.u32())
        keys.append(k)
        out[dec_str(k)] = dec_int(r.take(8))
    if not r.done():
        raise DecodeError("trailing octets in map field")
    _check_sorted_unique(keys)
    return out


def enc_fields(tag: RecordTag, fields: Sequence[tuple[int, bytes]]) -> bytes:
    out = [_HDR.pack(int(tag), len(fields))]
    for fid, value in fields:
        out.append(_FIELD_HDR.pack(fid, len(value)))
        out.append(value)
    return b"".join(out)


def dec_fields(buf: bytes, pos: int = 0) -> tuple[int, dict[int, bytes], int]:
    """Parse one record starting at ``pos``; returns (tag, fields, end)."""
    r = _Reader(buf, pos)
    tag, count = _HDR.unpack(r.take(_HDR.size))
    fields: dict[int, bytes] = {}
    last = -1
    for _ in range(count):
        fid, length = _FIELD_HDR.unpack(r.take(_FIELD_HDR.size))
        if fid <= last:
            raise DecodeError("field ids must be strictly increasing")
        last = fid
        fields[fid] = r.take(length)
    return tag, fields, r.pos


# Closed registry: record class -> tag, tag -> decoder.
_ENCODABLE: dict[type, RecordTag] = {}
_DECODERS: dict[int, Callable[[dict[int, bytes]], Any]] = {}


def canonical_record(tag: RecordTag):
    """Class decorator registering a domain type with the TLV codec.

    The class must provide ``_fields(self) -> list[(fid, bytes)]`` and a
    classmethod ``_from_fields(cls, fields: dict[int, bytes])``.
    """

    def wrap(cls):
        _ENCODABLE[cls] = tag
        _DECODERS[int(tag)] = cls._from_fields
        return cls

    return wrap


def canonical_serialize(record: Any) -> bytes:
    tag = _ENCODABLE.get(type(record))
    if tag is None:
        raise UnsupportedRecord(f"{type(record).__name__} has no canonical encoding")
    return enc_fields(tag, record._fields())


def canonical_deserialize(buf: bytes, expect: type | None = None) -> Any:
    obj, end = decode_one(buf, 0)
    if end != len(buf):
        raise DecodeError("trailing octets after record")
    if expect is not None and not isinstance(obj, expect):
        raise DecodeError(f"expected {expect.__name__}, got {type(obj).__name__}")
    return obj


def decode_one(buf: bytes, pos: int) -> tuple[Any, int]:
    tag, fields, end = dec_fields(buf, pos)
    decoder = _DECODERS.get(tag)
    if decoder is None:
        raise DecodeError(f"unknown record tag 0x{tag:02x}")
    try:
        obj = decoder(fields)
    except KeyError as exc:
        raise DecodeError(f"missing field {exc} in record 0x{tag:02x}") from exc
    # rejects non-canonical inputs that happen to parse
    if canonical_serialize(obj) != buf[pos:end]:
        raise DecodeError(f"non-canonical encoding of record 0x{tag:02x}")
    return obj, end


def enc_records(records: Sequence[Any]) -> bytes:
    return _U32.pack(len(records)) + b"".join(canonical_serialize(r) for r in records)


def dec_records(raw: bytes) -> list[Any]:
    r = _Reader(raw)
    n = r.u32()
    out, pos = [], r.pos
    for _ in range(n):
        obj, pos = decode_one(raw, pos)
        out.append(obj)
    if pos != len(raw):
        raise DecodeError("trailing octets in record list")
    return out


# ---------------------------------------------------------------------------
# Merkle trees
# ---------------------------------------------------------------------------

LEFT = "L"
RIGHT = "R"


@dataclass(frozen=True)
class MerkleProof:
    """Sibling path from leaf to root; ``side`` says where the sibling sits."""

    steps: tuple[tuple[bytes, str], ...]


def _leaf(x: bytes) -> bytes:
    return tagged_hash(DomainTag.MERKLE_LEAF, x)


def _node(left: bytes, right: bytes) -> bytes:
    return tagged_hash(DomainTag.MERKLE_NODE, left + right)


def merkle_commit(leaves: Sequence[bytes]) -> bytes:
    if not leaves:
        raise EmptyLeafSet("cannot commit to an empty leaf list")
    level = [_leaf(x) for x in leaves]
    while len(level) > 1:
        nxt = [_node(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])  # unpaired node is promoted unchanged
        level = nxt
    return level[0]


def merkle_prove(leaves: Sequence[bytes], index: int) -> MerkleProof:
    if not leaves:
        raise EmptyLeafSet("cannot prove against an empty leaf list")
    if not 0 <= index < len(leaves):
        raise IndexOutOfRange(f"leaf index {index} not in [0, {len(leaves)})")
    level = [_leaf(x) for x in leaves]
    steps: list[tuple[bytes, str]] = []
    i = index
    while len(level) > 1:
        sib = i ^ 1
        if sib < len(level):
            steps.append((level[sib], LEFT if sib < i else RIGHT))
        nxt = [_node(level[j], level[j + 1]) for j in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
        i //= 2
    return MerkleProof(tuple(steps))


def merkle_verify(root: bytes, leaf: bytes, proof: MerkleProof) -> bool:
    acc = _leaf(leaf)
    for sibling, side in proof.steps:
        if side == LEFT:
            acc = _node(sibling, acc)
        elif side == RIGHT:
            acc = _node(acc, sibling)
        else:
            return False
    return acc == root


# ---------------------------------------------------------------------------
# signatures (Ed25519)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeyPair:
    secret: bytes = b""
    public: bytes = b""

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        if len(seed) != 32:
            raise ValueError("Ed25519 seed must be 32 octets")
        sk = Ed25519PrivateKey.from_private_bytes(seed)
        pk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(secret=seed, public=pk)

    @classmethod
    def derive(cls, master: bytes, label: str) -> "KeyPair":
        return cls.from_seed(hashlib.sha256(master + b"/" + label.encode()).digest())

    def sign(self, message: bytes) -> bytes:
        return _private_key(self.secret).sign(message)

    def __repr__(self) -> str:  # never print secrets
        return f"KeyPair(public={self.public.hex()[:16]}...)"


@lru_cache(maxsize=64)
def _private_key(seed: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed)


@lru_cache(maxsize=256)
def _public_key(raw: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(raw)


def verify_signature(public: bytes, message: bytes, signature: bytes) -> bool:
    try:
        _public_key(bytes(public)).verify(bytes(signature), message)
    except (InvalidSignature, ValueError):
        return False
    return True
