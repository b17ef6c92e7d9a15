"""Straight-line reference encoder used to cross-check the package.

Written against the wire format directly (struct + hashlib), sharing no code
with ``treasury_ledger``. Golden vectors in the tests were produced by this
module and frozen.
"""

from __future__ import annotations

import hashlib
import struct

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

LEDGER, EVENT, CHAIN, LEAF, NODE, PAYLOAD = 1, 2, 3, 4, 5, 6
SAT = 100_000_000


def H(tag: int, data: bytes) -> bytes:
    return hashlib.sha256(bytes([tag]) + data).digest()


def i64(x: int) -> bytes:
    return struct.pack(">q", x)


def u32(x: int) -> bytes:
    return struct.pack(">I", x)


def tlv(tag: int, *fields: bytes) -> bytes:
    out = struct.pack(">BH", tag, len(fields))
    for fid, value in enumerate(fields, start=1):
        out += struct.pack(">BI", fid, len(value)) + value
    return out


def smap(m: dict) -> bytes:
    out = u32(len(m))
    for k in sorted(m, key=lambda s: s.encode()):
        kb, vb = k.encode(), m[k].encode()
        out += u32(len(kb)) + kb + u32(len(vb)) + vb
    return out


def imap(m: dict) -> bytes:
    out = u32(len(m))
    for k in sorted(m, key=lambda s: s.encode()):
        out += u32(len(k.encode())) + k.encode() + i64(m[k])
    return out


def merkle_root(leaves: list[bytes]) -> bytes:
    def up(level):
        if len(level) == 1:
            return level[0]
        paired = [H(NODE, level[i] + level[i + 1]) for i in range(0, len(level) - 1, 2)]
        return up(paired + level[len(paired) * 2:])

    return up([H(LEAF, x) for x in leaves])


def keypair(master: bytes, label: str) -> tuple[Ed25519PrivateKey, bytes]:
    sk = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(master + b"/" + label.encode()).digest())
    return sk, sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def receipt(index, prev, t, src, dst, v, evid, meta, tsk, psk) -> tuple[bytes, bytes]:
    """(encoded PoT record, R)."""
    h = H(EVENT, tlv(0x11, evid, i64(v), smap(meta)))
    r = H(CHAIN, tlv(0x12, prev, h, src.encode(), dst.encode(), i64(t)))
    msg = tlv(0x13, h, src.encode(), dst.encode(), i64(t), r)
    rec = tlv(
        0x14, i64(index), i64(t), src.encode(), dst.encode(), i64(v), evid, smap(meta),
        h, r, tsk.sign(msg), psk.sign(msg),
    )
    return rec, r


def coin(cid, value, owner, domain) -> bytes:
    return tlv(0x15, cid.encode(), i64(value), owner, domain.encode())


def snapshot_record(t, coins: list[bytes], totals: dict) -> bytes:
    return tlv(0x16, i64(t), u32(len(coins)) + b"".join(coins), merkle_root(coins or [b""]), imap(totals))


TOY_EVENTS = [
    (1, "ext", "cold", 100 * SAT, b"evid-1-acquisition", {"kind": "acquisition"}),
    (2, "cold", "exch", 40 * SAT, b"evid-2-funding", {"kind": "transfer"}),
    (3, "exch", "coll", 30 * SAT, b"evid-3-collateral-post", {"kind": "collateral"}),
    (4, "coll", "exch", 10 * SAT, b"evid-4-collateral-release", {"kind": "collateral"}),
]


def toy_prefix(master: bytes = b"\x01" * 32) -> dict:
    """Encoded toy prefix (four receipts, one snapshot) and its commitments."""
    tsk, tpk = keypair(master, "treasury")
    psk, _ = keypair(master, "provider")
    records, chain = [], []
    prev = bytes(32)
    for i, (t, s, d, v, evid, meta) in enumerate(TOY_EVENTS, start=1):
        rec, prev = receipt(i, prev, t, s, d, v, evid, meta, tsk, psk)
        records.append(rec)
        chain.append(prev)
    coins = [
        coin("toy:cold", 60 * SAT, tpk, "cold"),
        coin("toy:coll", 20 * SAT, tpk, "coll"),
        coin("toy:exch", 20 * SAT, tpk, "exch"),
    ]
    records.append(snapshot_record(5, coins, {"cold": 60 * SAT, "exch": 20 * SAT, "coll": 20 * SAT}))
    commitments = [H(LEDGER, b"".join(records[:n])) for n in range(len(records) + 1)]
    return {
        "records": records,
        "chain": chain,
        "commitments": commitments,
        "snapshot_root": merkle_root(coins),
        "tag": H(PAYLOAD, tpk)[:8],
    }
