"""Deterministic simulated Bitcoin substrate.

Blocks are produced by script, not by proof of work. Each block carries
transactions with a single payload slot (OP_RETURN-like, at most 80
octets). Confirmation counting follows Bitcoin: a transaction in the tip
block has one confirmation.

Scenario scripts are plain text, one action per line::

    # comment
    SUBMIT 9f86d081...      (hex payload)
    MINE 6
    REORG 120 3             (fork height, number of replacement blocks)
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import (
    InputError,
    InvalidForkPoint,
    PayloadTooLarge,
    PlatformAssumptionViolated,
    SubstrateUnavailable,
)

MAX_PAYLOAD = 80


def _dsha(data: bytes) -> bytes:
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


@dataclass(frozen=True)
class SimTx:
    txid: bytes
    payload: bytes


@dataclass(frozen=True)
class SimBlock:
    height: int
    parent: bytes
    txs: tuple[SimTx, ...]
    digest: bytes


class TxStatus(str, Enum):
    CONFIRMED = "confirmed"
    PENDING = "pending"
    ABSENT = "absent"


@dataclass
class SimChain:
    k: int = 6
    seed: bytes = b"tpl-genesis"
    blocks: list[SimBlock] = field(default_factory=list)
    mempool: list[SimTx] = field(default_factory=list)
    available: bool = True
    _nonce: int = 0
    _branch: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InputError("confirmation depth k must be positive")
        if not self.blocks:
            self.blocks.append(self._make_block(0, bytes(32), ()))

    # -- construction helpers -------------------------------------------------

    def _make_block(self, height: int, parent: bytes, txs: tuple[SimTx, ...]) -> SimBlock:
        body = parent + struct.pack(">QQ", height, self._branch) + self.seed
        body += b"".join(tx.txid for tx in txs)
        return SimBlock(height, parent, txs, _dsha(body))

    def _require(self) -> None:
        if not self.available:
            raise SubstrateUnavailable("simulated substrate is offline")

    @property
    def tip(self) -> int:
        return self.blocks[-1].height

    # -- actions --------------------------------------------------------------

    def submit_anchor(self, payload: bytes) -> bytes:
        self._require()
        if len(payload) > MAX_PAYLOAD:
            raise PayloadTooLarge(f"payload of {len(payload)} octets exceeds {MAX_PAYLOAD}")
        self._nonce += 1
        txid = _dsha(bytes(payload) + struct.pack(">Q", self._nonce) + self.seed)
        self.mempool.append(SimTx(txid, bytes(payload)))
        return txid

    def mine(self, n: int = 1) -> None:
        self._require()
        if n < 0:
            raise InputError("cannot mine a negative number of blocks")
        for _ in range(n):
            txs, self.mempool = tuple(self.mempool), []
            self.blocks.append(self._make_block(self.tip + 1, self.blocks[-1].digest, txs))

    def reorg(self, fork_height: int, n_new_blocks: int) -> bool:
        """Replace everything above ``fork_height`` with ``n_new_blocks`` empty
        blocks if that branch is strictly longer. Dropped transactions vanish.
        Returns whether the best chain changed."""
        self._require()
        if not 0 <= fork_height <= self.tip:
            raise InvalidForkPoint(f"fork height {fork_height} outside [0, {self.tip}]")
        depth = self.tip - fork_height
        if depth >= self.k:
            raise PlatformAssumptionViolated(f"reorg depth {depth} reaches finality depth {self.k}")
        if fork_height + n_new_blocks <= self.tip:
            return False  # competing branch not longer: best chain unchanged
        self._branch += 1
        del self.blocks[fork_height + 1:]
        for _ in range(n_new_blocks):
            self.blocks.append(self._make_block(self.tip + 1, self.blocks[-1].digest, ()))
        return True

    # -- queries --------------------------------------------------------------

    def find_tx(self, txid: bytes) -> tuple[SimTx, int] | None:
        for block in reversed(self.blocks):
            for tx in block.txs:
                if tx.txid == txid:
                    return tx, block.height
        return None

    def confirmations(self, txid: bytes) -> int:
        hit = self.find_tx(txid)
        return 0 if hit is None else self.tip - hit[1] + 1

    def status(self, txid: bytes, k: int | None = None) -> TxStatus:
        k = self.k if k is None else k
        hit = self.find_tx(txid)
        if hit is not None:
            return TxStatus.CONFIRMED if self.tip - hit[1] + 1 >= k else TxStatus.PENDING
        if any(tx.txid == txid for tx in self.mempool):
            return TxStatus.PENDING
        return TxStatus.ABSENT

    # -- persistence ----------------------------------------------------------

    def to_json(self) -> str:
        def txs(ts):
            return [[t.txid.hex(), t.payload.hex()] for t in ts]

        return json.dumps(
            {
                "k": self.k,
                "seed": self.seed.hex(),
                "nonce": self._nonce,
                "branch": self._branch,
                "mempool": txs(self.mempool),
                "blocks": [[b.height, b.parent.hex(), txs(b.txs), b.digest.hex()] for b in self.blocks],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SimChain":
        d = json.loads(text)

        def txs(ts):
            return tuple(SimTx(bytes.fromhex(a), bytes.fromhex(b)) for a, b in ts)

        blocks = [SimBlock(h, bytes.fromhex(p), txs(t), bytes.fromhex(g)) for h, p, t, g in d["blocks"]]
        chain = cls(k=d["k"], seed=bytes.fromhex(d["seed"]), blocks=blocks, mempool=list(txs(d["mempool"])))
        chain._nonce = d["nonce"]
        chain._branch = d["branch"]
        return chain

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: Path) -> "SimChain":
        return cls.from_json(Path(path).read_text())


def btc_oracle(chain: SimChain, txids: Iterable[bytes], k: int | None = None) -> dict[bytes, TxStatus]:
    return {txid: chain.status(txid, k) for txid in txids}


def run_scenario(chain: SimChain, lines: Iterable[str]) -> list[bytes]:
    """Apply a scenario script; returns txids of SUBMIT lines in order."""
    submitted = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        op, *args = line.split()
        try:
            if op == "MINE" and len(args) == 1:
                chain.mine(int(args[0]))
            elif op == "SUBMIT" and len(args) == 1:
                submitted.append(chain.submit_anchor(bytes.fromhex(args[0])))
            elif op == "REORG" and len(args) == 2:
                chain.reorg(int(args[0]), int(args[1]))
            else:
                raise InputError(f"scenario line {lineno}: unknown action {line!r}")
        except ValueError as exc:
            raise InputError(f"scenario line {lineno}: {exc}") from exc
    return submitted
