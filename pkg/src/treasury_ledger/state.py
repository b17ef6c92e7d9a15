"""Domains, exposure vectors, treasury events and the balance-update rule.

All amounts are signed 64-bit satoshi counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from .crypto import (
    I64_MAX,
    I64_MIN,
    RecordTag,
    canonical_record,
    dec_int,
    dec_str,
    dec_str_map,
    enc_int,
    enc_str,
    enc_str_map,
)
from .errors import (
    ExposureOverflow,
    InputError,
    InvalidDomainRegistry,
    InvalidEvent,
    NonMonotoneTimestamp,
    SelfTransfer,
    UnknownDomain,
)

SAT_PER_BTC = 100_000_000


def btc(amount: str | int) -> int:
    """Exact BTC -> satoshi conversion; sub-satoshi amounts are rejected."""
    try:
        d = Decimal(str(amount))
    except InvalidOperation as exc:
        raise InputError(f"not a decimal amount: {amount!r}") from exc
    sat = d * SAT_PER_BTC
    if sat != sat.to_integral_value():
        raise InputError(f"{amount} BTC is not a whole number of satoshis")
    return int(sat)


def parse_amount(text: str) -> int:
    """``'1.5'`` is BTC; ``'150000000sat'`` is satoshis."""
    text = text.strip()
    if text.endswith("sat"):
        digits = text[:-3]
        if not digits.lstrip("-").isdigit():
            raise InputError(f"bad satoshi amount: {text!r}")
        return int(digits)
    return btc(text)


def format_btc(sat: int) -> str:
    sign = "-" if sat < 0 else ""
    whole, frac = divmod(abs(sat), SAT_PER_BTC)
    if not frac:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{frac:08d}".rstrip("0")


class DomainKind(str, Enum):
    ONCHAIN = "ONCHAIN"
    CUSTODIAN = "CUSTODIAN"
    EXCHANGE = "EXCHANGE"
    DERIVATIVE = "DERIVATIVE"
    COLLATERAL = "COLLATERAL"
    EXTERNAL = "EXTERNAL"
    FEE = "FEE"


@dataclass(frozen=True)
class Domain:
    id: str
    kind: DomainKind
    encumbered: bool | None = None

    def __post_init__(self) -> None:
        if not self.id or any(c.isspace() for c in self.id):
            raise InvalidDomainRegistry(f"bad domain id {self.id!r}")
        object.__setattr__(self, "kind", DomainKind(self.kind))
        if self.encumbered is None:
            object.__setattr__(self, "encumbered", self.kind is DomainKind.COLLATERAL)


class DomainRegistry:
    """The declared domain set D plus external pseudo-domains."""

    def __init__(self, domains: Iterable[Domain]) -> None:
        self._by_id: dict[str, Domain] = {}
        for d in domains:
            if d.id in self._by_id:
                raise InvalidDomainRegistry(f"duplicate domain id {d.id!r}")
            self._by_id[d.id] = d
        fees = [d.id for d in self._by_id.values() if d.kind is DomainKind.FEE]
        if len(fees) != 1:
            raise InvalidDomainRegistry(f"need exactly one FEE domain, found {len(fees)}")
        self.fee = fees[0]

    def __contains__(self, did: object) -> bool:
        return did in self._by_id

    def __iter__(self):
        return iter(self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DomainRegistry) and list(self) == list(other)

    def get(self, did: str) -> Domain:
        try:
            return self._by_id[did]
        except KeyError:
            raise UnknownDomain(f"domain {did!r} is not registered") from None

    def ids(self) -> list[str]:
        return list(self._by_id)

    def modelled(self) -> list[str]:
        """Domains in D: everything except EXTERNAL (fee sink included)."""
        return [d.id for d in self if d.kind is not DomainKind.EXTERNAL]

    def reserve_domains(self) -> list[str]:
        """Domains whose balances count as treasury exposure (D minus fee)."""
        return [d.id for d in self if d.kind not in (DomainKind.EXTERNAL, DomainKind.FEE)]

    def is_external(self, did: str) -> bool:
        return self.get(did).kind is DomainKind.EXTERNAL

    def encumbered(self) -> list[str]:
        return [d.id for d in self if d.encumbered and d.kind is not DomainKind.EXTERNAL]

    def to_lines(self) -> list[str]:
        return [f"{d.id} {d.kind.value} {int(bool(d.encumbered))}" for d in self]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "DomainRegistry":
        out = []
        for line in lines:
            parts = line.split()
            if not parts:
                continue
            if len(parts) not in (2, 3):
                raise InvalidDomainRegistry(f"bad domain line {line!r}")
            try:
                kind = DomainKind(parts[1].upper())
            except ValueError:
                raise InvalidDomainRegistry(f"unknown domain kind {parts[1]!r}") from None
            enc = bool(int(parts[2])) if len(parts) == 3 else None
            out.append(Domain(parts[0], kind, enc))
        return cls(out)


@canonical_record(RecordTag.TREASURY_EVENT)
@dataclass(frozen=True)
class TreasuryEvent:
    """One transfer of ``v`` satoshis from ``src`` to ``dst`` at logical time ``t``."""

    t: int
    src: str
    dst: str
    v: int
    evid: bytes = b""
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "meta", MappingProxyType(dict(self.meta)))
        object.__setattr__(self, "evid", bytes(self.evid))

    def __hash__(self) -> int:
        return hash((self.t, self.src, self.dst, self.v, self.evid, tuple(sorted(self.meta.items()))))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TreasuryEvent):
            return NotImplemented
        return (self.t, self.src, self.dst, self.v, self.evid, dict(self.meta)) == (
            other.t, other.src, other.dst, other.v, other.evid, dict(other.meta))

    def _fields(self):
        return [
            (1, enc_int(self.t)),
            (2, enc_str(self.src)),
            (3, enc_str(self.dst)),
            (4, enc_int(self.v)),
            (5, self.evid),
            (6, enc_str_map(self.meta)),
        ]

    @classmethod
    def _from_fields(cls, f):
        return cls(dec_int(f[1]), dec_str(f[2]), dec_str(f[3]), dec_int(f[4]), f[5], dec_str_map(f[6]))


@dataclass(frozen=True)
class ExposureVector:
    """B_d(t) for every modelled domain, plus the logical time of the last update."""

    balances: Mapping[str, int]
    logical_time: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "balances", MappingProxyType(dict(self.balances)))

    @classmethod
    def zero(cls, registry: DomainRegistry) -> "ExposureVector":
        return cls({d: 0 for d in registry.modelled()}, 0)

    def __getitem__(self, did: str) -> int:
        return self.balances[did]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExposureVector):
            return NotImplemented
        return dict(self.balances) == dict(other.balances) and self.logical_time == other.logical_time

    def __hash__(self) -> int:
        return hash((tuple(sorted(self.balances.items())), self.logical_time))

    def as_dict(self) -> dict[str, int]:
        return dict(self.balances)


def _checked(value: int) -> int:
    if not I64_MIN <= value <= I64_MAX:
        raise ExposureOverflow(f"balance {value} overflows i64")
    return value


def validate_event(registry: DomainRegistry, e: TreasuryEvent, after: int) -> None:
    """Raise if ``e`` may not follow logical time ``after`` under ``registry``."""
    registry.get(e.src)
    registry.get(e.dst)
    if e.src == e.dst:
        raise SelfTransfer(f"event at t={e.t} moves value from {e.src!r} to itself")
    if e.v < 0:
        raise InvalidEvent(f"negative value {e.v} at t={e.t}")
    if e.t <= after:
        raise NonMonotoneTimestamp(f"event time {e.t} does not exceed {after}")


def apply_event(state: ExposureVector, e: TreasuryEvent, registry: DomainRegistry) -> ExposureVector:
    validate_event(registry, e, state.logical_time)
    bal = dict(state.balances)
    # EXTERNAL endpoints have no entry: the flow enters or leaves the modelled set
    if e.src in bal:
        bal[e.src] = _checked(bal[e.src] - e.v)
    if e.dst in bal:
        bal[e.dst] = _checked(bal[e.dst] + e.v)
    return ExposureVector(bal, e.t)


def fold_events(
    initial: ExposureVector, events: Sequence[TreasuryEvent], registry: DomainRegistry
) -> ExposureVector:
    state = initial
    for e in events:
        state = apply_event(state, e, registry)
    return state


def total_exposure(state: ExposureVector, registry: DomainRegistry, exclude_fee: bool = True) -> int:
    skip = registry.fee if exclude_fee else None
    total = 0
    for did, b in state.balances.items():
        if did != skip and not registry.is_external(did):
            total += b
    return _checked(total)


@dataclass(frozen=True)
class ClosedResult:
    closed: bool
    violation: TreasuryEvent | None = None

    def __bool__(self) -> bool:
        return self.closed


def is_closed(
    d0: Iterable[str],
    events: Sequence[TreasuryEvent],
    interval: tuple[int, int],
    fee_domain: str,
) -> ClosedResult:
    """Closedness of ``d0`` over the inclusive logical-time window ``interval``.

    An event in the window that touches ``d0`` must have both endpoints in
    ``d0`` or the fee sink. A half-open window (a, b] on integer clocks is
    ``(a + 1, b)``.
    """
    members = set(d0)
    if fee_domain in members:
        raise InputError("the fee sink cannot be part of a closed set")
    allowed = members | {fee_domain}
    lo, hi = interval
    for e in events:
        if not lo <= e.t <= hi:
            continue
        if (e.src in members or e.dst in members) and not (e.src in allowed and e.dst in allowed):
            return ClosedResult(False, e)
    return ClosedResult(True, None)
