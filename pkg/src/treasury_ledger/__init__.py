"""Treasury proof ledger: signed transfer receipts, reserve snapshots and
substrate anchoring, with policy-scoped verifiable views."""

from __future__ import annotations

from .anchor import SimChain
from .crypto import BROKEN_TRUNCATED, SHA256, KeyPair, canonical_deserialize, canonical_serialize, use_hash_scheme
from .errors import InputError, InvariantViolation, LedgerError
from .ledger import AnchorMeta, Ledger, LivenessConfig, PublicParams, Scheduler
from .policy import Policy, View, gen_view, verify_view
from .por import CoinRecord, PoRSnapshot, snapshot
from .pot import PoTRecord, verify_chain
from .state import Domain, DomainKind, DomainRegistry, ExposureVector, TreasuryEvent, btc, is_closed

__all__ = [
    "AnchorMeta", "BROKEN_TRUNCATED", "CoinRecord", "Domain", "DomainKind", "DomainRegistry",
    "ExposureVector", "InputError", "InvariantViolation", "KeyPair", "Ledger", "LedgerError",
    "LivenessConfig", "PoRSnapshot", "PoTRecord", "Policy", "PublicParams", "SHA256", "Scheduler",
    "SimChain", "TreasuryEvent", "View", "btc", "canonical_deserialize", "canonical_serialize",
    "gen_view", "is_closed", "snapshot", "use_hash_scheme", "verify_chain", "verify_view",
]
