"""Exception hierarchy shared by every ledger module."""

from __future__ import annotations


class LedgerError(Exception):
    """Base class for all errors raised by this package."""


class InputError(LedgerError):
    """Malformed caller input (bad file line, bad value, bad config)."""


class InvariantViolation(LedgerError):
    """An internal invariant failed; indicates a bug or corrupted state."""


# crypto
class UnsupportedRecord(InputError):
    pass


class DecodeError(InputError):
    pass


class EmptyLeafSet(InputError):
    pass


class IndexOutOfRange(InputError):
    pass


# treasury state
class UnknownDomain(InputError):
    pass


class NonMonotoneTimestamp(InputError):
    pass


class SelfTransfer(InputError):
    pass


class InvalidEvent(InputError):
    pass


class ExposureOverflow(InvariantViolation):
    pass


class InvalidDomainRegistry(InputError):
    pass


# proof of reserves
class CoinNotInSnapshot(InputError):
    pass


class InvalidCoin(InputError):
    pass


# ledger
class LedgerSealed(LedgerError):
    pass


class SnapshotMismatch(InvariantViolation):
    pass


class SubstrateUnavailable(LedgerError):
    pass


class SigningFailure(LedgerError):
    pass


# anchoring substrate
class PayloadTooLarge(InputError):
    pass


class InvalidForkPoint(InputError):
    pass


class PlatformAssumptionViolated(LedgerError):
    """A reorg at least as deep as the finality depth was scripted."""


# policies / experiments
class UnknownPolicy(InputError):
    pass


class MalformedAdversaryOutput(InputError):
    pass
