"""Exception taxonomy for the wallet, chain simulator, and enclave runtime.

Every error carries a machine-readable ``kind`` so the CLI can emit
``{"kind": ..., "detail": ...}`` on stderr without inspecting class names.
"""

from __future__ import annotations


class WalletError(Exception):
    """Base class; ``kind`` is a stable machine-readable discriminator."""

    kind = "WalletError"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.kind)
        self.detail = detail or self.kind

    def to_doc(self) -> dict:
        return {"kind": self.kind, "detail": self.detail}


# --- wallet transition errors -------------------------------------------------

INSUFFICIENT_BALANCE = "InsufficientBalance"
NOT_ALLOWED = "NotAllowed"
UNKNOWN_ENTRY = "UnknownEntry"
ALREADY_CLAIMED = "AlreadyClaimed"
AMOUNT_MISMATCH = "AmountMismatch"
UNKNOWN_SUBACCOUNT = "UnknownSubaccount"
UNITARY_VIOLATION = "UnitaryViolation"
SELF_TRANSFER = "SelfTransfer"
ZERO_AMOUNT = "ZeroAmount"

TRANSITION_KINDS = frozenset(
    {
        INSUFFICIENT_BALANCE,
        NOT_ALLOWED,
        UNKNOWN_ENTRY,
        ALREADY_CLAIMED,
        AMOUNT_MISMATCH,
        UNKNOWN_SUBACCOUNT,
        UNITARY_VIOLATION,
        SELF_TRANSFER,
        ZERO_AMOUNT,
    }
)


class TransitionError(WalletError):
    """A rejected wallet transition. The pre-state is left untouched."""

    def __init__(self, kind: str, detail: str = ""):
        if kind not in TRANSITION_KINDS:
            raise ValueError(f"unknown transition error kind: {kind}")
        self.kind = kind
        super().__init__(detail or kind)


# --- chain simulator ----------------------------------------------------------


class ChainError(WalletError):
    kind = "ChainError"


class NonceMismatch(ChainError):
    kind = "NonceMismatch"


class BadSignature(ChainError):
    kind = "BadSignature"


class InsufficientOnChainBalance(ChainError):
    kind = "InsufficientOnChainBalance"


class NftAlreadyHeld(ChainError):
    kind = "NftAlreadyHeld"


# --- provenance ---------------------------------------------------------------


class MalformedLog(WalletError):
    """Provenance log fails replay: non-dense sequence or negative balance."""

    kind = "MalformedLog"


class NoProvenance(WalletError):
    """Requested custody chain for a zero balance."""

    kind = "NoProvenance"


# --- enclave runtime and storage ----------------------------------------------


class KeyUnavailable(WalletError):
    kind = "KeyUnavailable"


class NotAttested(WalletError):
    kind = "NotAttested"


class SealedStateCorrupt(WalletError):
    kind = "SealedStateCorrupt"


class SnapshotCorrupt(WalletError):
    kind = "SnapshotCorrupt"


class RollbackDetected(WalletError):
    kind = "RollbackDetected"


class WalletLocked(WalletError):
    kind = "WalletLocked"


class LivenessExceeded(WalletError):
    """Recovery exceeded its round budget; reported instead of hanging."""

    kind = "LivenessExceeded"
