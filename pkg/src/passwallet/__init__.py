"""Provenanced-access subaccount wallet.

A deterministic wallet state machine where access follows provenance: value
is usable by a subaccount only when the append-only history exhibits a
custody chain from an external deposit to it. External deposits arrive
through an inbox and must be claimed; all egress flows through a FIFO outbox
with gap-free nonces. Includes a simulated chain, a simulated enclave/KMS
runtime for recovery and liveness, deterministic persistence, and a
throughput benchmark harness.
"""

from .canonical import dumps as canonical_dumps
from .chainsim import (
    ChainAction,
    EoaBaseline,
    InboxEvent,
    Receipt,
    SignedTx,
    SimChain,
    external_trace,
    observational_eq,
    trace_bytes,
)
from .enclave import (
    Enclave,
    EnclaveKeySource,
    EnclaveSigner,
    ExecutionResult,
    FaultEvent,
    KmsConfig,
    Quote,
    Registry,
    QuorumPolicy,
    SealedContainer,
    World,
    attest_quote,
    derive_key,
    migrate,
    quorum_check,
    recover_and_execute,
    rotate_key,
    seal,
    unseal,
    verify_quote,
)
from .engine import (
    add_subaccount,
    bind_sender,
    claim_inbox,
    clone_state,
    create_wallet,
    get_balance,
    get_signer,
    history,
    inbox_deposit,
    internal_transfer,
    process_outbox,
    sign_gsm,
    total_balance,
    withdraw,
)
from .errors import (
    ChainError,
    KeyUnavailable,
    MalformedLog,
    NoProvenance,
    NonceMismatch,
    NotAttested,
    RollbackDetected,
    SealedStateCorrupt,
    SnapshotCorrupt,
    TransitionError,
    WalletError,
)
from .model import (
    AssetId,
    InboxEntry,
    KeyPair,
    OutboxEntry,
    ProvenanceRecord,
    PublicState,
    WalletState,
    project_public,
)
from .policy import (
    AllowAll,
    BlacklistDest,
    PolicyContext,
    PolicySet,
    SubaccountSpendCap,
    WhitelistDest,
)
from .provenance import (
    Attestation,
    ProvenanceLog,
    attest,
    check_allow,
    custody_chain,
    digest,
    replay_ledger,
    verify_attestation,
)

__version__ = "0.1.0"
