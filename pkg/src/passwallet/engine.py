"""The wallet transition system.

Every operation validates all preconditions before touching state, so a
rejected transition leaves the wallet bit-identical to its pre-state. All
mutations run through this module under a single writer; reads may happen
concurrently on snapshots.
"""

from __future__ import annotations

import hashlib
from typing import TYPE_CHECKING

from . import canonical
from .errors import (
    ALREADY_CLAIMED,
    AMOUNT_MISMATCH,
    INSUFFICIENT_BALANCE,
    NOT_ALLOWED,
    SELF_TRANSFER,
    UNITARY_VIOLATION,
    UNKNOWN_ENTRY,
    UNKNOWN_SUBACCOUNT,
    TransitionError,
)
from .model import (
    BROADCAST,
    GSM_DOMAIN,
    NON_FUNGIBLE,
    OP_CLAIM,
    OP_DEPOSIT,
    OP_GSM_GRANT,
    OP_GSM_SIGN,
    OP_TRANSFER,
    OP_WITHDRAW,
    PARTY_OUTBOX,
    PENDING,
    AssetId,
    InboxEntry,
    OutboxEntry,
    ProvenanceRecord,
    WalletState,
    make_meta,
    normalize_address,
    party_ext,
    party_sub,
    require_positive,
)
from .policy import PolicyContext, PolicySet
from .provenance import ProvenanceLog

if TYPE_CHECKING:
    from .chainsim import Receipt, SimChain


def create_wallet(root_id: str, key_source, policy: PolicySet | None = None) -> WalletState:
    """Create a fresh wallet: zero nonce, empty inbox/outbox/ledger/history,
    and the root subaccount holding default signing authority over every
    domain (no explicit assignments; the fallback rule covers them all)."""
    if not root_id:
        raise ValueError("root subaccount id must be nonempty")
    state = WalletState(
        keys=key_source.new_keypair(),
        root=root_id,
        history=ProvenanceLog(),
        policy=policy if policy is not None else PolicySet(),
    )
    state.subaccounts.add(root_id)
    return state


def add_subaccount(state: WalletState, subaccount: str) -> None:
    """Register a subaccount id. Receiving value registers implicitly, so
    this is only needed ahead of time (e.g. for bindings)."""
    if not subaccount:
        raise ValueError("subaccount id must be nonempty")
    state.subaccounts.add(subaccount)


def bind_sender(state: WalletState, sender: str, subaccount: str) -> None:
    """Route future claims of deposits from ``sender`` to one subaccount."""
    add_subaccount(state, subaccount)
    state.sender_bindings[normalize_address(sender)] = subaccount


def _append(state: WalletState, op: str, **fields) -> ProvenanceRecord:
    record = ProvenanceRecord(seq=state.history.next_seq, op=op, **fields)
    state.history.append(record)
    return record


def inbox_deposit(state: WalletState, asset: AssetId, amount: int, sender: str) -> InboxEntry:
    """Mirror an external deposit into the inbox as an unclaimed entry.

    The chain simulator is the authority on whether the deposit could
    happen; this only records the event. Ledger and nonce are untouched.
    """
    require_positive(amount)
    if asset.kind == GSM_DOMAIN:
        raise TransitionError(NOT_ALLOWED, "signing-authority assets cannot be deposited")
    if asset.kind == NON_FUNGIBLE and amount != 1:
        raise TransitionError(UNITARY_VIOLATION, f"NFT deposit amount must be 1, got {amount}")
    sender = normalize_address(sender)
    entry = InboxEntry(entry_id=state.next_entry_id, asset=asset, amount=amount, sender=sender)
    state.next_entry_id += 1
    state.inbox.append(entry)
    _append(
        state,
        OP_DEPOSIT,
        asset=asset,
        amount=amount,
        src=party_ext(sender),
        meta=make_meta(entryId=entry.entry_id),
    )
    state.state_version += 1
    return entry


def claim_inbox(state: WalletState, claimant: str, entry_id: int, amount: int | None = None) -> InboxEntry:
    """Claim an inbox entry into the claimant's ledger balance.

    Claims consume whole entries; partial claims are expressed as later
    internal transfers. The claimant must be the subaccount bound to the
    entry's sender, or the root when no binding exists.
    """
    # Entries are append-only with dense ids, so the id doubles as the index.
    entry = state.inbox[entry_id] if 0 <= entry_id < len(state.inbox) else None
    if entry is None or entry.entry_id != entry_id:
        raise TransitionError(UNKNOWN_ENTRY, f"no inbox entry {entry_id}")
    if entry.claimed:
        raise TransitionError(ALREADY_CLAIMED, f"entry {entry_id} was already claimed")
    if amount is not None and amount != entry.amount:
        raise TransitionError(
            AMOUNT_MISMATCH, f"entry {entry_id} holds {entry.amount}, not {amount}"
        )
    bound = state.sender_bindings.get(entry.sender)
    authorized = bound if bound is not None else state.root
    if claimant != authorized:
        raise TransitionError(NOT_ALLOWED, f"entry {entry_id} is claimable by {authorized!r} only")
    if entry.asset.unitary and total_balance(state, entry.asset) >= 1:
        raise TransitionError(UNITARY_VIOLATION, f"{entry.asset} is already held internally")
    entry.claimed = True
    state.subaccounts.add(claimant)
    state.credit(claimant, entry.asset, entry.amount)
    _append(
        state,
        OP_CLAIM,
        asset=entry.asset,
        amount=entry.amount,
        src=party_ext(entry.sender),
        dst=party_sub(claimant),
        meta=make_meta(entryId=entry.entry_id),
    )
    state.state_version += 1
    return entry


def _effective_balance(state: WalletState, subaccount: str, asset: AssetId) -> int:
    """Spendable balance; for domain assets, 1 exactly for the current signer."""
    if asset.kind == GSM_DOMAIN:
        return 1 if get_signer(state, asset.domain or "") == subaccount else 0
    return state.balance(subaccount, asset)


def internal_transfer(state: WalletState, src: str, dst: str, asset: AssetId, amount: int) -> None:
    """Move value between subaccounts, privately.

    Touches only the ledger, history, and (for domain assets) the signing
    assignment; never the outbox, nonce, or inbox. Transferring a domain
    asset delegates signing authority to the receiver atomically.
    """
    require_positive(amount)
    if src == dst:
        raise TransitionError(SELF_TRANSFER, "transfer source and destination are the same")
    if not dst:
        raise ValueError("destination subaccount id must be nonempty")
    if src not in state.subaccounts:
        raise TransitionError(UNKNOWN_SUBACCOUNT, f"unknown subaccount {src!r}")
    if _effective_balance(state, src, asset) < amount:
        raise TransitionError(
            INSUFFICIENT_BALANCE, f"{src} holds {_effective_balance(state, src, asset)} of {asset}"
        )
    ctx = PolicyContext(subaccount=src, asset=asset, amount=amount)
    if not state.policy.evaluate(ctx):
        raise TransitionError(NOT_ALLOWED, "policy rejects this transfer")
    state.subaccounts.add(dst)
    if asset.kind == GSM_DOMAIN:
        # The very first grant moves the implicit root default, which was
        # never materialized in the ledger; later grants move the unit.
        if state.balance(src, asset) >= 1:
            state.debit(src, asset, 1)
        state.credit(dst, asset, 1)
        state.gsm_assignments[asset.domain or ""] = dst
        _append(state, OP_GSM_GRANT, asset=asset, amount=1, src=party_sub(src), dst=party_sub(dst))
    else:
        state.debit(src, asset, amount)
        state.credit(dst, asset, amount)
        _append(state, OP_TRANSFER, asset=asset, amount=amount, src=party_sub(src), dst=party_sub(dst))
    state.policy.record_spend(ctx)
    state.state_version += 1


def withdraw(
    state: WalletState,
    subaccount: str,
    asset: AssetId,
    amount: int,
    ext_dst: str,
    payload: bytes | None = None,
) -> OutboxEntry:
    """Debit the subaccount and enqueue an on-chain action in the outbox.

    The entry's nonce is pre-assigned (current nonce plus pending count) so
    the queue stays gap-free before broadcast; the wallet nonce itself
    advances only when the entry is broadcast.
    """
    require_positive(amount)
    if asset.kind == GSM_DOMAIN:
        raise TransitionError(NOT_ALLOWED, "signing authority cannot exit on-chain")
    if subaccount not in state.subaccounts:
        raise TransitionError(UNKNOWN_SUBACCOUNT, f"unknown subaccount {subaccount!r}")
    if state.balance(subaccount, asset) < amount:
        raise TransitionError(
            INSUFFICIENT_BALANCE, f"{subaccount} holds {state.balance(subaccount, asset)} of {asset}"
        )
    ext_dst = normalize_address(ext_dst)
    ctx = PolicyContext(subaccount=subaccount, asset=asset, amount=amount, ext_dst=ext_dst)
    if not state.policy.evaluate(ctx):
        raise TransitionError(NOT_ALLOWED, "policy rejects this withdrawal")
    nonce = state.nonce + len(state.pending_outbox())
    entry = OutboxEntry(asset=asset, amount=amount, ext_dst=ext_dst, nonce=nonce, payload=payload)
    state.debit(subaccount, asset, amount)
    state.outbox.append(entry)
    _append(
        state,
        OP_WITHDRAW,
        asset=asset,
        amount=amount,
        src=party_sub(subaccount),
        dst=PARTY_OUTBOX,
        meta=make_meta(extDst=ext_dst, nonce=nonce),
    )
    state.policy.record_spend(ctx)
    state.state_version += 1
    return entry


def process_outbox(state: WalletState, chain: "SimChain", signer) -> list["Receipt"]:
    """Drain pending outbox entries strictly in FIFO order.

    Each entry is signed through the enclave handle and submitted to the
    chain; on acceptance it flips to broadcast and the wallet nonce
    increments. A chain rejection halts processing at that entry and
    propagates loudly (it signals engine/chain desync, which is a bug);
    entries already broadcast stay broadcast.
    """
    from .chainsim import ChainAction, SignedTx

    receipts: list[Receipt] = []
    for entry in state.outbox[state.nonce:]:
        if entry.status != PENDING:
            continue
        action = ChainAction(
            asset=entry.asset,
            amount=entry.amount,
            src=state.pk,
            dst=entry.ext_dst,
            nonce=entry.nonce,
            payload=entry.payload,
        )
        signed = SignedTx(sender=state.pk, action=action, signature=signer.sign(action.message()))
        receipts.append(chain.submit_tx(signed))
        entry.status = BROADCAST
        state.nonce += 1
        state.state_version += 1
    return receipts


def sign_gsm(state: WalletState, subaccount: str, domain: str, message: bytes, signer) -> bytes:
    """Sign a domain-scoped message under the wallet key.

    Only the domain's current signer may do this; the event is logged with
    the message digest so audits can tie signatures back to authority."""
    holder = get_signer(state, domain)
    if subaccount != holder:
        raise TransitionError(NOT_ALLOWED, f"{holder!r} holds signing authority over {domain!r}")
    signature = signer.sign(gsm_message(domain, message))
    _append(
        state,
        OP_GSM_SIGN,
        asset=AssetId.gsm(domain),
        src=party_sub(subaccount),
        meta=make_meta(messageDigest=canonical.hex_str(hashlib.sha256(message).digest())),
    )
    state.state_version += 1
    return signature


def gsm_message(domain: str, message: bytes) -> bytes:
    """Canonical byte encoding of a (domain, message) pair for signing."""
    return canonical.dumps({"domain": domain, "message": message})


def append_governance_record(state: WalletState, op: str, **meta) -> ProvenanceRecord:
    """Audit a key rotation or migration event. Used by the enclave runtime's
    recovery path; folds as a no-op in replay."""
    record = _append(state, op, meta=make_meta(**meta))
    state.state_version += 1
    return record


# --- queries -------------------------------------------------------------------


def get_balance(state: WalletState, subaccount: str, asset: AssetId) -> int:
    return state.balance(subaccount, asset)


def total_balance(state: WalletState, asset: AssetId) -> int:
    return sum(book.get(asset, 0) for book in state.ledger.values())


def get_signer(state: WalletState, domain: str) -> str:
    """The subaccount holding signing authority over a domain. Total: the
    specifically assigned signer when one exists, else the root."""
    return state.gsm_assignments.get(domain, state.root)


def history(
    state: WalletState,
    subaccount: str | None = None,
    asset: AssetId | None = None,
    op: str | None = None,
) -> list[ProvenanceRecord]:
    """Records matching every given filter, in sequence order."""
    records = state.history.records
    if subaccount is not None:
        tag = party_sub(subaccount)
        records = [r for r in records if r.src == tag or r.dst == tag]
    if asset is not None:
        records = [r for r in records if r.asset == asset]
    if op is not None:
        records = [r for r in records if r.op == op]
    return list(records)


def replay_consistent(state: WalletState) -> bool:
    """Does replaying the history reproduce the ledger exactly?"""
    from .errors import MalformedLog
    from .provenance import replay_ledger

    try:
        return replay_ledger(state.history) == state.ledger
    except MalformedLog:
        return False


def clone_state(state: WalletState) -> WalletState:
    """Independent copy sharing only immutable records and keys. Policy
    window counters are per-process state and start fresh in the clone."""
    from .policy import PolicySet

    return WalletState(
        keys=state.keys,
        root=state.root,
        history=ProvenanceLog(records=list(state.history.records)),
        policy=PolicySet.from_doc(state.policy.to_doc()),
        nonce=state.nonce,
        inbox=[InboxEntry(**vars(e)) for e in state.inbox],
        outbox=[OutboxEntry(**vars(e)) for e in state.outbox],
        ledger={sub: dict(book) for sub, book in state.ledger.items()},
        gsm_assignments=dict(state.gsm_assignments),
        sender_bindings=dict(state.sender_bindings),
        subaccounts=set(state.subaccounts),
        next_entry_id=state.next_entry_id,
        state_version=state.state_version,
    )
