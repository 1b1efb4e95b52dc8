"""Append-only provenance log, the replay oracle, and attestations.

The log is the source of truth for access decisions: replaying it from
genesis must reproduce the wallet ledger exactly, and the digest over its
canonical serialization is what the enclave signs to attest custody chains.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import canonical, crypto
from .errors import MalformedLog, NoProvenance
from .model import (
    GSM_DOMAIN,
    OP_CLAIM,
    OP_DEPOSIT,
    OP_GSM_GRANT,
    OP_TRANSFER,
    OP_WITHDRAW,
    AssetId,
    ProvenanceRecord,
    party_sub,
)
from .policy import PolicyContext, PolicySet


@dataclass
class ProvenanceLog:
    """Append-only sequence of custody records; ``next_seq == len(records)``."""

    records: list[ProvenanceRecord] = field(default_factory=list)

    @property
    def next_seq(self) -> int:
        return len(self.records)

    def append(self, record: ProvenanceRecord) -> ProvenanceRecord:
        if record.seq != self.next_seq:
            raise MalformedLog(f"expected seq {self.next_seq}, got {record.seq}")
        self.records.append(record)
        return record

    def prefix(self, length: int) -> Sequence[ProvenanceRecord]:
        if length < 0 or length > len(self.records):
            raise ValueError(f"prefix length {length} out of range")
        return self.records[:length]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def _sub_of(party: str | None) -> str | None:
    if party and party.startswith("sub:"):
        return party[4:]
    return None


def apply_record(ledger: dict[str, dict[AssetId, int]], record: ProvenanceRecord) -> None:
    """Fold one record into an implied ledger, in place.

    Deposits touch only the inbox, withdrawals only debit, claims and
    transfers move value, and domain grants move the unit of signing
    authority (the very first grant debits nobody: authority starts as the
    root's implicit default). Signing, rotation, and migration records are
    audit-only. Raises MalformedLog if a fold would drive a balance negative
    or break unitarity.
    """
    op = record.op
    if op in (OP_DEPOSIT,):
        return
    asset, amount = record.asset, record.amount
    if op == OP_CLAIM:
        claimant = _sub_of(record.dst)
        if claimant is None or asset is None or amount is None:
            raise MalformedLog(f"claim record {record.seq} is incomplete")
        book = ledger.setdefault(claimant, {})
        book[asset] = book.get(asset, 0) + amount
        if asset.unitary and book[asset] > 1:
            raise MalformedLog(f"record {record.seq} gives {claimant} {book[asset]} of unitary {asset}")
        return
    if op == OP_TRANSFER:
        src, dst = _sub_of(record.src), _sub_of(record.dst)
        if src is None or dst is None or asset is None or amount is None:
            raise MalformedLog(f"transfer record {record.seq} is incomplete")
        have = ledger.get(src, {}).get(asset, 0)
        if have < amount:
            raise MalformedLog(f"record {record.seq} overdraws {src}: {have} < {amount}")
        _debit(ledger, src, asset, amount)
        book = ledger.setdefault(dst, {})
        book[asset] = book.get(asset, 0) + amount
        if asset.unitary and book[asset] > 1:
            raise MalformedLog(f"record {record.seq} gives {dst} {book[asset]} of unitary {asset}")
        return
    if op == OP_WITHDRAW:
        src = _sub_of(record.src)
        if src is None or asset is None or amount is None:
            raise MalformedLog(f"withdraw record {record.seq} is incomplete")
        have = ledger.get(src, {}).get(asset, 0)
        if have < amount:
            raise MalformedLog(f"record {record.seq} overdraws {src}: {have} < {amount}")
        _debit(ledger, src, asset, amount)
        return
    if op == OP_GSM_GRANT:
        src, dst = _sub_of(record.src), _sub_of(record.dst)
        if src is None or dst is None or asset is None or asset.kind != GSM_DOMAIN:
            raise MalformedLog(f"grant record {record.seq} is incomplete")
        if ledger.get(src, {}).get(asset, 0) >= 1:
            _debit(ledger, src, asset, 1)
        book = ledger.setdefault(dst, {})
        book[asset] = book.get(asset, 0) + 1
        if book[asset] > 1:
            raise MalformedLog(f"record {record.seq} duplicates authority over {asset}")
        return
    # gsm-sign, key-rotation, migration: audit-only.


def _debit(ledger: dict[str, dict[AssetId, int]], sub: str, asset: AssetId, amount: int) -> None:
    book = ledger[sub]
    remaining = book[asset] - amount
    if remaining:
        book[asset] = remaining
    else:
        del book[asset]
        if not book:
            del ledger[sub]


def replay_ledger(history: ProvenanceLog | Iterable[ProvenanceRecord]) -> dict[str, dict[AssetId, int]]:
    """Fold the whole log into the ledger it implies.

    This is the independent oracle for every conservation test: it knows
    nothing about the engine's incremental bookkeeping.
    """
    records = history.records if isinstance(history, ProvenanceLog) else list(history)
    ledger: dict[str, dict[AssetId, int]] = {}
    for index, record in enumerate(records):
        if record.seq != index:
            raise MalformedLog(f"non-dense sequence at index {index}: seq {record.seq}")
        apply_record(ledger, record)
    return ledger


def gsm_holder_from_records(records: Iterable[ProvenanceRecord], domain: str, root: str) -> str:
    """Who holds signing authority over a domain per the log alone:
    the receiver of the latest grant, else the root by default."""
    holder = root
    for record in records:
        if record.op == OP_GSM_GRANT and record.asset and record.asset.domain == domain:
            granted = _sub_of(record.dst)
            if granted is not None:
                holder = granted
    return holder


def check_allow(
    subaccount: str,
    asset: AssetId,
    amount: int,
    history: ProvenanceLog | Iterable[ProvenanceRecord],
    policy: PolicySet,
    ext_dst: str | None = None,
    root: str | None = None,
) -> bool:
    """The provenance predicate: value is usable by a subaccount only if the
    log exhibits custody reaching it, conjoined with every policy constraint.

    Pure function of its inputs; returns False rather than raising, including
    on a malformed log. For domain-authority assets the reachable balance is
    1 exactly for the current signer (root holds the default when no grant
    was ever logged, hence the ``root`` argument).
    """
    records = history.records if isinstance(history, ProvenanceLog) else list(history)
    try:
        ledger = replay_ledger(records)
    except MalformedLog:
        return False
    if asset.kind == GSM_DOMAIN and root is not None:
        holder = gsm_holder_from_records(records, asset.domain or "", root)
        reachable = 1 if holder == subaccount else 0
    else:
        reachable = ledger.get(subaccount, {}).get(asset, 0)
    if reachable < amount:
        return False
    return policy.evaluate(PolicyContext(subaccount=subaccount, asset=asset, amount=amount, ext_dst=ext_dst))


def digest(history: ProvenanceLog | Iterable[ProvenanceRecord], covered: int | None = None) -> bytes:
    """SHA-256 over the canonical serialization of a log prefix.

    The digest covers every record field including metadata, so any mutation
    anywhere in the prefix changes the hash.
    """
    records = history.records if isinstance(history, ProvenanceLog) else list(history)
    if covered is None:
        covered = len(records)
    if covered < 0 or covered > len(records):
        raise ValueError(f"covered length {covered} out of range")
    return hashlib.sha256(canonical.dumps([r.to_doc() for r in records[:covered]])).digest()


@dataclass(frozen=True)
class Attestation:
    """Enclave-signed digest of a log prefix, bound to a nonce snapshot for
    freshness."""

    digest: bytes
    signature: bytes
    covered_seq: int
    nonce: int

    def to_doc(self) -> dict:
        return {
            "digest": canonical.hex_str(self.digest),
            "signature": canonical.hex_str(self.signature),
            "coveredSeq": self.covered_seq,
            "nonce": self.nonce,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> Attestation:
        return cls(
            digest=canonical.parse_hex(doc["digest"]),
            signature=canonical.parse_hex(doc["signature"]),
            covered_seq=canonical.parse_uint(doc["coveredSeq"]),
            nonce=canonical.parse_uint(doc["nonce"]),
        )


def _attestation_message(log_digest: bytes, covered_seq: int, nonce: int) -> bytes:
    return canonical.dumps(
        {"digest": canonical.hex_str(log_digest), "coveredSeq": covered_seq, "nonce": nonce}
    )


def attest(history: ProvenanceLog, signer, nonce: int) -> Attestation:
    """Sign the digest of the current log through the enclave handle."""
    covered = len(history)
    log_digest = digest(history)
    signature = signer.sign(_attestation_message(log_digest, covered, nonce))
    return Attestation(digest=log_digest, signature=signature, covered_seq=covered, nonce=nonce)


def verify_attestation(pk: str, attestation: Attestation, history: ProvenanceLog | Iterable[ProvenanceRecord]) -> bool:
    """True iff the signature is valid over the digest of the log's prefix
    of the attested length. Extending the log after attestation does not
    invalidate it; altering any covered record does."""
    records = history.records if isinstance(history, ProvenanceLog) else list(history)
    if attestation.covered_seq > len(records):
        return False
    recomputed = digest(records, covered=attestation.covered_seq)
    if recomputed != attestation.digest:
        return False
    message = _attestation_message(attestation.digest, attestation.covered_seq, attestation.nonce)
    return crypto.verify(pk, message, attestation.signature)


def custody_chain(
    history: ProvenanceLog | Iterable[ProvenanceRecord],
    subaccount: str,
    asset: AssetId,
) -> list[ProvenanceRecord]:
    """Minimal ordered subsequence of the log whose fold credits the
    subaccount with its current balance of the asset.

    Greedy backward traversal: walk from the newest record, take credits
    into accounts that still owe coverage, and propagate the need upstream
    to each credit's source until it bottoms out at deposits. Deterministic,
    and every returned record involves the asset.
    """
    records = history.records if isinstance(history, ProvenanceLog) else list(history)
    balance = replay_ledger(records).get(subaccount, {}).get(asset, 0)
    if balance <= 0:
        raise NoProvenance(f"{subaccount} holds no {asset}")

    need: dict[str, int] = {party_sub(subaccount): balance}
    needed_entries: set[str] = set()
    chain: list[ProvenanceRecord] = []
    for record in reversed(records):
        if record.asset != asset:
            continue
        if record.op == OP_CLAIM:
            dst = record.dst or ""
            if need.get(dst, 0) > 0 and record.amount:
                chain.append(record)
                need[dst] = max(0, need[dst] - record.amount)
                entry_id = record.meta_map.get("entryId")
                if entry_id is not None:
                    needed_entries.add(entry_id)
        elif record.op in (OP_TRANSFER, OP_GSM_GRANT):
            dst, src = record.dst or "", record.src or ""
            if need.get(dst, 0) > 0 and record.amount:
                chain.append(record)
                need[dst] = max(0, need[dst] - record.amount)
                need[src] = need.get(src, 0) + record.amount
        elif record.op == OP_DEPOSIT:
            entry_id = record.meta_map.get("entryId")
            if entry_id is not None and entry_id in needed_entries:
                chain.append(record)
                needed_entries.discard(entry_id)
    chain.reverse()
    return chain
