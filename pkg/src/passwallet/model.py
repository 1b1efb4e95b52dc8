"""Shared value types and the wallet state tuple.

Amounts are unsigned integers in base units (wei-like); there is no floating
point anywhere in the wallet. Asset identity is structural: two asset ids are
equal iff every field matches. Non-fungible and domain-authority assets only
ever carry balances in {0, 1}.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterable

from . import canonical
from .errors import TransitionError, ZERO_AMOUNT

if TYPE_CHECKING:  # avoids a runtime cycle; the log lives in .provenance
    from .policy import PolicySet
    from .provenance import ProvenanceLog

# Asset kinds
FUNGIBLE = "ft"
NON_FUNGIBLE = "nft"
GSM_DOMAIN = "gsm"

# Provenance record operations
OP_DEPOSIT = "deposit"
OP_CLAIM = "claim"
OP_TRANSFER = "transfer"
OP_WITHDRAW = "withdraw"
OP_GSM_SIGN = "gsm-sign"
OP_GSM_GRANT = "gsm-grant"
OP_KEY_ROTATION = "key-rotation"
OP_MIGRATION = "migration"

RECORD_OPS = frozenset(
    {
        OP_DEPOSIT,
        OP_CLAIM,
        OP_TRANSFER,
        OP_WITHDRAW,
        OP_GSM_SIGN,
        OP_GSM_GRANT,
        OP_KEY_ROTATION,
        OP_MIGRATION,
    }
)

# Outbox entry status
PENDING = "pending"
BROADCAST = "broadcast"

_ADDRESS_RE = re.compile(r"^0x[0-9a-f]{40}$")
_NAME_RE = re.compile(r"^[^:\s]+$")  # no colons (reserved for key encoding), no whitespace


def normalize_address(addr: str) -> str:
    """Canonicalize an external address to 0x + 40 lowercase hex chars."""
    if not isinstance(addr, str):
        raise ValueError(f"address must be str, got {type(addr).__name__}")
    value = addr.lower()
    if not value.startswith("0x"):
        value = "0x" + value
    if not _ADDRESS_RE.match(value):
        raise ValueError(f"not a 20-byte hex address: {addr!r}")
    return value


def validate_amount(amount: Any) -> int:
    """Amounts are non-negative ints; anything else is a caller bug."""
    if isinstance(amount, bool) or not isinstance(amount, int):
        raise ValueError(f"amount must be int, got {type(amount).__name__}")
    if amount < 0:
        raise ValueError(f"amount must be non-negative, got {amount}")
    return amount


def require_positive(amount: Any) -> int:
    """Transition guard: zero-value operations are rejected, not ignored."""
    value = validate_amount(amount)
    if value == 0:
        raise TransitionError(ZERO_AMOUNT, "amount must be positive")
    return value


@dataclass(frozen=True)
class AssetId:
    """Identifier for a fungible token, a single NFT, or a signing domain.

    Hashable and totally ordered via its canonical key, so it can serve as
    a dict key and sort deterministically in serialized maps.
    """

    kind: str
    symbol: str | None = None
    collection: str | None = None
    token_id: int | None = None
    domain: str | None = None

    def __post_init__(self):
        if self.kind == FUNGIBLE:
            if not self.symbol or not _NAME_RE.match(self.symbol):
                raise ValueError(f"bad fungible symbol: {self.symbol!r}")
            if self.collection is not None or self.token_id is not None or self.domain is not None:
                raise ValueError("fungible asset only carries a symbol")
        elif self.kind == NON_FUNGIBLE:
            if not self.collection or not _NAME_RE.match(self.collection):
                raise ValueError(f"bad NFT collection: {self.collection!r}")
            if not isinstance(self.token_id, int) or isinstance(self.token_id, bool) or self.token_id < 0:
                raise ValueError(f"bad NFT token id: {self.token_id!r}")
            if self.symbol is not None or self.domain is not None:
                raise ValueError("NFT asset only carries collection and token id")
        elif self.kind == GSM_DOMAIN:
            if not self.domain or not _NAME_RE.match(self.domain):
                raise ValueError(f"bad signing domain: {self.domain!r}")
            if self.symbol is not None or self.collection is not None or self.token_id is not None:
                raise ValueError("domain asset only carries a domain")
        else:
            raise ValueError(f"unknown asset kind: {self.kind!r}")

    @classmethod
    def fungible(cls, symbol: str) -> AssetId:
        return cls(kind=FUNGIBLE, symbol=symbol)

    @classmethod
    def nft(cls, collection: str, token_id: int) -> AssetId:
        return cls(kind=NON_FUNGIBLE, collection=collection, token_id=token_id)

    @classmethod
    def gsm(cls, domain: str) -> AssetId:
        return cls(kind=GSM_DOMAIN, domain=domain)

    @property
    def unitary(self) -> bool:
        """True when balances of this asset are restricted to {0, 1}."""
        return self.kind in (NON_FUNGIBLE, GSM_DOMAIN)

    def key(self) -> str:
        """Canonical text form, usable as a JSON map key."""
        if self.kind == FUNGIBLE:
            return f"ft:{self.symbol}"
        if self.kind == NON_FUNGIBLE:
            return f"nft:{self.collection}:{self.token_id}"
        return f"gsm:{self.domain}"

    @classmethod
    def from_key(cls, key: str) -> AssetId:
        parts = key.split(":")
        if parts[0] == "ft" and len(parts) == 2:
            return cls.fungible(parts[1])
        if parts[0] == "nft" and len(parts) == 3:
            return cls.nft(parts[1], int(parts[2]))
        if parts[0] == "gsm" and len(parts) == 2:
            return cls.gsm(parts[1])
        raise ValueError(f"not an asset key: {key!r}")

    def __lt__(self, other: AssetId) -> bool:
        return self.key() < other.key()

    def __str__(self) -> str:
        return self.key()


# Party tags used in provenance records: an external address, a subaccount,
# or the outbox itself.
PARTY_OUTBOX = "outbox"


def party_sub(subaccount: str) -> str:
    return f"sub:{subaccount}"


def party_ext(address: str) -> str:
    return f"ext:{normalize_address(address)}"


@dataclass(frozen=True)
class KeyPair:
    """Wallet signing key. The secret is used only by the enclave runtime;
    no operation outside that module accepts it as input, and snapshots
    never contain it."""

    pk: str
    sk: bytes | None = None

    def __post_init__(self):
        object.__setattr__(self, "pk", normalize_address(self.pk))
        if self.sk is not None and len(self.sk) != 32:
            raise ValueError("secret must be 32 bytes")

    def __repr__(self) -> str:  # never echo the secret
        return f"KeyPair(pk={self.pk!r}, sk={'<held>' if self.sk else None})"


@dataclass
class InboxEntry:
    """An unclaimed external deposit: (asset, amount, sender)."""

    entry_id: int
    asset: AssetId
    amount: int
    sender: str
    claimed: bool = False

    def to_doc(self) -> dict:
        return {
            "entryId": self.entry_id,
            "asset": self.asset.key(),
            "amount": self.amount,
            "sender": self.sender,
            "claimed": self.claimed,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> InboxEntry:
        return cls(
            entry_id=canonical.parse_uint(doc["entryId"]),
            asset=AssetId.from_key(doc["asset"]),
            amount=canonical.parse_uint(doc["amount"]),
            sender=normalize_address(doc["sender"]),
            claimed=bool(doc["claimed"]),
        )


@dataclass
class OutboxEntry:
    """A pending or broadcast on-chain action with a pre-assigned nonce."""

    asset: AssetId
    amount: int
    ext_dst: str
    nonce: int
    payload: bytes | None = None
    status: str = PENDING

    def to_doc(self) -> dict:
        return {
            "asset": self.asset.key(),
            "amount": self.amount,
            "extDst": self.ext_dst,
            "nonce": self.nonce,
            "payload": canonical.hex_str(self.payload) if self.payload is not None else None,
            "status": self.status,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> OutboxEntry:
        payload = doc.get("payload")
        return cls(
            asset=AssetId.from_key(doc["asset"]),
            amount=canonical.parse_uint(doc["amount"]),
            ext_dst=normalize_address(doc["extDst"]),
            nonce=canonical.parse_uint(doc["nonce"]),
            payload=canonical.parse_hex(payload) if payload is not None else None,
            status=doc["status"],
        )


@dataclass(frozen=True)
class ProvenanceRecord:
    """One immutable custody event. ``seq`` is dense and assigned at append.

    ``src``/``dst`` are tagged parties ("sub:<id>", "ext:<address>", or
    "outbox") so the serialized form is unambiguous.
    """

    seq: int
    op: str
    asset: AssetId | None = None
    amount: int | None = None
    src: str | None = None
    dst: str | None = None
    meta: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.op not in RECORD_OPS:
            raise ValueError(f"unknown record op: {self.op!r}")

    @property
    def meta_map(self) -> dict[str, str]:
        return dict(self.meta)

    def to_doc(self) -> dict:
        return {
            "seq": self.seq,
            "op": self.op,
            "asset": self.asset.key() if self.asset else None,
            "amount": self.amount,
            "from": self.src,
            "to": self.dst,
            "meta": dict(sorted(self.meta)),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> ProvenanceRecord:
        return cls(
            seq=canonical.parse_uint(doc["seq"]),
            op=doc["op"],
            asset=AssetId.from_key(doc["asset"]) if doc.get("asset") else None,
            amount=canonical.parse_uint(doc["amount"]) if doc.get("amount") is not None else None,
            src=doc.get("from"),
            dst=doc.get("to"),
            meta=tuple(sorted((k, str(v)) for k, v in (doc.get("meta") or {}).items())),
        )


def make_meta(**fields: Any) -> tuple[tuple[str, str], ...]:
    """Normalize record metadata into a hashable sorted tuple of str pairs."""
    return tuple(sorted((k, str(v)) for k, v in fields.items() if v is not None))


@dataclass
class WalletState:
    """The full wallet tuple: keys, nonce, inbox, outbox, ledger, history,
    plus domain-signing assignments, policy, and sender bindings.

    Mutated only through wallet-engine operations; everything else treats
    it as read-only.
    """

    keys: KeyPair
    root: str
    history: "ProvenanceLog"
    policy: "PolicySet"
    nonce: int = 0
    inbox: list[InboxEntry] = field(default_factory=list)
    outbox: list[OutboxEntry] = field(default_factory=list)
    ledger: dict[str, dict[AssetId, int]] = field(default_factory=dict)
    gsm_assignments: dict[str, str] = field(default_factory=dict)
    sender_bindings: dict[str, str] = field(default_factory=dict)
    subaccounts: set[str] = field(default_factory=set)
    next_entry_id: int = 0
    state_version: int = 0

    @property
    def pk(self) -> str:
        return self.keys.pk

    def balance(self, subaccount: str, asset: AssetId) -> int:
        return self.ledger.get(subaccount, {}).get(asset, 0)

    def credit(self, subaccount: str, asset: AssetId, amount: int) -> None:
        book = self.ledger.setdefault(subaccount, {})
        book[asset] = book.get(asset, 0) + amount

    def debit(self, subaccount: str, asset: AssetId, amount: int) -> None:
        book = self.ledger[subaccount]
        remaining = book[asset] - amount
        if remaining < 0:
            raise ValueError("ledger underflow; guards must run before commits")
        if remaining:
            book[asset] = remaining
        else:
            del book[asset]
            if not book:
                del self.ledger[subaccount]

    def pending_outbox(self) -> list[OutboxEntry]:
        # Broadcast entries form a prefix of exactly ``nonce`` entries, so
        # the pending tail starts there; the status filter is defensive.
        return [entry for entry in self.outbox[self.nonce:] if entry.status == PENDING]

    def to_doc(self, include_secret: bool = False) -> dict:
        """Canonical state document. The secret is included only for sealing."""
        doc = {
            "pk": self.pk,
            "root": self.root,
            "nonce": self.nonce,
            "stateVersion": self.state_version,
            "nextEntryId": self.next_entry_id,
            "subaccounts": sorted(self.subaccounts),
            "inbox": [entry.to_doc() for entry in self.inbox],
            "outbox": [entry.to_doc() for entry in self.outbox],
            "ledger": {
                sub: {asset.key(): amount for asset, amount in sorted(book.items())}
                for sub, book in sorted(self.ledger.items())
            },
            "history": [record.to_doc() for record in self.history.records],
            "gsmAssignments": dict(sorted(self.gsm_assignments.items())),
            "senderBindings": dict(sorted(self.sender_bindings.items())),
            "policy": self.policy.to_doc(),
        }
        if include_secret:
            if self.keys.sk is None:
                raise ValueError("state holds no secret to seal")
            doc["sk"] = canonical.hex_str(self.keys.sk)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> WalletState:
        from .policy import PolicySet
        from .provenance import ProvenanceLog

        secret = canonical.parse_hex(doc["sk"]) if "sk" in doc else None
        state = cls(
            keys=KeyPair(pk=doc["pk"], sk=secret),
            root=doc["root"],
            history=ProvenanceLog(
                records=[ProvenanceRecord.from_doc(r) for r in doc["history"]]
            ),
            policy=PolicySet.from_doc(doc["policy"]),
            nonce=canonical.parse_uint(doc["nonce"]),
            inbox=[InboxEntry.from_doc(e) for e in doc["inbox"]],
            outbox=[OutboxEntry.from_doc(e) for e in doc["outbox"]],
            ledger={
                sub: {AssetId.from_key(k): canonical.parse_uint(v) for k, v in book.items()}
                for sub, book in doc["ledger"].items()
            },
            gsm_assignments=dict(doc["gsmAssignments"]),
            sender_bindings=dict(doc["senderBindings"]),
            subaccounts=set(doc["subaccounts"]),
            next_entry_id=canonical.parse_uint(doc["nextEntryId"]),
            state_version=canonical.parse_uint(doc["stateVersion"]),
        )
        return state

    def canonical_bytes(self) -> bytes:
        """Byte form used by atomicity checks; never includes the secret."""
        return canonical.dumps(self.to_doc())


@dataclass(frozen=True)
class PublicState:
    """What an external observer can attribute to the wallet address:
    the address itself, the outbox view, and per-asset totals. Contains
    no subaccount identifiers and no internal ledger entries."""

    pk: str
    outbox_txs: tuple[OutboxEntry, ...]
    nonce: int
    asset_totals: tuple[tuple[AssetId, int], ...]

    def totals_map(self) -> dict[AssetId, int]:
        return dict(self.asset_totals)

    def to_doc(self) -> dict:
        return {
            "pk": self.pk,
            "outbox": {
                "txs": [entry.to_doc() for entry in self.outbox_txs],
                "nonce": self.nonce,
            },
            "assetTotals": {asset.key(): total for asset, total in self.asset_totals},
        }

    def canonical_bytes(self) -> bytes:
        return canonical.dumps(self.to_doc())


def project_public(state: WalletState) -> PublicState:
    """Project the externally visible view of a wallet state.

    Per-asset totals cover the internal ledger plus unclaimed inbox value,
    because the on-chain balance already reflects deposits whether or not
    they were claimed. Domain-authority assets are off-chain constructs and
    never appear in the projection. Deterministic; does not mutate state.
    """
    totals: dict[AssetId, int] = {}
    for book in state.ledger.values():
        for asset, amount in book.items():
            if asset.kind == GSM_DOMAIN:
                continue
            totals[asset] = totals.get(asset, 0) + amount
    for entry in state.inbox:
        if not entry.claimed:
            totals[entry.asset] = totals.get(entry.asset, 0) + entry.amount
    return PublicState(
        pk=state.pk,
        outbox_txs=tuple(state.outbox),
        nonce=state.nonce,
        asset_totals=tuple(sorted(totals.items())),
    )


def total_ledger(ledgers: Iterable[dict[AssetId, int]]) -> dict[AssetId, int]:
    """Sum per-asset balances across subaccount books."""
    totals: dict[AssetId, int] = {}
    for book in ledgers:
        for asset, amount in book.items():
            totals[asset] = totals.get(asset, 0) + amount
    return totals
