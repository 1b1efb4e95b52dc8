"""Simulated external chain: the authority for on-chain balances, account
nonces, and net-deposit accounting.

The chain is an immediately-final ordered log (no blocks, no reorgs): the
wallet's light-client assumption is that submitted state is verified, so the
simulator simply is that verified state. Nonce strictness is what gives
replay protection: a transaction is accepted only at exactly the account's
next nonce.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import canonical, crypto
from .errors import (
    BadSignature,
    InsufficientOnChainBalance,
    NftAlreadyHeld,
    NonceMismatch,
)
from .model import (
    GSM_DOMAIN,
    NON_FUNGIBLE,
    AssetId,
    PublicState,
    WalletState,
    normalize_address,
    project_public,
    validate_amount,
)


@dataclass(frozen=True)
class ChainAction:
    """One externally visible transfer from an account."""

    asset: AssetId
    amount: int
    src: str
    dst: str
    nonce: int
    payload: bytes | None = None

    def to_doc(self) -> dict:
        return {
            "kind": "transfer",
            "asset": self.asset.key(),
            "amount": self.amount,
            "from": self.src,
            "to": self.dst,
            "nonce": self.nonce,
            "payload": canonical.hex_str(self.payload) if self.payload is not None else None,
        }

    def message(self) -> bytes:
        """Canonical signing payload for this action."""
        return canonical.dumps(self.to_doc())


@dataclass(frozen=True)
class SignedTx:
    sender: str
    action: ChainAction
    signature: bytes


@dataclass(frozen=True)
class Receipt:
    nonce: int
    action: ChainAction


@dataclass(frozen=True)
class InboxEvent:
    """Deposit notification the harness feeds into the wallet's inbox."""

    asset: AssetId
    amount: int
    sender: str


@dataclass(frozen=True)
class DepositEvent:
    asset: AssetId
    amount: int
    src: str
    dst: str


class SimChain:
    """Single-writer ledger of balances, nonces, and accepted transactions."""

    def __init__(self):
        self.balances: dict[tuple[str, AssetId], int] = {}
        self.account_nonce: dict[str, int] = {}
        self.tx_log: list[ChainAction] = []
        self.deposit_log: list[DepositEvent] = []
        self.nft_owners: dict[AssetId, str] = {}

    def balance(self, address: str, asset: AssetId) -> int:
        return self.balances.get((address, asset), 0)

    def nonce(self, address: str) -> int:
        return self.account_nonce.get(address, 0)

    def faucet(self, address: str, asset: AssetId, amount: int) -> None:
        """Mint test funds to an address. Excluded from deposit accounting."""
        address = normalize_address(address)
        validate_amount(amount)
        if asset.kind == GSM_DOMAIN:
            raise ValueError("signing-authority assets do not exist on-chain")
        if asset.kind == NON_FUNGIBLE:
            if amount != 1:
                raise ValueError("NFT faucet amount must be 1")
            if asset in self.nft_owners:
                raise ValueError(f"{asset} already minted")
            self.nft_owners[asset] = address
        self.balances[(address, asset)] = self.balance(address, asset) + amount

    def _move(self, src: str, dst: str, asset: AssetId, amount: int) -> None:
        have = self.balance(src, asset)
        if have < amount:
            raise InsufficientOnChainBalance(f"{src} holds {have} of {asset}, needs {amount}")
        if asset.kind == NON_FUNGIBLE:
            if self.nft_owners.get(asset) != src:
                raise NftAlreadyHeld(f"{asset} is not owned by {src}")
            self.nft_owners[asset] = dst
        self.balances[(src, asset)] = have - amount
        self.balances[(dst, asset)] = self.balance(dst, asset) + amount

    def external_deposit(self, src: str, dst: str, asset: AssetId, amount: int) -> InboxEvent:
        """Transfer from an external sender to the wallet address, recorded
        as a deposit. Returns the event to mirror into the wallet inbox."""
        src, dst = normalize_address(src), normalize_address(dst)
        if amount <= 0:
            raise ValueError("deposit amount must be positive")
        if asset.kind == GSM_DOMAIN:
            raise ValueError("signing-authority assets do not exist on-chain")
        if asset.kind == NON_FUNGIBLE and self.nft_owners.get(asset) == dst:
            raise NftAlreadyHeld(f"{asset} is already held at {dst}")
        self._move(src, dst, asset, amount)
        self.deposit_log.append(DepositEvent(asset=asset, amount=amount, src=src, dst=dst))
        return InboxEvent(asset=asset, amount=amount, sender=src)

    def submit_tx(self, signed: SignedTx) -> Receipt:
        """Accept a signed transaction at exactly the account's next nonce.

        Rejections are total: a failed submission changes nothing, so a
        replayed or out-of-order transaction can never burn a nonce.
        """
        sender = normalize_address(signed.sender)
        action = signed.action
        if action.src != sender:
            raise BadSignature(f"action source {action.src} is not the sender {sender}")
        if not crypto.verify(sender, action.message(), signed.signature):
            raise BadSignature(f"signature does not verify under {sender}")
        expected = self.nonce(sender)
        if action.nonce != expected:
            raise NonceMismatch(f"expected nonce {expected}, got {action.nonce}")
        self._move(sender, action.dst, action.asset, action.amount)
        self.account_nonce[sender] = expected + 1
        self.tx_log.append(action)
        return Receipt(nonce=action.nonce, action=action)

    def ext_dep(self, asset: AssetId, pk: str) -> int:
        """Net external deposits: everything deposited to the address minus
        everything it has broadcast out, folded from the logs."""
        pk = normalize_address(pk)
        total = sum(d.amount for d in self.deposit_log if d.dst == pk and d.asset == asset)
        total -= sum(a.amount for a in self.tx_log if a.src == pk and a.asset == asset)
        return total

    def deposited_assets(self, pk: str) -> set[AssetId]:
        pk = normalize_address(pk)
        return {d.asset for d in self.deposit_log if d.dst == pk}

    def to_doc(self) -> dict:
        balances: dict[str, dict[str, int]] = {}
        for (address, asset), amount in self.balances.items():
            balances.setdefault(address, {})[asset.key()] = amount
        return {
            "balances": {addr: dict(sorted(book.items())) for addr, book in sorted(balances.items())},
            "accountNonce": dict(sorted(self.account_nonce.items())),
            "txLog": [action.to_doc() for action in self.tx_log],
            "depositLog": [
                {"asset": d.asset.key(), "amount": d.amount, "from": d.src, "to": d.dst}
                for d in self.deposit_log
            ],
            "nftOwners": {asset.key(): owner for asset, owner in sorted(self.nft_owners.items())},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> SimChain:
        chain = cls()
        for address, book in doc["balances"].items():
            for key, amount in book.items():
                chain.balances[(address, AssetId.from_key(key))] = canonical.parse_uint(amount)
        chain.account_nonce = {a: canonical.parse_uint(n) for a, n in doc["accountNonce"].items()}
        chain.tx_log = [_action_from_doc(a) for a in doc["txLog"]]
        chain.deposit_log = [
            DepositEvent(
                asset=AssetId.from_key(d["asset"]),
                amount=canonical.parse_uint(d["amount"]),
                src=d["from"],
                dst=d["to"],
            )
            for d in doc["depositLog"]
        ]
        chain.nft_owners = {AssetId.from_key(k): owner for k, owner in doc["nftOwners"].items()}
        return chain


def _action_from_doc(doc: dict) -> ChainAction:
    payload = doc.get("payload")
    return ChainAction(
        asset=AssetId.from_key(doc["asset"]),
        amount=canonical.parse_uint(doc["amount"]),
        src=doc["from"],
        dst=doc["to"],
        nonce=canonical.parse_uint(doc["nonce"]),
        payload=canonical.parse_hex(payload) if payload is not None else None,
    )


def external_trace(pub: PublicState) -> list[ChainAction]:
    """Map each outbox transaction to its on-chain action, in order.

    The trace carries no subaccount information: it is a pure function of
    the public projection, which is exactly why internal transfers are
    invisible to observers.
    """
    return [
        ChainAction(
            asset=entry.asset,
            amount=entry.amount,
            src=pub.pk,
            dst=entry.ext_dst,
            nonce=entry.nonce,
            payload=entry.payload,
        )
        for entry in pub.outbox_txs
    ]


def trace_bytes(actions: list[ChainAction]) -> bytes:
    return canonical.dumps([action.to_doc() for action in actions])


def observational_eq(s1: WalletState, s2: WalletState) -> bool:
    """True iff the two states present identical public views: same address,
    same outbox view (transactions and nonce), same per-asset totals.
    Equal views force equal external traces, which is asserted."""
    p1, p2 = project_public(s1), project_public(s2)
    equal = p1.canonical_bytes() == p2.canonical_bytes()
    if equal:
        assert trace_bytes(external_trace(p1)) == trace_bytes(external_trace(p2))
    return equal


class EoaBaseline:
    """Scripted single-key account used as the indistinguishability baseline.

    It executes the same deposit/withdraw sequence a wallet would, with a
    plain sequential nonce and no internal structure at all.
    """

    def __init__(self, pk: str):
        self.pk = normalize_address(pk)
        self.balances: dict[AssetId, int] = {}
        self.nonce = 0
        self.actions: list[ChainAction] = []

    def deposit(self, asset: AssetId, amount: int) -> None:
        self.balances[asset] = self.balances.get(asset, 0) + amount

    def withdraw(self, asset: AssetId, amount: int, dst: str) -> ChainAction:
        if self.balances.get(asset, 0) < amount:
            raise ValueError("baseline overdraw")
        self.balances[asset] -= amount
        action = ChainAction(
            asset=asset, amount=amount, src=self.pk, dst=normalize_address(dst), nonce=self.nonce
        )
        self.nonce += 1
        self.actions.append(action)
        return action

    def trace(self) -> list[ChainAction]:
        return list(self.actions)
