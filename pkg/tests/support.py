"""Randomized transition walker with independent oracles.

Drives a wallet plus chain through long seeded operation sequences while
maintaining, entirely outside the engine:

- a fold oracle over the provenance records (the replay semantics applied
  incrementally, cross-checked by full from-genesis replays at checkpoints),
- net-deposit, unclaimed-inbox, and pending-outbox trackers fed only by the
  events the walker itself issues.

After every transition it asserts replay equivalence and the conservation
identity for the touched asset; checkpoints re-verify everything globally
against the chain's own log folds.
"""

from __future__ import annotations

import random

from passwallet import engine
from passwallet.chainsim import SimChain
from passwallet.enclave import EnclaveKeySource, EnclaveSigner
from passwallet.errors import TransitionError
from passwallet.model import GSM_DOMAIN, AssetId, WalletState
from passwallet.provenance import apply_record, check_allow, replay_ledger

TOKENS = [AssetId.fungible("ETH"), AssetId.fungible("USD"), AssetId.fungible("DAI")]
NFTS = [AssetId.nft("relics", i) for i in range(3)]
DOMAINS = ["app.example", "vote.example"]
SUBS = ["root", "alice", "bob", "carol", "dave"]
SENDERS = ["0x" + f"{i:02x}" * 20 for i in (0xA1, 0xA2, 0xA3)]
DESTS = ["0x" + f"{i:02x}" * 20 for i in (0xB1, 0xB2)]


class WalkError(AssertionError):
    pass


class RandomWalk:
    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self.chain = SimChain()
        self.state: WalletState = engine.create_wallet("root", EnclaveKeySource(seed=seed))
        self.signer = EnclaveSigner(self.state.keys)
        engine.bind_sender(self.state, SENDERS[1], "alice")
        for asset in TOKENS:
            self.chain.faucet(SENDERS[0], asset, 10**12)
            self.chain.faucet(SENDERS[1], asset, 10**12)
            self.chain.faucet(SENDERS[2], asset, 10**12)
        for index, nft in enumerate(NFTS):
            self.chain.faucet(SENDERS[index % len(SENDERS)], nft, 1)

        # Oracles and trackers, fed independently of engine internals.
        self.oracle_ledger: dict[str, dict[AssetId, int]] = {}
        self.oracle_seq = 0
        self.ext_dep: dict[AssetId, int] = {}
        self.unclaimed: dict[AssetId, int] = {}
        self.pending: dict[AssetId, int] = {}
        self.unclaimed_entries: list[int] = []
        self.steps = 0
        self.rejected = 0

    # --- operation generators -------------------------------------------------

    def _deposit(self):
        if self.rng.random() < 0.1:
            nft = self.rng.choice(NFTS)
            owner = self.chain.nft_owners.get(nft)
            if owner is None or owner == self.state.pk:
                return None
            asset, amount, sender = nft, 1, owner
        else:
            asset = self.rng.choice(TOKENS)
            amount = self.rng.randint(1, 10_000)
            sender = self.rng.choice(SENDERS)
        event = self.chain.external_deposit(sender, self.state.pk, asset, amount)
        entry = engine.inbox_deposit(self.state, event.asset, event.amount, event.sender)
        self.ext_dep[asset] = self.ext_dep.get(asset, 0) + amount
        self.unclaimed[asset] = self.unclaimed.get(asset, 0) + amount
        self.unclaimed_entries.append(entry.entry_id)
        return asset

    def _claim(self):
        if not self.unclaimed_entries:
            return None
        index = self.rng.randrange(len(self.unclaimed_entries))
        entry_id = self.unclaimed_entries[index]
        entry = self.state.inbox[entry_id]
        bound = self.state.sender_bindings.get(entry.sender)
        claimant = bound if bound is not None else "root"
        if self.rng.random() < 0.05:  # exercise the authorization guard
            wrong = self.rng.choice([s for s in SUBS if s != claimant])
            self._expect_rejection(
                lambda: engine.claim_inbox(self.state, wrong, entry_id), "NotAllowed"
            )
            return None
        engine.claim_inbox(self.state, claimant, entry_id)
        self.unclaimed_entries[index] = self.unclaimed_entries[-1]
        self.unclaimed_entries.pop()
        self.unclaimed[entry.asset] -= entry.amount
        return entry.asset

    def _holders(self, kinds=("ft", "nft")) -> list[tuple[str, AssetId, int]]:
        out = []
        for sub, book in self.state.ledger.items():
            for asset, amount in book.items():
                if amount > 0 and asset.kind in kinds:
                    out.append((sub, asset, amount))
        return out

    def _transfer(self):
        holders = self._holders()
        if not holders:
            return None
        src, asset, balance = self.rng.choice(holders)
        dst = self.rng.choice([s for s in SUBS if s != src])
        if self.rng.random() < 0.05:  # overdraw must be rejected atomically
            self._expect_rejection(
                lambda: engine.internal_transfer(self.state, src, dst, asset, balance + 1),
                "InsufficientBalance",
            )
            return None
        amount = 1 if asset.unitary else self.rng.randint(1, balance)
        engine.internal_transfer(self.state, src, dst, asset, amount)
        return asset

    def _withdraw(self):
        holders = self._holders()
        if not holders:
            return None
        src, asset, balance = self.rng.choice(holders)
        amount = 1 if asset.unitary else self.rng.randint(1, balance)
        engine.withdraw(self.state, src, asset, amount, self.rng.choice(DESTS))
        self.pending[asset] = self.pending.get(asset, 0) + amount
        return asset

    def _process(self):
        receipts = engine.process_outbox(self.state, self.chain, self.signer)
        for receipt in receipts:
            asset, amount = receipt.action.asset, receipt.action.amount
            self.pending[asset] -= amount
            self.ext_dep[asset] -= amount
        return receipts[-1].action.asset if receipts else None

    def _grant(self):
        domain = self.rng.choice(DOMAINS)
        holder = engine.get_signer(self.state, domain)
        dst = self.rng.choice([s for s in SUBS if s != holder])
        engine.internal_transfer(self.state, holder, dst, AssetId.gsm(domain), 1)
        return None  # domain assets sit outside deposit accounting

    def _expect_rejection(self, thunk, kind: str):
        before = len(self.state.history)
        try:
            thunk()
        except TransitionError as error:
            self.rejected += 1
            if error.kind != kind:
                raise WalkError(f"expected {kind}, got {error.kind}") from error
            if len(self.state.history) != before:
                raise WalkError("rejected transition appended history") from error
            return
        raise WalkError(f"expected {kind}, got success")

    # --- checking ---------------------------------------------------------------

    def _check_step(self, touched: AssetId | None):
        # Replay equivalence: fold the newly appended records into the
        # oracle's ledger and require exact agreement with the engine's.
        records = self.state.history.records
        while self.oracle_seq < len(records):
            apply_record(self.oracle_ledger, records[self.oracle_seq])
            self.oracle_seq += 1
        if self.oracle_ledger != self.state.ledger:
            raise WalkError(f"fold oracle disagrees with ledger at step {self.steps}")
        if touched is None or touched.kind == GSM_DOMAIN:
            return
        total = sum(book.get(touched, 0) for book in self.state.ledger.values())
        net = self.ext_dep.get(touched, 0)
        if total > net:
            raise WalkError(f"{touched}: internal {total} exceeds net deposits {net}")
        identity = total + self.unclaimed.get(touched, 0) + self.pending.get(touched, 0)
        if identity != net:
            raise WalkError(f"{touched}: conservation identity {identity} != {net}")

    def checkpoint(self):
        """Full global re-verification from first principles."""
        if replay_ledger(self.state.history) != self.state.ledger:
            raise WalkError("from-genesis replay disagrees with ledger")
        unclaimed: dict[AssetId, int] = {}
        for entry in self.state.inbox:
            if not entry.claimed:
                unclaimed[entry.asset] = unclaimed.get(entry.asset, 0) + entry.amount
        pending: dict[AssetId, int] = {}
        for entry in self.state.pending_outbox():
            pending[entry.asset] = pending.get(entry.asset, 0) + entry.amount
        for asset in self.chain.deposited_assets(self.state.pk):
            net = self.chain.ext_dep(asset, self.state.pk)
            if net != self.ext_dep.get(asset, 0):
                raise WalkError(f"{asset}: tracker {self.ext_dep.get(asset, 0)} != chain fold {net}")
            total = sum(book.get(asset, 0) for book in self.state.ledger.values())
            if total > net:
                raise WalkError(f"{asset}: internal total exceeds net deposits")
            if total + unclaimed.get(asset, 0) + pending.get(asset, 0) != net:
                raise WalkError(f"{asset}: global conservation identity broken")
        accepted = [a.nonce for a in self.chain.tx_log if a.src == self.state.pk]
        if accepted != list(range(len(accepted))):
            raise WalkError("chain accepted nonces are not dense")
        if self.state.nonce != self.chain.nonce(self.state.pk):
            raise WalkError("wallet and chain nonce disagree")
        for index, entry in enumerate(self.state.outbox):
            if entry.nonce != index:
                raise WalkError("outbox nonces are not gap-free")
        # Dual route: the pure log-based allow predicate must agree with the
        # balances the engine maintains, at and just above each balance.
        for sub, asset, balance in self._holders()[:4]:
            if not check_allow(sub, asset, balance, self.state.history, self.state.policy):
                raise WalkError(f"log-based allow denies held balance {sub}/{asset}")
            if check_allow(sub, asset, balance + 1, self.state.history, self.state.policy):
                raise WalkError(f"log-based allow grants more than held {sub}/{asset}")

    def step(self):
        roll = self.rng.random()
        if roll < 0.28:
            touched = self._deposit()
        elif roll < 0.60:
            touched = self._claim()
        elif roll < 0.80:
            touched = self._transfer()
        elif roll < 0.92:
            touched = self._withdraw()
        elif roll < 0.97:
            touched = self._process()
        else:
            touched = self._grant()
        self.steps += 1
        self._check_step(touched if isinstance(touched, AssetId) else None)

    def run(self, steps: int, checkpoint_every: int = 2000):
        for index in range(steps):
            self.step()
            if (index + 1) % checkpoint_every == 0:
                self.checkpoint()
        self.checkpoint()
