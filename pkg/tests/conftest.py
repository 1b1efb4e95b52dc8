"""Shared fixtures: deterministic key material, funded wallets, and a chain."""

from __future__ import annotations

import pytest

from passwallet import engine
from passwallet.chainsim import SimChain
from passwallet.enclave import EnclaveKeySource, EnclaveSigner
from passwallet.model import AssetId

ETH = AssetId.fungible("ETH")
USD = AssetId.fungible("USD")
SENDER = "0x" + "aa" * 20
SENDER2 = "0x" + "ab" * 20
DEST = "0x" + "bb" * 20


@pytest.fixture
def key_source():
    return EnclaveKeySource(seed=1234)


@pytest.fixture
def fresh(key_source):
    return engine.create_wallet("root", key_source)


@pytest.fixture
def chain():
    return SimChain()


@pytest.fixture
def funded(fresh, chain):
    """Wallet with 1000 ETH claimed by root, chain in agreement."""
    chain.faucet(SENDER, ETH, 10_000)
    event = chain.external_deposit(SENDER, fresh.pk, ETH, 1000)
    entry = engine.inbox_deposit(fresh, event.asset, event.amount, event.sender)
    engine.claim_inbox(fresh, "root", entry.entry_id)
    return fresh


@pytest.fixture
def signer(fresh):
    return EnclaveSigner(fresh.keys)
