"""Throughput harness over the wallet's hot operations.

Nine categories: wallet creation, balance queries, claims, transfers,
withdrawal creation, history queries, the end-to-end workflow (deposit,
claim, transfer, withdraw, process outbox), a large consecutive
deposit-and-claim batch, and multi-threaded operation. Each category runs a
fixed per-trial operation count across independent trials and reports
ops/sec mean, standard deviation, min, and max. Operation sequences are
deterministic given the seed; only timings vary. The full invariant suite
runs after every category, so a benchmark can never paper over a broken
wallet.
"""

from __future__ import annotations

import csv
import hashlib
import statistics
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from . import canonical, engine
from .chainsim import SimChain
from .enclave import EnclaveKeySource, EnclaveSigner
from .model import BROADCAST, AssetId, WalletState
from .provenance import replay_ledger

ETH = AssetId.fungible("ETH")

CATEGORIES = [
    "Wallet Creation",
    "Account Balance Queries",
    "Inbox-to-Subaccount Claims",
    "Internal Subaccount Transfers",
    "Withdrawal Request Creation",
    "Transaction History Queries",
    "End-to-End Workflow",
    "Batch Deposit & Claim",
    "Multi-threaded Operations",
]


@dataclass(frozen=True)
class BenchConfig:
    ops_per_trial: int = 100
    trials: int = 10
    batch_size: int = 10_000
    threads: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("ops_per_trial", "trials", "batch_size", "threads"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class StatRow:
    operation: str
    mean: float
    std: float
    min: float
    max: float


def _stats(operation: str, rates: list[float]) -> StatRow:
    std = statistics.stdev(rates) if len(rates) > 1 else 0.0
    return StatRow(operation=operation, mean=statistics.mean(rates), std=std, min=min(rates), max=max(rates))


def _sender(index: int) -> str:
    return "0x" + hashlib.sha256(f"bench-sender:{index}".encode()).digest()[-20:].hex()


def _dest(index: int) -> str:
    return "0x" + hashlib.sha256(f"bench-dest:{index}".encode()).digest()[-20:].hex()


def verify_invariants(state: WalletState, chain: SimChain | None = None) -> None:
    """Assert every engine invariant on a live state.

    Checks replay consistency, unitary-asset exclusivity, outbox nonce
    discipline, and (when the chain is supplied) the conservation identity
    against net external deposits.
    """
    assert replay_ledger(state.history) == state.ledger, "replay does not reproduce the ledger"

    unitary_holders: dict[AssetId, int] = {}
    for sub, book in state.ledger.items():
        for asset, amount in book.items():
            assert amount >= 0, f"negative balance for {sub}/{asset}"
            if asset.unitary:
                assert amount <= 1, f"unitary asset {asset} at {amount}"
                unitary_holders[asset] = unitary_holders.get(asset, 0) + 1
    for asset, holders in unitary_holders.items():
        assert holders <= 1, f"unitary asset {asset} held by {holders} subaccounts"

    for index, entry in enumerate(state.outbox):
        assert entry.nonce == index, "outbox nonces are not gap-free"
        assert (entry.status == BROADCAST) == (index < state.nonce), "broadcast set is not a FIFO prefix"

    if chain is not None:
        assert state.nonce == chain.nonce(state.pk), "wallet nonce disagrees with chain"
        accepted = [a.nonce for a in chain.tx_log if a.src == state.pk]
        assert accepted == list(range(len(accepted))), "chain accepted a nonce gap"
        unclaimed: dict[AssetId, int] = {}
        for entry in state.inbox:
            if not entry.claimed:
                unclaimed[entry.asset] = unclaimed.get(entry.asset, 0) + entry.amount
        pending: dict[AssetId, int] = {}
        for entry in state.pending_outbox():
            pending[entry.asset] = pending.get(entry.asset, 0) + entry.amount
        for asset in chain.deposited_assets(state.pk):
            internal = engine.total_balance(state, asset)
            net = chain.ext_dep(asset, state.pk)
            assert internal <= net, f"internal {asset} exceeds net deposits"
            total = internal + unclaimed.get(asset, 0) + pending.get(asset, 0)
            assert total == net, f"conservation identity broken for {asset}: {total} != {net}"


def state_fingerprint(state: WalletState) -> bytes:
    """Order-insensitive digest for cross-schedule comparisons: covers the
    ledger, outbox, nonce, and totals but not history ordering (concurrent
    schedules legitimately serialize history differently)."""
    doc = state.to_doc()
    del doc["history"]
    return hashlib.sha256(canonical.dumps(doc)).digest()


def _funded_wallet(seed: int, subaccounts: int = 4, funding: int = 10**9):
    """Wallet with claimed funds spread across subaccounts, plus its chain."""
    chain = SimChain()
    state = engine.create_wallet("root", EnclaveKeySource(seed=seed))
    signer = EnclaveSigner(state.keys)
    sender = _sender(seed)
    chain.faucet(sender, ETH, funding * (subaccounts + 1))
    for index in range(subaccounts + 1):
        event = chain.external_deposit(sender, state.pk, ETH, funding)
        entry = engine.inbox_deposit(state, event.asset, event.amount, event.sender)
        engine.claim_inbox(state, "root", entry.entry_id)
    for index in range(subaccounts):
        engine.internal_transfer(state, "root", f"sub-{index}", ETH, funding)
    return state, chain, signer


def run_bench(config: BenchConfig) -> list[StatRow]:
    """Run all nine categories and return one stats row per category."""
    rows = [
        _bench_creation(config),
        _bench_balance_queries(config),
        _bench_claims(config),
        _bench_transfers(config),
        _bench_withdrawals(config),
        _bench_history(config),
        _bench_end_to_end(config),
        _bench_batch(config),
        _bench_threaded(config, config.threads),
    ]
    return rows


def _bench_creation(config: BenchConfig) -> StatRow:
    rates = []
    state = None
    for trial in range(config.trials):
        source = EnclaveKeySource(seed=config.seed * 1000 + trial)
        start = time.perf_counter()
        for index in range(config.ops_per_trial):
            state = engine.create_wallet("root", source)
        rates.append(config.ops_per_trial / (time.perf_counter() - start))
    verify_invariants(state)
    return _stats(CATEGORIES[0], rates)


def _bench_balance_queries(config: BenchConfig) -> StatRow:
    state, chain, _ = _funded_wallet(config.seed)
    subs = sorted(state.subaccounts)
    rates = []
    for trial in range(config.trials):
        start = time.perf_counter()
        for index in range(config.ops_per_trial):
            engine.get_balance(state, subs[index % len(subs)], ETH)
        rates.append(config.ops_per_trial / (time.perf_counter() - start))
    verify_invariants(state, chain)
    return _stats(CATEGORIES[1], rates)


def _bench_claims(config: BenchConfig) -> StatRow:
    rates = []
    state = chain = None
    for trial in range(config.trials):
        chain = SimChain()
        state = engine.create_wallet("root", EnclaveKeySource(seed=config.seed + trial))
        sender = _sender(trial)
        chain.faucet(sender, ETH, config.ops_per_trial * 10)
        entries = []
        for index in range(config.ops_per_trial):
            chain.external_deposit(sender, state.pk, ETH, 10)
            entries.append(engine.inbox_deposit(state, ETH, 10, sender))
        start = time.perf_counter()
        for entry in entries:
            engine.claim_inbox(state, "root", entry.entry_id)
        rates.append(config.ops_per_trial / (time.perf_counter() - start))
    verify_invariants(state, chain)
    return _stats(CATEGORIES[2], rates)


def _bench_transfers(config: BenchConfig) -> StatRow:
    state, chain, _ = _funded_wallet(config.seed)
    rates = []
    for trial in range(config.trials):
        start = time.perf_counter()
        for index in range(config.ops_per_trial):
            src, dst = ("root", "sub-0") if index % 2 == 0 else ("sub-0", "root")
            engine.internal_transfer(state, src, dst, ETH, 1)
        rates.append(config.ops_per_trial / (time.perf_counter() - start))
    verify_invariants(state, chain)
    return _stats(CATEGORIES[3], rates)


def _bench_withdrawals(config: BenchConfig) -> StatRow:
    state, chain, _ = _funded_wallet(config.seed)
    rates = []
    for trial in range(config.trials):
        start = time.perf_counter()
        for index in range(config.ops_per_trial):
            engine.withdraw(state, "root", ETH, 1, _dest(index))
        rates.append(config.ops_per_trial / (time.perf_counter() - start))
    verify_invariants(state, chain)
    return _stats(CATEGORIES[4], rates)


def _bench_history(config: BenchConfig) -> StatRow:
    state, chain, _ = _funded_wallet(config.seed)
    for index in range(200):  # a realistic log to filter over
        src, dst = ("root", "sub-1") if index % 2 == 0 else ("sub-1", "root")
        engine.internal_transfer(state, src, dst, ETH, 1)
    subs = sorted(state.subaccounts)
    rates = []
    for trial in range(config.trials):
        start = time.perf_counter()
        for index in range(config.ops_per_trial):
            engine.history(state, subaccount=subs[index % len(subs)])
        rates.append(config.ops_per_trial / (time.perf_counter() - start))
    verify_invariants(state, chain)
    return _stats(CATEGORIES[5], rates)


def _bench_end_to_end(config: BenchConfig) -> StatRow:
    """deposit -> claim -> transfer -> withdraw -> process outbox, as one op."""
    rates = []
    state = chain = None
    for trial in range(config.trials):
        chain = SimChain()
        state = engine.create_wallet("root", EnclaveKeySource(seed=config.seed + trial))
        signer = EnclaveSigner(state.keys)
        sender = _sender(trial)
        chain.faucet(sender, ETH, config.ops_per_trial * 100)
        start = time.perf_counter()
        for index in range(config.ops_per_trial):
            event = chain.external_deposit(sender, state.pk, ETH, 100)
            entry = engine.inbox_deposit(state, event.asset, event.amount, event.sender)
            engine.claim_inbox(state, "root", entry.entry_id)
            engine.internal_transfer(state, "root", "worker", ETH, 100)
            engine.withdraw(state, "worker", ETH, 100, _dest(index))
            engine.process_outbox(state, chain, signer)
        rates.append(config.ops_per_trial / (time.perf_counter() - start))
    verify_invariants(state, chain)
    return _stats(CATEGORIES[6], rates)


def _bench_batch(config: BenchConfig) -> StatRow:
    """batch_size consecutive deposit+claim pairs per trial."""
    rates = []
    state = chain = None
    for trial in range(config.trials):
        chain = SimChain()
        state = engine.create_wallet("root", EnclaveKeySource(seed=config.seed + trial))
        sender = _sender(trial)
        chain.faucet(sender, ETH, config.batch_size * 10)
        start = time.perf_counter()
        for index in range(config.batch_size):
            chain.external_deposit(sender, state.pk, ETH, 10)
            entry = engine.inbox_deposit(state, ETH, 10, sender)
            engine.claim_inbox(state, "root", entry.entry_id)
        rates.append(2 * config.batch_size / (time.perf_counter() - start))
    verify_invariants(state, chain)
    return _stats(CATEGORIES[7], rates)


def _threaded_trial(config: BenchConfig, threads: int, trial_seed: int):
    """One transfer-then-withdraw round: workers move value within disjoint
    subaccount pairs under the engine lock, then withdrawals drain serially.

    The work itself is shaped by ``config.threads`` groups regardless of how
    many workers run it, so the final state cannot depend on thread count.
    Returns (state, chain, elapsed seconds, op count).
    """
    groups = config.threads
    state, chain, signer = _funded_wallet(trial_seed, subaccounts=groups * 2)
    lock = threading.Lock()
    per_group = max(1, config.ops_per_trial // groups)

    def work(worker: int) -> None:
        for group in range(worker, groups, threads):
            src, dst = f"sub-{2 * group}", f"sub-{2 * group + 1}"
            for index in range(per_group):
                with lock:
                    if index % 2 == 0:
                        engine.internal_transfer(state, src, dst, ETH, 1)
                    else:
                        engine.internal_transfer(state, dst, src, ETH, 1)

    pool = [threading.Thread(target=work, args=(w,)) for w in range(threads)]
    start = time.perf_counter()
    for thread in pool:
        thread.start()
    for thread in pool:
        thread.join()
    with lock:
        for group in range(groups):
            engine.withdraw(state, f"sub-{2 * group}", ETH, 1, _dest(group))
        engine.process_outbox(state, chain, signer)
    elapsed = time.perf_counter() - start
    return state, chain, elapsed, per_group * groups + groups


def _bench_threaded(config: BenchConfig, threads: int) -> StatRow:
    rates = []
    state = chain = None
    for trial in range(config.trials):
        state, chain, elapsed, ops = _threaded_trial(config, threads, config.seed + trial)
        rates.append(ops / elapsed)
    verify_invariants(state, chain)
    return _stats(f"{CATEGORIES[8]} ({threads} threads)", rates)


def run_threaded_once(config: BenchConfig, threads: int) -> bytes:
    """Run one threaded trial and return the final state fingerprint; used to
    check that thread count cannot change the outcome."""
    state, chain, _, _ = _threaded_trial(config, threads, config.seed)
    verify_invariants(state, chain)
    return state_fingerprint(state)


def write_csv(rows: list[StatRow], path: str | Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["operation", "mean", "std", "min", "max"])
        for row in rows:
            writer.writerow([row.operation, f"{row.mean:.1f}", f"{row.std:.1f}", f"{row.min:.1f}", f"{row.max:.1f}"])


def format_table(rows: list[StatRow]) -> str:
    width = max(len(row.operation) for row in rows)
    lines = [f"{'Operation'.ljust(width)}  {'Mean':>12} {'Std Dev':>12} {'Min':>12} {'Max':>12}"]
    for row in rows:
        lines.append(
            f"{row.operation.ljust(width)}  {row.mean:>12,.0f} {row.std:>12,.0f} {row.min:>12,.0f} {row.max:>12,.0f}"
        )
    return "\n".join(lines)
