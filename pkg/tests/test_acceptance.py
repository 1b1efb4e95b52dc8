"""Acceptance suite: one test per system-level guarantee, zero tolerance.

Run with ``pytest -v -s tests/test_acceptance.py`` to see one pass/fail line
per criterion. Criteria 3, 5, and 6 share the same twenty 10,000-transition
randomized runs (module fixture); everything they assert happens per step
inside the walker, with global re-verification at checkpoints.
"""

from __future__ import annotations

import random
import time

import pytest

from passwallet import bench, engine
from passwallet.chainsim import (
    ChainAction,
    EoaBaseline,
    SignedTx,
    SimChain,
    external_trace,
    observational_eq,
    trace_bytes,
)
from passwallet.enclave import (
    Enclave,
    EnclaveKeySource,
    EnclaveSigner,
    FaultEvent,
    KmsConfig,
    QuorumPolicy,
    Registry,
    World,
    derive_key,
    recover_and_execute,
    rotate_key,
    seal,
    unseal,
)
from passwallet.errors import NonceMismatch, NotAttested, TransitionError
from passwallet.model import AssetId, ProvenanceRecord, project_public
from passwallet.provenance import attest, verify_attestation

from support import SENDERS, SUBS, TOKENS, RandomWalk

ETH = AssetId.fungible("ETH")
DESTS = ["0x" + f"{i:02x}" * 20 for i in (0xD1, 0xD2, 0xD3)]

PASS_LINE = "[criterion {num:>2}] {name}: PASS"


def report(num: int, name: str) -> None:
    print(PASS_LINE.format(num=num, name=name))


# --- shared randomized runs (criteria 3, 5, 6) -----------------------------------

WALK_SEEDS = list(range(20))
WALK_STEPS = 10_000


@pytest.fixture(scope="module")
def walks():
    """Twenty seeded 10,000-transition runs. The walker asserts, after every
    single transition, replay-oracle equivalence and the conservation
    identity for the touched asset; checkpoints re-verify every asset
    globally against the chain's own log folds."""
    started = time.perf_counter()
    finished = []
    for seed in WALK_SEEDS:
        walk = RandomWalk(seed=seed)
        walk.run(WALK_STEPS)
        finished.append(walk)
    elapsed = time.perf_counter() - started
    return finished, elapsed


def test_criterion_01_internal_transfer_privacy():
    """1,000 randomized pairs of states related by internal-transfer-only
    schedules (5-50 transfers) are byte-equal externally. Zero tolerance,
    under 10 seconds."""
    started = time.perf_counter()
    domains = ["a.example", "b.example"]

    def build_base(seed: int):
        rng = random.Random(seed)
        state = engine.create_wallet("root", EnclaveKeySource(seed=seed))
        for index in range(rng.randint(2, 4)):
            asset = rng.choice(TOKENS)
            entry = engine.inbox_deposit(state, asset, rng.randint(50, 500), SENDERS[0])
            engine.claim_inbox(state, "root", entry.entry_id)
        return state, rng

    def scramble(state, rng: random.Random):
        for _ in range(rng.randint(5, 50)):
            if rng.random() < 0.1:
                domain = rng.choice(domains)
                holder = engine.get_signer(state, domain)
                target = rng.choice([s for s in SUBS if s != holder])
                engine.internal_transfer(state, holder, target, AssetId.gsm(domain), 1)
                continue
            holders = [
                (sub, asset, amount)
                for sub, book in state.ledger.items()
                for asset, amount in book.items()
                if amount > 0 and not asset.unitary
            ]
            if not holders:
                continue
            src, asset, balance = rng.choice(holders)
            dst = rng.choice([s for s in SUBS if s != src])
            engine.internal_transfer(state, src, dst, asset, rng.randint(1, balance))

    for pair in range(1_000):
        base, rng = build_base(pair)
        left, right = engine.clone_state(base), engine.clone_state(base)
        scramble(left, random.Random(rng.random()))
        scramble(right, random.Random(rng.random()))
        pub_left, pub_right = project_public(left), project_public(right)
        assert pub_left.canonical_bytes() == pub_right.canonical_bytes()
        assert trace_bytes(external_trace(pub_left)) == trace_bytes(external_trace(pub_right))
        assert observational_eq(left, right)
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"privacy suite took {elapsed:.1f}s"
    report(1, "internal-transfer privacy (1,000 schedule pairs, byte-equal)")


def test_criterion_02_eoa_indistinguishability():
    """A scripted plain single-key baseline running the same deposit/withdraw
    sequence produces a byte-equal external trace, over 100 random
    sequences. Zero tolerance."""
    for seed in range(100):
        rng = random.Random(1_000 + seed)
        chain = SimChain()
        state = engine.create_wallet("root", EnclaveKeySource(seed=seed))
        signer = EnclaveSigner(state.keys)
        baseline = EoaBaseline(state.pk)
        for asset in TOKENS:
            chain.faucet(SENDERS[0], asset, 10**9)
        available: dict[AssetId, int] = {}
        for _ in range(rng.randint(5, 25)):
            asset = rng.choice(TOKENS)
            if rng.random() < 0.6 or available.get(asset, 0) == 0:
                amount = rng.randint(1, 5_000)
                chain.external_deposit(SENDERS[0], state.pk, asset, amount)
                entry = engine.inbox_deposit(state, asset, amount, SENDERS[0])
                engine.claim_inbox(state, "root", entry.entry_id)
                baseline.deposit(asset, amount)
                available[asset] = available.get(asset, 0) + amount
            else:
                amount = rng.randint(1, available[asset])
                dest = rng.choice(DESTS)
                engine.withdraw(state, "root", asset, amount, dest)
                engine.process_outbox(state, chain, signer)
                baseline.withdraw(asset, amount, dest)
                available[asset] -= amount
        pub = project_public(state)
        assert trace_bytes(external_trace(pub)) == trace_bytes(baseline.trace())
        assert pub.pk == baseline.pk
        assert pub.totals_map() == {a: x for a, x in baseline.balances.items() if x}
    report(2, "EOA indistinguishability (100 scripted baselines, byte-equal traces)")


def test_criterion_03_provenance_integrity(walks):
    """Over 20 seeds x 10,000 randomized transitions: internal totals never
    exceed net deposits, and totals + unclaimed inbox + pending outbox equal
    net deposits exactly, for every asset at every step. Zero tolerance,
    under 60 seconds."""
    finished, elapsed = walks
    assert len(finished) == len(WALK_SEEDS)
    total_steps = sum(walk.steps for walk in finished)
    assert total_steps >= len(WALK_SEEDS) * WALK_STEPS
    for walk in finished:
        walk.checkpoint()  # final global identity over every asset
    assert elapsed < 60.0, f"randomized runs took {elapsed:.1f}s"
    report(3, f"provenance integrity ({total_steps:,} transitions, identity exact)")


def test_criterion_04_asset_accessibility(walks):
    """In every final randomized state, under the all-allowing policy, each
    holder can withdraw its full balance, and holder balances sum to the
    total. Zero tolerance."""
    finished, _ = walks
    for walk in finished:
        state = walk.state
        clone = engine.clone_state(state)
        for asset in {a for book in state.ledger.values() for a in book} - {None}:
            if asset.kind == "gsm":
                continue  # signing authority is not an on-chain asset
            holders = [
                (sub, book[asset]) for sub, book in state.ledger.items() if book.get(asset, 0) > 0
            ]
            assert sum(amount for _, amount in holders) == engine.total_balance(state, asset)
            for sub, amount in holders:
                engine.withdraw(clone, sub, asset, amount, DESTS[0])  # must not raise
                assert engine.get_balance(clone, sub, asset) == 0
    report(4, "asset accessibility (every holder spends its full balance)")


def test_criterion_05_replay_oracle_equivalence(walks):
    """The independent fold oracle reproduced the engine ledger after every
    transition of every run; a final from-genesis replay agrees too."""
    finished, _ = walks
    from passwallet.provenance import replay_ledger

    for walk in finished:
        assert walk.oracle_seq == len(walk.state.history)
        assert walk.oracle_ledger == walk.state.ledger
        assert replay_ledger(walk.state.history) == walk.state.ledger
    report(5, "replay-oracle equivalence (checked after every transition)")


def test_criterion_06_nonce_and_fifo_discipline(walks):
    """Chain-accepted nonces are exactly 0..k-1, replays are rejected, and
    the outbox broadcasts strictly in enqueue order."""
    finished, _ = walks
    replay_checked = 0
    for walk in finished:
        state, chain = walk.state, walk.chain
        accepted = [a.nonce for a in chain.tx_log if a.src == state.pk]
        assert accepted == list(range(len(accepted)))
        assert state.nonce == chain.nonce(state.pk)
        for index, entry in enumerate(state.outbox):
            assert entry.nonce == index
            assert (entry.status == "broadcast") == (index < state.nonce)
        if state.nonce > 0:
            entry = state.outbox[0]
            action = ChainAction(
                asset=entry.asset, amount=entry.amount, src=state.pk,
                dst=entry.ext_dst, nonce=entry.nonce, payload=entry.payload,
            )
            replay = SignedTx(
                sender=state.pk, action=action, signature=walk.signer.sign(action.message())
            )
            with pytest.raises(NonceMismatch):
                chain.submit_tx(replay)
            replay_checked += 1
    assert replay_checked > 0
    report(6, "nonce/FIFO discipline (dense nonces, replays rejected)")


def test_criterion_07_gsm_totality():
    """1,000 fuzzed grant/sign sequences: the signer lookup is total, every
    domain has exactly one signer, and signing succeeds precisely for that
    signer. Zero tolerance."""
    domains = ["a.example", "b.example", "c.example"]
    for seed in range(1_000):
        rng = random.Random(seed)
        state = engine.create_wallet("root", EnclaveKeySource(seed=seed))
        signer = EnclaveSigner(state.keys)
        for _ in range(rng.randint(3, 15)):
            domain = rng.choice(domains)
            asset = AssetId.gsm(domain)
            holder = engine.get_signer(state, domain)
            if rng.random() < 0.5:
                caller = rng.choice(SUBS)
                if caller == holder:
                    engine.sign_gsm(state, caller, domain, b"payload", signer)
                else:
                    with pytest.raises(TransitionError) as excinfo:
                        engine.sign_gsm(state, caller, domain, b"payload", signer)
                    assert excinfo.value.kind == "NotAllowed"
            else:
                src = rng.choice(SUBS + ["root"])
                dst = rng.choice([s for s in SUBS if s != src])
                if src == holder:
                    engine.internal_transfer(state, src, dst, asset, 1)
                    assert engine.get_signer(state, domain) == dst
                else:
                    with pytest.raises(TransitionError):
                        engine.internal_transfer(state, src, dst, asset, 1)
            for check_domain in domains + ["never.granted"]:
                assert engine.get_signer(state, check_domain)  # total, never raises
            for check_domain in domains:
                materialized = [
                    sub for sub, book in state.ledger.items()
                    if book.get(AssetId.gsm(check_domain), 0) > 0
                ]
                assert len(materialized) <= 1
                if materialized:
                    assert materialized == [engine.get_signer(state, check_domain)]
    report(7, "signing-authority totality (1,000 fuzzed grant/sign sequences)")


def test_criterion_08_liveness_bounds():
    """Fault matrix at n=5, t=3, one approver, q=3, dt=4: every authorized
    operation completes within tau_max = 2*dt + 8 = 16 rounds; with every
    enclave compromised the run terminates with a definite attestation
    failure. Under 10 seconds."""
    started = time.perf_counter()
    tau_max = 2 * 4 + 8

    def run(primary_fault: str | None, kms_down: int, approve_round: int):
        kms = KmsConfig.make(5, 3, seed=kms_down + approve_round)
        enclaves = {
            "primary": Enclave.make("primary", "vendor-a"),
            "secondary": Enclave.make("secondary", "vendor-b"),
        }
        registry = Registry(
            allowed_measurements=frozenset(e.measurement for e in enclaves.values()),
            quorum=QuorumPolicy(approvers=frozenset({"p1"}), q=3, dt=4),
        )
        schedule = [FaultEvent(approve_round, "approve", "p1")]
        if primary_fault:
            schedule.append(FaultEvent(0, primary_fault, "primary"))
        schedule.extend(FaultEvent(0, "kms-down", str(i)) for i in range(kms_down))
        world = World(enclaves=enclaves, kms=kms, schedule=schedule)
        state = engine.create_wallet("root", EnclaveKeySource(seed=1))
        container = seal(
            state, derive_key(kms, "c"), container_id="c",
            measurement=enclaves["primary"].measurement,
            registry_ref=registry.registry_ref, state_version=0,
        )

        def op(st):
            entry = engine.inbox_deposit(st, ETH, 5, SENDERS[0])
            engine.claim_inbox(st, "root", entry.entry_id)
            return "ok"

        return recover_and_execute(container, op, kms, registry, world)

    taus = []
    for fault in ["crash", "compromise"]:
        for kms_down in [0, 1, 2]:
            for approve_round in [0, 3]:
                result = run(fault, kms_down, approve_round)
                assert result.value == "ok"
                assert result.rounds <= tau_max, f"tau {result.rounds} > {tau_max}"
                taus.append(result.rounds)
    assert max(taus) <= tau_max and min(taus) >= 0

    # Hypothesis violation: no honest enclave -> definite error, not a hang.
    kms = KmsConfig.make(5, 3, seed=99)
    enclaves = {
        "primary": Enclave.make("primary", "vendor-a"),
        "secondary": Enclave.make("secondary", "vendor-b"),
    }
    registry = Registry(
        allowed_measurements=frozenset(e.measurement for e in enclaves.values()),
        quorum=QuorumPolicy(approvers=frozenset({"p1"}), q=3, dt=4),
    )
    world = World(
        enclaves=enclaves, kms=kms,
        schedule=[FaultEvent(0, "compromise", "primary"), FaultEvent(0, "compromise", "secondary")],
    )
    state = engine.create_wallet("root", EnclaveKeySource(seed=2))
    container = seal(
        state, derive_key(kms, "c"), container_id="c",
        measurement=enclaves["primary"].measurement,
        registry_ref=registry.registry_ref, state_version=0,
    )
    with pytest.raises(NotAttested):
        recover_and_execute(container, lambda st: "never", kms, registry, world)

    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"liveness matrix took {elapsed:.1f}s"
    report(8, f"liveness bounds (12 fault schedules, max tau {max(taus)} <= {tau_max})")


def test_criterion_09_attestation_and_rotation():
    """Tampering any covered record flips verification to false in 100 of
    100 trials; rotation invalidates old-epoch ciphertexts and preserves the
    state under the new epoch. Zero tolerance."""
    rng = random.Random(4242)
    state = engine.create_wallet("root", EnclaveKeySource(seed=12))
    signer = EnclaveSigner(state.keys)
    for index in range(10):
        entry = engine.inbox_deposit(state, rng.choice(TOKENS), rng.randint(1, 100), SENDERS[0])
        engine.claim_inbox(state, "root", entry.entry_id)
    for index in range(10):
        engine.internal_transfer(state, "root", f"sub-{index % 3}", ETH, 1)
    attestation = attest(state.history, signer, state.nonce)
    assert verify_attestation(state.pk, attestation, state.history)

    flips = 0
    for trial in range(100):
        records = list(state.history.records)
        index = rng.randrange(len(records))
        victim = records[index]
        mutation = rng.choice(["amount", "dst", "meta", "op"])
        records[index] = ProvenanceRecord(
            seq=victim.seq,
            op="migration" if mutation == "op" else victim.op,
            asset=victim.asset,
            amount=(victim.amount or 0) + 1 if mutation == "amount" else victim.amount,
            src=victim.src,
            dst="sub:intruder" if mutation == "dst" else victim.dst,
            meta=(("forged", "1"),) if mutation == "meta" else victim.meta,
        )
        if not verify_attestation(state.pk, attestation, records):
            flips += 1
    assert flips == 100, f"only {flips}/100 tampers detected"

    kms = KmsConfig.make(5, 3, seed=77)
    old_key = derive_key(kms, "c")
    container = seal(
        state, old_key, container_id="c", measurement=b"\x01" * 32,
        registry_ref="r", state_version=state.state_version,
    )
    rotated = rotate_key(kms, "c", container)
    from passwallet.errors import SealedStateCorrupt

    with pytest.raises(SealedStateCorrupt):
        unseal(rotated, old_key)
    recovered = unseal(rotated, derive_key(kms, "c"))
    assert recovered.to_doc(include_secret=True) == state.to_doc(include_secret=True)
    report(9, "attestation tamper detection (100/100) and rotation safety")


def test_criterion_10_benchmark_methodology():
    """The default nine-category suite, including the 10,000-pair batch and
    the 5-thread category, completes in under 5 minutes, emits the
    mean/std/min/max table, and the invariant suite passes after every
    category (run_bench raises otherwise)."""
    started = time.perf_counter()
    config = bench.BenchConfig()  # ops 100, trials 10, batch 10,000, threads 5
    rows = bench.run_bench(config)
    elapsed = time.perf_counter() - started
    assert elapsed < 300.0, f"bench took {elapsed:.1f}s"
    assert len(rows) == 9
    assert [row.operation for row in rows[:8]] == bench.CATEGORIES[:8]
    assert rows[8].operation == "Multi-threaded Operations (5 threads)"
    for row in rows:
        assert row.min <= row.mean <= row.max and row.std >= 0.0 and row.min > 0.0
    report(10, f"benchmark methodology (9 categories in {elapsed:.1f}s)")
