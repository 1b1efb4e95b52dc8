"""Operator command line.

A wallet file (``*.pass.json``) is a full simulated deployment: the public
snapshot, the sealed container holding the signing secret, the KMS shares,
the enclave registry, and the chain. Every mutating command unseals, runs
the transition, reseals, and writes the file atomically; an advisory lock
file keeps concurrent invocations out. Queries support ``--json`` for
scripting, and transition failures exit 1 with ``{"kind", "detail"}`` on
stderr.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from . import bench as bench_mod
from . import canonical, engine, persistence
from .chainsim import SimChain, external_trace
from .enclave import (
    VENDOR_A,
    VENDOR_B,
    Enclave,
    EnclaveKeySource,
    EnclaveSigner,
    FaultEvent,
    KmsConfig,
    QuorumPolicy,
    Registry,
    SealedContainer,
    World,
    attach_secret,
    derive_key,
    recover_and_execute,
    seal,
    unseal,
)
from .errors import SnapshotCorrupt, WalletError, WalletLocked
from .model import AssetId, WalletState, project_public
from .policy import PolicySet
from .provenance import Attestation, attest, verify_attestation

FORMAT_VERSION = 1
CONTAINER_ID = "wallet-container"


def parse_asset(text: str) -> AssetId:
    """Accept 'ETH', 'ft:ETH', 'nft:coll:7', or 'gsm:example.com'."""
    if ":" in text:
        return AssetId.from_key(text)
    return AssetId.fungible(text)


@dataclass
class Workspace:
    """Everything a command needs to resume the simulated deployment."""

    state: WalletState
    chain: SimChain
    kms: KmsConfig
    registry: Registry
    enclaves: dict[str, Enclave]
    container: SealedContainer

    @classmethod
    def create(cls, root: str, seed: int, policy: PolicySet, bindings: dict[str, str], subaccounts: list[str]) -> Workspace:
        state = engine.create_wallet(root, EnclaveKeySource(seed=seed), policy=policy)
        for name in subaccounts:
            engine.add_subaccount(state, name)
        for sender, sub in bindings.items():
            engine.bind_sender(state, sender, sub)
        enclaves = {
            "primary": Enclave.make("primary", VENDOR_A),
            "secondary": Enclave.make("secondary", VENDOR_B),
        }
        registry = Registry(
            allowed_measurements=frozenset(e.measurement for e in enclaves.values()),
            quorum=QuorumPolicy(approvers=frozenset({"operator"}), q=1, dt=4),
        )
        kms = KmsConfig.make(node_count=5, threshold=3, seed=seed)
        key = derive_key(kms, CONTAINER_ID)
        container = seal(
            state,
            key,
            container_id=CONTAINER_ID,
            measurement=enclaves["primary"].measurement,
            registry_ref=registry.registry_ref,
            state_version=state.state_version,
        )
        return cls(
            state=state,
            chain=SimChain(),
            kms=kms,
            registry=registry,
            enclaves=enclaves,
            container=container,
        )

    @classmethod
    def load(cls, path: Path) -> Workspace:
        try:
            doc = canonical.loads(path.read_bytes())
            if doc.get("formatVersion") != FORMAT_VERSION:
                raise SnapshotCorrupt(f"unsupported wallet file version: {doc.get('formatVersion')!r}")
            kms = KmsConfig.from_doc(doc["kms"])
            container = SealedContainer.from_doc(doc["sealed"])
            state = unseal(container, derive_key(kms, CONTAINER_ID))
            # The public snapshot must agree with the sealed authority.
            snapshot_state = WalletState.from_doc(doc["wallet"]["state"])
            if snapshot_state.to_doc() != state.to_doc():
                raise SnapshotCorrupt("wallet snapshot disagrees with sealed state")
            chain = SimChain.from_doc(doc["chain"])
            registry = Registry.from_doc(doc["registry"])
            enclaves = {e["enclaveId"]: Enclave.from_doc(e) for e in doc["enclaves"]}
        except WalletError:
            raise
        except Exception as exc:
            raise SnapshotCorrupt(f"wallet file does not parse: {exc}") from exc
        return cls(
            state=state,
            chain=chain,
            kms=kms,
            registry=registry,
            enclaves=enclaves,
            container=container,
        )

    def save(self, path: Path) -> None:
        key = derive_key(self.kms, CONTAINER_ID)
        self.container = seal(
            self.state,
            key,
            container_id=CONTAINER_ID,
            measurement=self.container.meta.measurement,
            registry_ref=self.registry.registry_ref,
            state_version=self.state.state_version,
            key_epoch=self.kms.epoch,
        )
        doc = {
            "formatVersion": FORMAT_VERSION,
            "wallet": persistence.snapshot_of(self.state).to_doc(),
            "sealed": self.container.to_doc(),
            "kms": self.kms.to_doc(),
            "registry": self.registry.to_doc(),
            "enclaves": [e.to_doc() for _, e in sorted(self.enclaves.items())],
            "chain": self.chain.to_doc(),
        }
        persistence.write_atomic(path, canonical.dumps(doc))

    def signer(self) -> EnclaveSigner:
        host = next((e for e in self.enclaves.values() if e.status == "honest"), None)
        return EnclaveSigner(self.state.keys, host)


class wallet_lock:
    """Advisory lock file next to the wallet; refuses concurrent CLIs."""

    def __init__(self, path: Path):
        self.lock_path = Path(str(path) + ".lock")

    def __enter__(self):
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise WalletLocked(f"{self.lock_path} exists; another process owns the wallet") from None
        with os.fdopen(fd, "w") as handle:
            handle.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        try:
            self.lock_path.unlink()
        except FileNotFoundError:
            pass
        return False


def fail(error: WalletError) -> None:
    sys.stderr.write(json.dumps(error.to_doc(), sort_keys=True) + "\n")
    sys.exit(1)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except WalletError as error:
            fail(error)

    return wrapper


def emit(doc: dict, as_json: bool, human: str) -> None:
    if as_json:
        click.echo(canonical.dumps(doc).decode())
    else:
        click.echo(human)


wallet_option = click.option(
    "--wallet",
    "wallet_path",
    envvar="PASS_WALLET",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Wallet file (also PASS_WALLET).",
)
json_option = click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")


@click.group()
@click.option("-v", "--verbose", count=True, envvar="PASS_VERBOSE")
@click.pass_context
def main(ctx, verbose):
    """Provenanced-access subaccount wallet."""
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose


@main.command()
@click.option("--root", default="root", show_default=True, help="Root subaccount id.")
@click.option("--out", "wallet_path", envvar="PASS_WALLET", required=True, type=click.Path(path_type=Path))
@click.option("--policy", "policy_path", envvar="PASS_POLICY", type=click.Path(exists=True, path_type=Path))
@click.option("--seed", envvar="PASS_SEED", default=0, show_default=True, type=int)
@click.option("--bind", "bindings", multiple=True, metavar="ADDR=SUB", help="Sender binding (repeatable).")
@click.option("--subaccount", "subaccounts", multiple=True, help="Pre-register a subaccount (repeatable).")
@guarded
def init(root, wallet_path, policy_path, seed, bindings, subaccounts):
    """Create a new wallet file."""
    if wallet_path.parent and not wallet_path.parent.exists():
        raise click.UsageError(f"parent directory {wallet_path.parent} does not exist")
    policy = PolicySet()
    if policy_path is not None:
        policy = PolicySet.from_doc(canonical.loads(Path(policy_path).read_bytes()))
    parsed = {}
    for item in bindings:
        if "=" not in item:
            raise click.UsageError(f"--bind expects ADDR=SUB, got {item!r}")
        sender, sub = item.split("=", 1)
        parsed[sender] = sub
    ws = Workspace.create(root, seed, policy, parsed, list(subaccounts))
    ws.save(wallet_path)
    click.echo(f"initialized wallet {ws.state.pk} at {wallet_path}")


def _mutate(wallet_path: Path, fn) -> None:
    with wallet_lock(wallet_path):
        ws = Workspace.load(wallet_path)
        result = fn(ws)
        ws.save(wallet_path)
    if result:
        click.echo(result)


@main.command()
@wallet_option
@click.option("--sender", "--from", "sender", required=True, help="External sender address.")
@click.option("--asset", required=True)
@click.option("--amount", required=True, type=int)
@guarded
def deposit(wallet_path, sender, asset, amount):
    """Simulate an external deposit to the wallet address."""
    asset_id = parse_asset(asset)

    def run(ws: Workspace):
        # Test-setup faucet: the simulated sender owns what it deposits.
        short = ws.chain.balance(sender, asset_id)
        if short < amount:
            ws.chain.faucet(sender, asset_id, amount - short)
        event = ws.chain.external_deposit(sender, ws.state.pk, asset_id, amount)
        entry = engine.inbox_deposit(ws.state, event.asset, event.amount, event.sender)
        return f"inbox entry {entry.entry_id}: {amount} {asset_id} from {event.sender}"

    _mutate(wallet_path, run)


@main.command()
@wallet_option
@click.option("--claimant", required=True)
@click.option("--entry", "entry_id", required=True, type=int)
@click.option("--amount", type=int, help="Expected amount; errors if it mismatches.")
@guarded
def claim(wallet_path, claimant, entry_id, amount):
    """Claim an inbox entry into a subaccount."""

    def run(ws: Workspace):
        entry = engine.claim_inbox(ws.state, claimant, entry_id, amount)
        return f"{claimant} claimed {entry.amount} {entry.asset} (entry {entry.entry_id})"

    _mutate(wallet_path, run)


@main.command()
@wallet_option
@click.option("--from-sub", "src", required=True)
@click.option("--to-sub", "dst", required=True)
@click.option("--asset", required=True)
@click.option("--amount", required=True, type=int)
@guarded
def transfer(wallet_path, src, dst, asset, amount):
    """Internal transfer between subaccounts (never touches the chain)."""

    def run(ws: Workspace):
        engine.internal_transfer(ws.state, src, dst, parse_asset(asset), amount)
        return f"transferred {amount} {asset} {src} -> {dst}"

    _mutate(wallet_path, run)


@main.command()
@wallet_option
@click.option("--from-sub", "src", required=True)
@click.option("--asset", required=True)
@click.option("--amount", required=True, type=int)
@click.option("--dest", required=True, help="External destination address.")
@guarded
def withdraw(wallet_path, src, asset, amount, dest):
    """Queue a withdrawal in the outbox."""

    def run(ws: Workspace):
        entry = engine.withdraw(ws.state, src, parse_asset(asset), amount, dest)
        return f"queued nonce {entry.nonce}: {amount} {asset} -> {dest}"

    _mutate(wallet_path, run)


@main.command()
@wallet_option
@guarded
def process(wallet_path):
    """Sign and broadcast all pending outbox entries, FIFO."""

    def run(ws: Workspace):
        receipts = engine.process_outbox(ws.state, ws.chain, ws.signer())
        return f"broadcast {len(receipts)} transaction(s); nonce now {ws.state.nonce}"

    _mutate(wallet_path, run)


@main.command(name="gsm-sign")
@wallet_option
@click.option("--subaccount", required=True)
@click.option("--domain", required=True)
@click.option("--message", required=True, help="Message text (or 0x-hex).")
@guarded
def gsm_sign(wallet_path, subaccount, domain, message):
    """Sign a domain-scoped message with the wallet key."""
    payload = canonical.parse_hex(message) if message.startswith("0x") else message.encode()

    def run(ws: Workspace):
        signature = engine.sign_gsm(ws.state, subaccount, domain, payload, ws.signer())
        return canonical.hex_str(signature)

    _mutate(wallet_path, run)


@main.command()
@wallet_option
@click.option("--subaccount", "--u", "subaccount", required=True)
@click.option("--asset", required=True)
@json_option
@guarded
def balance(wallet_path, subaccount, asset, as_json):
    """Ledger balance of one subaccount for one asset."""
    ws = Workspace.load(wallet_path)
    asset_id = parse_asset(asset)
    amount = engine.get_balance(ws.state, subaccount, asset_id)
    emit(
        {"subaccount": subaccount, "asset": asset_id.key(), "amount": amount},
        as_json,
        f"{subaccount} holds {amount} {asset_id}",
    )


@main.command(name="history")
@wallet_option
@click.option("--subaccount")
@click.option("--asset")
@click.option("--op")
@json_option
@guarded
def history_cmd(wallet_path, subaccount, asset, op, as_json):
    """Provenance records, optionally filtered."""
    ws = Workspace.load(wallet_path)
    records = engine.history(
        ws.state,
        subaccount=subaccount,
        asset=parse_asset(asset) if asset else None,
        op=op,
    )
    if as_json:
        click.echo(canonical.dumps([r.to_doc() for r in records]).decode())
    else:
        for record in records:
            click.echo(
                f"#{record.seq} {record.op} asset={record.asset} amount={record.amount} "
                f"from={record.src} to={record.dst}"
            )
        click.echo(f"{len(records)} record(s)")


@main.command(name="attest")
@wallet_option
@click.option("--out", "out_path", type=click.Path(path_type=Path), help="Write attestation here instead of stdout.")
@guarded
def attest_cmd(wallet_path, out_path):
    """Sign the digest of the provenance log."""
    ws = Workspace.load(wallet_path)
    attestation = attest(ws.state.history, ws.signer(), ws.state.nonce)
    data = canonical.dumps(attestation.to_doc())
    if out_path:
        persistence.write_atomic(out_path, data)
        click.echo(f"attestation written to {out_path}")
    else:
        click.echo(data.decode())


@main.command(name="verify")
@wallet_option
@click.option("--attestation", "att_path", required=True, type=click.Path(exists=True, path_type=Path))
@json_option
@guarded
def verify_cmd(wallet_path, att_path, as_json):
    """Verify an attestation against the wallet's provenance log."""
    ws = Workspace.load(wallet_path)
    attestation = Attestation.from_doc(canonical.loads(Path(att_path).read_bytes()))
    valid = verify_attestation(ws.state.pk, attestation, ws.state.history)
    emit({"valid": valid}, as_json, "valid" if valid else "INVALID")
    if not valid:
        sys.exit(1)


@main.command(name="snapshot")
@wallet_option
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@guarded
def snapshot_cmd(wallet_path, out_path):
    """Export a state-only snapshot (never contains the signing secret)."""
    ws = Workspace.load(wallet_path)
    persistence.save(ws.state, out_path)
    click.echo(f"snapshot (version {ws.state.state_version}) written to {out_path}")


@main.command(name="restore")
@wallet_option
@click.option("--from", "snap_path", required=True, type=click.Path(exists=True, path_type=Path))
@guarded
def restore_cmd(wallet_path, snap_path):
    """Replace wallet state from a snapshot; stale versions are rejected."""

    def run(ws: Workspace):
        restored = persistence.load(snap_path, min_version=ws.state.state_version)
        attach_secret(restored, ws.state.keys.sk)
        ws.state = restored
        return f"restored state version {restored.state_version}"

    _mutate(wallet_path, run)


@main.command(name="simulate")
@click.argument("scenario", type=click.Path(exists=True, path_type=Path))
@click.option("--seed", envvar="PASS_SEED", default=0, show_default=True, type=int)
@guarded
def simulate_cmd(scenario, seed):
    """Run a scripted scenario on a fresh wallet and print the final trace."""
    events = canonical.loads(Path(scenario).read_bytes())
    ws = Workspace.create("root", seed, PolicySet(), {}, [])
    for event in events:
        op = event["op"]
        if op == "deposit":
            asset_id = parse_asset(event["asset"])
            amount = canonical.parse_uint(event["amount"])
            sender = event["from"]
            short = ws.chain.balance(sender, asset_id)
            if short < amount:
                ws.chain.faucet(sender, asset_id, amount - short)
            ws.chain.external_deposit(sender, ws.state.pk, asset_id, amount)
            engine.inbox_deposit(ws.state, asset_id, amount, sender)
        elif op == "claim":
            engine.claim_inbox(ws.state, event["claimant"], canonical.parse_uint(event["entry"]))
        elif op == "transfer":
            engine.internal_transfer(
                ws.state, event["from"], event["to"], parse_asset(event["asset"]),
                canonical.parse_uint(event["amount"]),
            )
        elif op == "withdraw":
            engine.withdraw(
                ws.state, event["from"], parse_asset(event["asset"]),
                canonical.parse_uint(event["amount"]), event["dest"],
            )
        elif op == "process":
            engine.process_outbox(ws.state, ws.chain, ws.signer())
        elif op == "fault":
            target = ws.enclaves.get(event.get("target", "primary"))
            if target is not None:
                target.status = event.get("kind", "crashed")
        else:
            raise click.UsageError(f"unknown scenario op: {op!r}")
    pub = project_public(ws.state)
    out = {
        "trace": [action.to_doc() for action in external_trace(pub)],
        "assetTotals": pub.to_doc()["assetTotals"],
        "nonce": ws.state.nonce,
    }
    click.echo(canonical.dumps(out).decode())


@main.command(name="simulate-liveness")
@click.option("--faults", "faults_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--nodes", default=5, show_default=True, type=int)
@click.option("--threshold", default=3, show_default=True, type=int)
@click.option("--quorum", "quorum_q", default=3, show_default=True, type=int)
@click.option("--dt", default=4, show_default=True, type=int)
@click.option("--seed", envvar="PASS_SEED", default=0, show_default=True, type=int)
@json_option
@guarded
def simulate_liveness(faults_path, nodes, threshold, quorum_q, dt, seed, as_json):
    """Run one authorized operation through recovery under a fault schedule."""
    schedule = [FaultEvent.from_doc(d) for d in canonical.loads(Path(faults_path).read_bytes())]
    state = engine.create_wallet("root", EnclaveKeySource(seed=seed))
    enclaves = {
        "primary": Enclave.make("primary", VENDOR_A),
        "secondary": Enclave.make("secondary", VENDOR_B),
    }
    registry = Registry(
        allowed_measurements=frozenset(e.measurement for e in enclaves.values()),
        quorum=QuorumPolicy(approvers=frozenset({"operator", "backup"}), q=quorum_q, dt=dt),
    )
    kms = KmsConfig.make(node_count=nodes, threshold=threshold, seed=seed)
    container = seal(
        state,
        derive_key(kms, CONTAINER_ID),
        container_id=CONTAINER_ID,
        measurement=enclaves["primary"].measurement,
        registry_ref=registry.registry_ref,
        state_version=state.state_version,
    )
    world = World(enclaves=enclaves, kms=kms, schedule=schedule)

    def op(st: WalletState):
        engine.add_subaccount(st, "recovered")
        return "ok"

    result = recover_and_execute(container, op, kms, registry, world)
    emit(
        {"ok": True, "rounds": result.rounds, "events": result.events},
        as_json,
        f"operation executed after {result.rounds} round(s): {', '.join(result.events)}",
    )


@main.command(name="bench")
@click.option("--ops", default=100, show_default=True, type=int, help="Operations per trial.")
@click.option("--trials", default=10, show_default=True, type=int)
@click.option("--batch", default=10_000, show_default=True, type=int, help="Deposit+claim pairs in the batch trial.")
@click.option("--threads", default=5, show_default=True, type=int)
@click.option("--seed", envvar="PASS_SEED", default=0, show_default=True, type=int)
@click.option("--csv", "csv_path", type=click.Path(path_type=Path), help="Also write CSV here.")
@guarded
def bench_cmd(ops, trials, batch, threads, seed, csv_path):
    """Run the nine-category throughput suite (ops/sec)."""
    config = bench_mod.BenchConfig(
        ops_per_trial=ops, trials=trials, batch_size=batch, threads=threads, seed=seed
    )
    rows = bench_mod.run_bench(config)
    click.echo(bench_mod.format_table(rows))
    if csv_path:
        bench_mod.write_csv(rows, csv_path)
        click.echo(f"csv written to {csv_path}")


if __name__ == "__main__":
    main()
