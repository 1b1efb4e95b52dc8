"""Simulated enclave/KMS runtime: key custody, sealing, attestation,
quorum governance with timeout relaxation, migration, and recovery.

Time is a discrete round counter advanced by the world harness, so every
liveness bound is deterministic given a fault schedule. The threshold KMS
is modeled as availability counting over per-node root-key shares (combined
by XOR); that is all the recovery argument consumes.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import canonical, crypto
from .engine import append_governance_record
from .errors import (
    KeyUnavailable,
    LivenessExceeded,
    NotAttested,
    RollbackDetected,
    SealedStateCorrupt,
)
from .model import OP_KEY_ROTATION, OP_MIGRATION, KeyPair, WalletState

HONEST = "honest"
CRASHED = "crashed"
COMPROMISED = "compromised"

VENDOR_A = "vendor-a"
VENDOR_B = "vendor-b"

NODE_UP = "up"
NODE_DOWN = "down"


@dataclass
class Enclave:
    """An attested execution host. Crashed and compromised enclaves are
    unusable: the runtime refuses to route operations through them."""

    enclave_id: str
    vendor: str
    measurement: bytes
    status: str = HONEST

    @classmethod
    def make(cls, enclave_id: str, vendor: str = VENDOR_A, image: str = "wallet-v1") -> Enclave:
        # Vendors measure the same image differently, so the vendor is part
        # of the measurement; migrating across vendors really re-measures.
        return cls(
            enclave_id=enclave_id,
            vendor=vendor,
            measurement=hashlib.sha256(f"image:{image}:{vendor}".encode()).digest(),
        )

    def to_doc(self) -> dict:
        return {
            "enclaveId": self.enclave_id,
            "vendor": self.vendor,
            "measurement": canonical.hex_str(self.measurement),
            "status": self.status,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> Enclave:
        return cls(
            enclave_id=doc["enclaveId"],
            vendor=doc["vendor"],
            measurement=canonical.parse_hex(doc["measurement"]),
            status=doc["status"],
        )


@dataclass(frozen=True)
class Quote:
    """Attestation evidence binding an enclave identity to its measurement,
    reflecting the enclave's condition at quote time."""

    enclave_id: str
    measurement: bytes
    status: str


def attest_quote(enclave: Enclave) -> Quote:
    """Produce a quote. A crashed enclave cannot answer at all; a compromised
    one answers, but its quote carries the compromise and will not verify."""
    if enclave.status == CRASHED:
        raise NotAttested(f"enclave {enclave.enclave_id} is down")
    return Quote(enclave_id=enclave.enclave_id, measurement=enclave.measurement, status=enclave.status)


@dataclass(frozen=True)
class QuorumPolicy:
    approvers: frozenset[str]
    q: int
    dt: int  # rounds between relaxation steps

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("quorum threshold must be at least 1")
        if self.dt < 1:
            raise ValueError("relaxation interval must be at least 1 round")


@dataclass(frozen=True)
class Registry:
    """Governance trust base: which measurements may run, and what approvals
    an operation needs."""

    allowed_measurements: frozenset[bytes]
    quorum: QuorumPolicy
    registry_ref: str = "registry-v1"

    def to_doc(self) -> dict:
        return {
            "allowedMeasurements": sorted(canonical.hex_str(m) for m in self.allowed_measurements),
            "quorum": {
                "approvers": sorted(self.quorum.approvers),
                "q": self.quorum.q,
                "dt": self.quorum.dt,
            },
            "registryRef": self.registry_ref,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> Registry:
        quorum = doc["quorum"]
        return cls(
            allowed_measurements=frozenset(canonical.parse_hex(m) for m in doc["allowedMeasurements"]),
            quorum=QuorumPolicy(
                approvers=frozenset(quorum["approvers"]),
                q=canonical.parse_uint(quorum["q"]),
                dt=canonical.parse_uint(quorum["dt"]),
            ),
            registry_ref=doc["registryRef"],
        )


def verify_quote(registry: Registry, quote: Quote) -> bool:
    return quote.measurement in registry.allowed_measurements and quote.status == HONEST


def quorum_check(registry: Registry, approvals: set[str], elapsed: int) -> bool:
    """Governance predicate with timeout relaxation: the effective threshold
    drops by one every ``dt`` rounds, never below one, so a single standing
    approver eventually suffices."""
    policy = registry.quorum
    effective = max(1, policy.q - elapsed // policy.dt)
    return len(approvals & policy.approvers) >= effective


@dataclass
class KmsConfig:
    """t-of-n key service. Each node holds a root-key share; derivation is
    available while at least ``threshold`` nodes are up."""

    node_count: int
    threshold: int
    shares: list[bytes]
    node_status: list[str]
    epoch: int = 0

    def __post_init__(self):
        if not (1 <= self.threshold <= self.node_count):
            raise ValueError("threshold must satisfy 1 <= t <= n")
        if len(self.shares) != self.node_count or len(self.node_status) != self.node_count:
            raise ValueError("shares and statuses must cover every node")

    @classmethod
    def make(cls, node_count: int, threshold: int, seed: int = 0) -> KmsConfig:
        shares = [
            hashlib.sha256(f"kms-share:{seed}:{index}".encode()).digest()
            for index in range(node_count)
        ]
        return cls(
            node_count=node_count,
            threshold=threshold,
            shares=shares,
            node_status=[NODE_UP] * node_count,
        )

    @property
    def up_count(self) -> int:
        return sum(1 for status in self.node_status if status == NODE_UP)

    def set_node(self, index: int, status: str) -> None:
        self.node_status[index] = status

    def root_key(self) -> bytes:
        combined = bytes(32)
        for share in self.shares:
            combined = bytes(a ^ b for a, b in zip(combined, share))
        return combined

    def to_doc(self) -> dict:
        return {
            "nodeCount": self.node_count,
            "threshold": self.threshold,
            "shares": [canonical.hex_str(share) for share in self.shares],
            "nodeStatus": list(self.node_status),
            "epoch": self.epoch,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> KmsConfig:
        return cls(
            node_count=canonical.parse_uint(doc["nodeCount"]),
            threshold=canonical.parse_uint(doc["threshold"]),
            shares=[canonical.parse_hex(share) for share in doc["shares"]],
            node_status=list(doc["nodeStatus"]),
            epoch=canonical.parse_uint(doc["epoch"]),
        )


def derive_key(kms: KmsConfig, container_id: str) -> bytes:
    """Container key: keyed hash of the container id under the root key.
    Fails while fewer than ``threshold`` nodes are up."""
    if kms.up_count < kms.threshold:
        raise KeyUnavailable(
            f"{kms.up_count} of {kms.node_count} nodes up, threshold is {kms.threshold}"
        )
    return hmac.new(kms.root_key(), container_id.encode(), hashlib.sha256).digest()


@dataclass(frozen=True)
class SealMeta:
    measurement: bytes
    registry_ref: str
    state_version: int
    key_epoch: int

    def to_doc(self) -> dict:
        return {
            "measurement": canonical.hex_str(self.measurement),
            "registryRef": self.registry_ref,
            "stateVersion": self.state_version,
            "keyEpoch": self.key_epoch,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> SealMeta:
        return cls(
            measurement=canonical.parse_hex(doc["measurement"]),
            registry_ref=doc["registryRef"],
            state_version=canonical.parse_uint(doc["stateVersion"]),
            key_epoch=canonical.parse_uint(doc["keyEpoch"]),
        )


@dataclass
class SealedContainer:
    """Encrypted wallet state (including the signing secret) plus metadata.
    The metadata is bound into the ciphertext, so tampering either side is
    detected on unseal."""

    container_id: str
    ciphertext: bytes
    meta: SealMeta

    def to_doc(self) -> dict:
        return {
            "containerId": self.container_id,
            "ciphertext": canonical.hex_str(self.ciphertext),
            "meta": self.meta.to_doc(),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> SealedContainer:
        return cls(
            container_id=doc["containerId"],
            ciphertext=canonical.parse_hex(doc["ciphertext"]),
            meta=SealMeta.from_doc(doc["meta"]),
        )


def _seal_nonce(key: bytes, meta: SealMeta, plaintext: bytes) -> bytes:
    material = key + canonical.dumps(meta.to_doc()) + hashlib.sha256(plaintext).digest()
    return hashlib.sha256(b"seal-nonce:" + material).digest()[:12]


def seal(
    state: WalletState,
    key: bytes,
    container_id: str,
    measurement: bytes,
    registry_ref: str,
    state_version: int,
    key_epoch: int = 0,
) -> SealedContainer:
    """Encrypt the full wallet state (secret included) under a container key."""
    plaintext = canonical.dumps(state.to_doc(include_secret=True))
    meta = SealMeta(
        measurement=measurement,
        registry_ref=registry_ref,
        state_version=state_version,
        key_epoch=key_epoch,
    )
    nonce = _seal_nonce(key, meta, plaintext)
    ciphertext = nonce + AESGCM(key).encrypt(nonce, plaintext, canonical.dumps(meta.to_doc()))
    return SealedContainer(container_id=container_id, ciphertext=ciphertext, meta=meta)


def unseal(container: SealedContainer, key: bytes, min_version: int = 0) -> WalletState:
    """Decrypt a sealed container. A wrong key or any flipped bit fails
    authentication, never yields garbage; a stale version is a rollback."""
    if container.meta.state_version < min_version:
        raise RollbackDetected(
            f"sealed version {container.meta.state_version} is older than {min_version}"
        )
    nonce, body = container.ciphertext[:12], container.ciphertext[12:]
    try:
        plaintext = AESGCM(key).decrypt(nonce, body, canonical.dumps(container.meta.to_doc()))
    except InvalidTag as exc:
        raise SealedStateCorrupt("sealed state failed authentication") from exc
    return WalletState.from_doc(canonical.loads(plaintext))


def rotate_key(kms: KmsConfig, container_id: str, container: SealedContainer) -> SealedContainer:
    """Advance the KMS to a new share epoch and re-encrypt the container.

    The old container key stops working (forward secrecy at the simulation
    level); the sealed wallet state itself is unchanged, and the container
    version advances for anti-rollback.
    """
    old_key = derive_key(kms, container_id)
    state = unseal(container, old_key)
    kms.shares = [hashlib.sha256(b"rotate:" + share).digest() for share in kms.shares]
    kms.epoch += 1
    new_key = derive_key(kms, container_id)
    return seal(
        state,
        new_key,
        container_id=container_id,
        measurement=container.meta.measurement,
        registry_ref=container.meta.registry_ref,
        state_version=container.meta.state_version + 1,
        key_epoch=kms.epoch,
    )


def migrate(
    container: SealedContainer,
    from_enclave: Enclave | None,
    to_enclave: Enclave,
    kms: KmsConfig,
    registry: Registry,
) -> SealedContainer:
    """Re-host a container on another enclave, any vendor.

    The target must pass attestation; the registry binding and the wallet
    state are preserved exactly, so unsealing after migration reproduces the
    same state the source held.
    """
    quote = attest_quote(to_enclave)
    if not verify_quote(registry, quote):
        raise NotAttested(f"enclave {to_enclave.enclave_id} fails registry verification")
    key = derive_key(kms, container.container_id)
    state = unseal(container, key)
    return seal(
        state,
        key,
        container_id=container.container_id,
        measurement=to_enclave.measurement,
        registry_ref=container.meta.registry_ref,
        state_version=container.meta.state_version,
        key_epoch=container.meta.key_epoch,
    )


# --- wallet key custody ---------------------------------------------------------


class EnclaveKeySource:
    """Generates the wallet signing key inside the enclave boundary."""

    def __init__(self, seed: int | bytes | None = None):
        self._seed = seed
        self._count = 0

    def new_keypair(self) -> KeyPair:
        if self._seed is None:
            return crypto.generate_keypair()
        self._count += 1
        base = self._seed if isinstance(self._seed, bytes) else str(self._seed).encode()
        return crypto.generate_keypair(base + b":" + str(self._count).encode())


class EnclaveSigner:
    """Signing handle the engine uses; the secret never crosses it.

    Refuses to sign when the key is absent (snapshot-restored state) or the
    hosting enclave is crashed or compromised.
    """

    def __init__(self, keys: KeyPair, enclave: Enclave | None = None):
        self._keys = keys
        self.enclave = enclave

    @property
    def address(self) -> str:
        return self._keys.pk

    def sign(self, message: bytes) -> bytes:
        if self.enclave is not None and self.enclave.status != HONEST:
            raise KeyUnavailable(f"enclave {self.enclave.enclave_id} is {self.enclave.status}")
        if self._keys.sk is None:
            raise KeyUnavailable("signing key is not loaded")
        return crypto.sign(self._keys.sk, message)


def attach_secret(state: WalletState, secret: bytes) -> None:
    """Re-attach a signing secret to a snapshot-restored state after checking
    it actually belongs to the wallet's address."""
    candidate = KeyPair(pk=crypto.address_from_public(_public_of(secret)), sk=secret)
    if candidate.pk != state.pk:
        raise ValueError("secret does not match the wallet address")
    state.keys = candidate


def _public_of(secret: bytes) -> bytes:
    from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

    return Ed25519PrivateKey.from_private_bytes(secret).public_key().public_bytes_raw()


# --- discrete-round world and recovery ------------------------------------------

EVENT_CRASH = "crash"
EVENT_COMPROMISE = "compromise"
EVENT_KMS_DOWN = "kms-down"
EVENT_KMS_UP = "kms-up"
EVENT_APPROVE = "approve"

FAULT_EVENTS = frozenset({EVENT_CRASH, EVENT_COMPROMISE, EVENT_KMS_DOWN, EVENT_KMS_UP, EVENT_APPROVE})


@dataclass(frozen=True)
class FaultEvent:
    round: int
    event: str
    target: str

    def __post_init__(self):
        if self.event not in FAULT_EVENTS:
            raise ValueError(f"unknown fault event: {self.event!r}")

    @classmethod
    def from_doc(cls, doc: dict) -> FaultEvent:
        return cls(round=canonical.parse_uint(doc["round"]), event=doc["event"], target=str(doc.get("target", "")))


@dataclass
class World:
    """Deterministic discrete-round environment for recovery runs: enclaves,
    the KMS, standing approvals, and a clock driven by a fault schedule."""

    enclaves: dict[str, Enclave]
    kms: KmsConfig
    approvals: set[str] = field(default_factory=set)
    clock: int = 0
    schedule: list[FaultEvent] = field(default_factory=list)
    max_rounds: int = 256

    def apply_due(self) -> list[FaultEvent]:
        due = [e for e in self.schedule if e.round <= self.clock]
        self.schedule = [e for e in self.schedule if e.round > self.clock]
        for event in due:
            if event.event == EVENT_CRASH:
                self.enclaves[event.target].status = CRASHED
            elif event.event == EVENT_COMPROMISE:
                self.enclaves[event.target].status = COMPROMISED
            elif event.event == EVENT_KMS_DOWN:
                self.kms.set_node(int(event.target), NODE_DOWN)
            elif event.event == EVENT_KMS_UP:
                self.kms.set_node(int(event.target), NODE_UP)
            elif event.event == EVENT_APPROVE:
                self.approvals.add(event.target)
        return due

    def advance(self, rounds: int = 1) -> None:
        for _ in range(rounds):
            self.clock += 1
            self.apply_due()

    def pending_events(self, kind: str) -> bool:
        return any(e.event == kind for e in self.schedule)


@dataclass
class ExecutionResult:
    value: object
    rounds: int
    container: SealedContainer
    events: list[str]


def recover_and_execute(
    container: SealedContainer,
    op,
    kms: KmsConfig,
    registry: Registry,
    world: World,
) -> ExecutionResult:
    """Run one authorized wallet operation, recovering first if needed.

    Verifies attestation (migrating to any honest enclave when the current
    host is unusable), derives the container key (waiting out scheduled KMS
    outages), rotates the key when a compromise is detected, waits until the
    relaxing quorum passes, then executes the operation and reseals. Returns
    the rounds consumed; raises a definite error when the liveness
    hypotheses are violated rather than waiting forever.
    """
    start = world.clock
    world.apply_due()
    events: list[str] = []
    pending_audit: list[tuple[str, dict]] = []
    handled_compromised: set[str] = set()
    host_measurement = container.meta.measurement

    while True:
        if world.clock - start > world.max_rounds:
            raise LivenessExceeded(f"no progress after {world.max_rounds} rounds")

        # Attestation: keep the current host if it still verifies, otherwise
        # migrate to any honest registered enclave.
        chosen = None
        host = next(
            (e for e in world.enclaves.values() if e.measurement == host_measurement and e.status == HONEST),
            None,
        )
        if host is not None and verify_quote(registry, attest_quote(host)):
            chosen = host
        else:
            for _, enclave in sorted(world.enclaves.items()):
                if enclave.status != HONEST:
                    continue
                if verify_quote(registry, attest_quote(enclave)):
                    chosen = enclave
                    break
            if chosen is None:
                raise NotAttested("no honest registered enclave remains")
            # Re-hosting needs the container key, so an ongoing KMS outage
            # defers the migration rather than failing it.
            if kms.up_count < kms.threshold:
                if world.pending_events(EVENT_KMS_UP):
                    world.advance(1)
                    continue
                raise KeyUnavailable(
                    f"KMS permanently below threshold ({kms.up_count}/{kms.threshold})"
                )
            container = migrate(container, host, chosen, kms, registry)
            host_measurement = chosen.measurement
            pending_audit.append((OP_MIGRATION, {"enclave": chosen.enclave_id}))
            events.append(f"migrated to {chosen.enclave_id}")
            world.advance(1)
            continue

        # Key service: wait out scheduled outages; a permanent shortfall is
        # a hypothesis violation, reported as such.
        if kms.up_count < kms.threshold:
            if world.pending_events(EVENT_KMS_UP):
                world.advance(1)
                continue
            raise KeyUnavailable(
                f"KMS permanently below threshold ({kms.up_count}/{kms.threshold})"
            )

        # Compromise response: rotate the container key once per newly
        # detected compromise.
        compromised = {e.enclave_id for e in world.enclaves.values() if e.status == COMPROMISED}
        new_compromised = compromised - handled_compromised
        if new_compromised:
            container = rotate_key(kms, container.container_id, container)
            handled_compromised |= new_compromised
            pending_audit.append((OP_KEY_ROTATION, {"epoch": str(kms.epoch)}))
            events.append(f"rotated key to epoch {kms.epoch}")
            world.advance(1)
            continue

        if not quorum_check(registry, world.approvals, world.clock - start):
            world.advance(1)
            continue

        key = derive_key(kms, container.container_id)
        state = unseal(container, key)
        for op_kind, meta in pending_audit:
            append_governance_record(state, op_kind, **meta)
        value = op(state)
        container = seal(
            state,
            key,
            container_id=container.container_id,
            measurement=chosen.measurement,
            registry_ref=container.meta.registry_ref,
            state_version=container.meta.state_version + 1,
            key_epoch=container.meta.key_epoch,
        )
        events.append("executed")
        return ExecutionResult(
            value=value, rounds=world.clock - start, container=container, events=events
        )
