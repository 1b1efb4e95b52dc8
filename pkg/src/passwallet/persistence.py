"""Deterministic wallet snapshots with anti-rollback versioning.

Snapshots are canonical JSON, so two saves of equal states are byte-identical
files. The signing secret is never written here: secrets persist only through
enclave sealing. Loading re-verifies the history digest and replays the log
against the stored ledger before returning anything.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from . import canonical
from .errors import RollbackDetected, SnapshotCorrupt
from .model import WalletState
from .provenance import digest

FORMAT_VERSION = 1
SNAPSHOT_SUFFIX = ".pass.json"


@dataclass(frozen=True)
class Snapshot:
    format_version: int
    state_version: int
    state_doc: dict
    digest_of_history: bytes

    def to_doc(self) -> dict:
        return {
            "formatVersion": self.format_version,
            "stateVersion": self.state_version,
            "state": self.state_doc,
            "digestOfH": canonical.hex_str(self.digest_of_history),
        }


def snapshot_of(state: WalletState) -> Snapshot:
    return Snapshot(
        format_version=FORMAT_VERSION,
        state_version=state.state_version,
        state_doc=state.to_doc(include_secret=False),
        digest_of_history=digest(state.history),
    )


def write_atomic(path: str | Path, data: bytes) -> None:
    """Write via a temp file and rename, so a killed process never leaves a
    half-written wallet file behind."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save(state: WalletState, path: str | Path) -> Snapshot:
    snap = snapshot_of(state)
    write_atomic(path, canonical.dumps(snap.to_doc()))
    return snap


def load(path: str | Path, min_version: int = 0) -> WalletState:
    """Load and verify a snapshot.

    Raises SnapshotCorrupt when the file does not parse, the stored history
    digest does not match recomputation, or replaying the history fails to
    reproduce the stored ledger. Raises RollbackDetected when the snapshot is
    older than ``min_version``.
    """
    from .engine import replay_consistent

    try:
        doc = canonical.loads(Path(path).read_bytes())
        if doc.get("formatVersion") != FORMAT_VERSION:
            raise SnapshotCorrupt(f"unsupported format version: {doc.get('formatVersion')!r}")
        state = WalletState.from_doc(doc["state"])
        stored_digest = canonical.parse_hex(doc["digestOfH"])
        stored_version = canonical.parse_uint(doc["stateVersion"])
    except SnapshotCorrupt:
        raise
    except Exception as exc:
        raise SnapshotCorrupt(f"snapshot does not parse: {exc}") from exc
    if stored_version != state.state_version:
        raise SnapshotCorrupt("snapshot version disagrees with state version")
    if digest(state.history) != stored_digest:
        raise SnapshotCorrupt("history digest mismatch")
    if not replay_consistent(state):
        raise SnapshotCorrupt("history does not replay to the stored ledger")
    if state.state_version < min_version:
        raise RollbackDetected(
            f"snapshot version {state.state_version} is older than {min_version}"
        )
    return state
