"""Composable constraint conjuncts attached to the allow predicate.

A policy set is a conjunction: every conjunct must pass for an operation to
proceed, and an empty set allows everything. Conjuncts see only the
operation context (subaccount, asset, amount, external destination when one
exists); destination filters are vacuously true for internal transfers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import canonical
from .model import AssetId, normalize_address


@dataclass(frozen=True)
class PolicyContext:
    subaccount: str
    asset: AssetId
    amount: int
    ext_dst: str | None = None


class AllowAll:
    """The identity conjunct."""

    def evaluate(self, ctx: PolicyContext) -> bool:
        return True

    def to_doc(self) -> dict:
        return {"kind": "allowAll"}


class WhitelistDest:
    """Withdrawals may only target listed addresses."""

    def __init__(self, addresses):
        self.addresses = frozenset(normalize_address(a) for a in addresses)

    def evaluate(self, ctx: PolicyContext) -> bool:
        if ctx.ext_dst is None:
            return True
        return ctx.ext_dst in self.addresses

    def to_doc(self) -> dict:
        return {"kind": "whitelistDest", "addresses": sorted(self.addresses)}


class BlacklistDest:
    """Withdrawals to listed addresses are refused."""

    def __init__(self, addresses):
        self.addresses = frozenset(normalize_address(a) for a in addresses)

    def evaluate(self, ctx: PolicyContext) -> bool:
        if ctx.ext_dst is None:
            return True
        return ctx.ext_dst not in self.addresses

    def to_doc(self) -> dict:
        return {"kind": "blacklistDest", "addresses": sorted(self.addresses)}


class SubaccountSpendCap:
    """Caps what a subaccount may spend of an asset per evaluation window.

    Windows are explicit: counters accumulate until ``reset_window`` is
    called, never by wall clock, so evaluation stays a pure function of
    (context, counters). Counters advance only when the engine records a
    committed spend.
    """

    def __init__(self, caps: dict[str, dict[AssetId, int]]):
        self.caps = {sub: dict(book) for sub, book in caps.items()}
        self.spent: dict[tuple[str, AssetId], int] = {}

    def evaluate(self, ctx: PolicyContext) -> bool:
        cap = self.caps.get(ctx.subaccount, {}).get(ctx.asset)
        if cap is None:
            return True
        used = self.spent.get((ctx.subaccount, ctx.asset), 0)
        return used + ctx.amount <= cap

    def record_spend(self, ctx: PolicyContext) -> None:
        key = (ctx.subaccount, ctx.asset)
        self.spent[key] = self.spent.get(key, 0) + ctx.amount

    def reset_window(self) -> None:
        self.spent.clear()

    def to_doc(self) -> dict:
        return {
            "kind": "spendCap",
            "caps": {
                sub: {asset.key(): cap for asset, cap in sorted(book.items())}
                for sub, book in sorted(self.caps.items())
            },
        }


@dataclass
class PolicySet:
    """Conjunction of constraints; an empty list is equivalent to allow-all."""

    conjuncts: list = field(default_factory=list)

    def evaluate(self, ctx: PolicyContext) -> bool:
        return all(conjunct.evaluate(ctx) for conjunct in self.conjuncts)

    def record_spend(self, ctx: PolicyContext) -> None:
        for conjunct in self.conjuncts:
            recorder = getattr(conjunct, "record_spend", None)
            if recorder is not None:
                recorder(ctx)

    def reset_window(self) -> None:
        for conjunct in self.conjuncts:
            resetter = getattr(conjunct, "reset_window", None)
            if resetter is not None:
                resetter()

    def to_doc(self) -> list:
        return [conjunct.to_doc() for conjunct in self.conjuncts]

    @classmethod
    def from_doc(cls, doc: list) -> PolicySet:
        conjuncts = []
        for item in doc:
            kind = item.get("kind")
            if kind == "allowAll":
                conjuncts.append(AllowAll())
            elif kind == "whitelistDest":
                conjuncts.append(WhitelistDest(item["addresses"]))
            elif kind == "blacklistDest":
                conjuncts.append(BlacklistDest(item["addresses"]))
            elif kind == "spendCap":
                conjuncts.append(
                    SubaccountSpendCap(
                        {
                            sub: {
                                AssetId.from_key(k): canonical.parse_uint(v)
                                for k, v in book.items()
                            }
                            for sub, book in item["caps"].items()
                        }
                    )
                )
            else:
                raise ValueError(f"unknown policy conjunct kind: {kind!r}")
        return cls(conjuncts=conjuncts)


def allow_all() -> PolicySet:
    return PolicySet()
