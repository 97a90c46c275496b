"""Protocol plug-in surface: a pair of deterministic machines plus declarations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol as _Proto, Sequence

from ..kernel import StepContext, StepResult
from ..model import InvalidSpec, InvalidTransaction, Message, Part, ProcessId, SystemSpec, Transaction

# What a client records for an object that has never been written anywhere.
UNWRITTEN = "unwritten"

PROPERTY_NAMES = ("R", "N", "V", "W")


class WriteArityExceeded(InvalidTransaction):
    pass


class Machine(_Proto):
    def initial_state(self, pid: ProcessId, spec: SystemSpec) -> Any: ...

    def step(self, state: Any, ctx: StepContext, invocations: Sequence[Transaction],
             inbox: Sequence[Message]) -> StepResult: ...


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    client: Machine
    server: Machine
    declared: frozenset[str]
    write_arity_limit: int | None = None
    params: tuple[tuple[str, Any], ...] = ()
    disjoint_only: bool = True

    def __post_init__(self):
        if not self.declared <= set(PROPERTY_NAMES):
            raise ValueError(f"unknown properties {sorted(self.declared - set(PROPERTY_NAMES))}")
        if ("W" in self.declared) != (self.write_arity_limit is None):
            raise ValueError("W must be declared exactly when write arity is unbounded")

    def machine_for(self, p: ProcessId) -> Machine:
        return self.client if p.is_client else self.server

    @property
    def all_four(self) -> bool:
        return self.declared == frozenset(PROPERTY_NAMES)

    def declared_text(self) -> str:
        return "+".join(x for x in PROPERTY_NAMES if x in self.declared)

    def check_spec(self, spec: SystemSpec) -> None:
        if self.disjoint_only and not spec.disjoint:
            raise InvalidSpec(f"{self.name} runs on single-copy (disjoint) storage only")

    def validate_transaction(self, txn: Transaction, spec: SystemSpec) -> None:
        if txn.reads and txn.writes:
            raise InvalidTransaction(f"T{txn.txn_id}: transactions are read-only or write-only")
        if self.write_arity_limit is not None and len(txn.writes) > self.write_arity_limit:
            raise WriteArityExceeded(
                f"T{txn.txn_id} writes {len(txn.writes)} objects; {self.name} allows {self.write_arity_limit}")

    def describe(self) -> str:
        ps = ", ".join(f"{k}={v}" for k, v in self.params)
        return f"{self.name}({ps})" if ps else self.name


@dataclass
class Outbox:
    """Collects parts per destination so a step sends one message per neighbour."""

    parts: dict[ProcessId, list[Part]] = field(default_factory=dict)

    def add(self, dst: ProcessId, p: Part) -> None:
        self.parts.setdefault(dst, []).append(p)

    def sends(self) -> list[tuple[ProcessId, tuple[Part, ...]]]:
        return [(dst, tuple(ps)) for dst, ps in sorted(self.parts.items())]


def parts_of(inbox: Sequence[Message]):
    """Flatten an inbox into (src, part) pairs in arrival order."""
    for m in inbox:
        for p in m.parts:
            yield m.src, p


def servers_for(spec: SystemSpec, objs) -> dict[ProcessId, list]:
    """Group objects by the single server that answers for them."""
    out: dict[ProcessId, list] = {}
    for o in objs:
        out.setdefault(spec.primary(o), []).append(o)
    return out
