"""Core value types shared by the simulator, checkers and protocols."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

ObjectId = str
Value = str


class SimError(Exception):
    """Base class for every error raised by the package."""


class InvalidSpec(SimError):
    pass


class InvalidTransaction(SimError):
    pass


class MetadataViolation(SimError):
    """A message carried something outside the closed metadata vocabulary."""


@dataclass(frozen=True, order=True)
class ProcessId:
    role: str  # "client" | "server"
    index: int

    def __post_init__(self):
        if self.role not in ("client", "server"):
            raise ValueError(f"bad role {self.role!r}")

    @property
    def is_client(self) -> bool:
        return self.role == "client"

    @property
    def is_server(self) -> bool:
        return self.role == "server"

    def __str__(self) -> str:
        return f"{'c' if self.is_client else 'p'}{self.index}"

    __repr__ = __str__

    @classmethod
    def parse(cls, text: str) -> "ProcessId":
        text = text.strip()
        if len(text) < 2 or text[0] not in "cp" or not text[1:].isdigit():
            raise ValueError(f"cannot parse process id {text!r}")
        return cls("client" if text[0] == "c" else "server", int(text[1:]))


def server(i: int) -> ProcessId:
    return ProcessId("server", i)


def client(i: int) -> ProcessId:
    return ProcessId("client", i)


@dataclass(frozen=True)
class SystemSpec:
    """Servers, clients, objects and where each object lives.

    Client indices follow a fixed convention: ``c_i`` for ``i < len(objects)``
    initialises object ``i``, the next client is the writer ``c_w``, and the
    remaining named clients (plus any fresh index above ``client_count``) are
    readers.
    """

    server_count: int
    client_count: int
    objects: tuple[ObjectId, ...]
    replication: Mapping[ObjectId, tuple[int, ...]]
    initial_values: Mapping[ObjectId, Value]

    def __post_init__(self):
        if self.server_count < 2:
            raise InvalidSpec("at least two servers are required")
        if len(self.objects) < 2:
            raise InvalidSpec("at least two objects are required")
        if len(set(self.objects)) != len(self.objects):
            raise InvalidSpec("duplicate object ids")
        if self.client_count < len(self.objects) + 1:
            raise InvalidSpec("need one initializer client per object plus a writer")
        if self.client_count < 4:
            warnings.warn("fewer than four clients; the adversarial constructions need four", stacklevel=3)
        for obj in self.objects:
            where = self.replication.get(obj)
            if not where:
                raise InvalidSpec(f"object {obj} is stored nowhere")
            if any(not 0 <= s < self.server_count for s in where):
                raise InvalidSpec(f"object {obj} mapped to unknown server")
            if obj not in self.initial_values:
                raise InvalidSpec(f"object {obj} has no initial value")
        extra = set(self.replication) - set(self.objects)
        if extra:
            raise InvalidSpec(f"replication map names unknown objects {sorted(extra)}")
        for s in range(self.server_count):
            if not self.stored_at(server(s)):
                raise InvalidSpec(f"server p{s} stores no object")
        if not self.disjoint:
            for s in range(self.server_count):
                if set(self.stored_at(server(s))) == set(self.objects):
                    raise InvalidSpec(f"partial replication: p{s} stores every object")
        clash = set(self.initial_values.values()) & set(self.objects)
        if clash:
            raise InvalidSpec(f"values may not coincide with object ids: {sorted(clash)}")

    @classmethod
    def disjoint_spec(cls, servers: int = 2, clients: int = 4, objects: int | None = None) -> "SystemSpec":
        """Object ``X_i`` on server ``p_(i mod servers)``, initial value ``xi_in``."""
        n = servers if objects is None else objects
        objs = tuple(f"X{i}" for i in range(n))
        return cls(
            server_count=servers,
            client_count=clients,
            objects=objs,
            replication={o: (i % servers,) for i, o in enumerate(objs)},
            initial_values={o: f"x{i}_in" for i, o in enumerate(objs)},
        )

    @classmethod
    def ring_spec(cls, n: int = 3, clients: int | None = None) -> "SystemSpec":
        """Partial replication: ``X_i`` on ``p_i`` and ``p_(i+1 mod n)``."""
        objs = tuple(f"X{i}" for i in range(n))
        return cls(
            server_count=n,
            client_count=clients if clients is not None else n + 2,
            objects=objs,
            replication={o: (i, (i + 1) % n) for i, o in enumerate(objs)},
            initial_values={o: f"x{i}_in" for i, o in enumerate(objs)},
        )

    @property
    def disjoint(self) -> bool:
        return all(len(self.replication[o]) == 1 for o in self.objects)

    @property
    def servers(self) -> tuple[ProcessId, ...]:
        return tuple(server(i) for i in range(self.server_count))

    def holders(self, obj: ObjectId) -> tuple[ProcessId, ...]:
        return tuple(server(i) for i in sorted(self.replication[obj]))

    def primary(self, obj: ObjectId) -> ProcessId:
        """The one replica that answers reads of ``obj``."""
        return self.holders(obj)[0]

    def stored_at(self, p: ProcessId) -> tuple[ObjectId, ...]:
        return tuple(o for o in self.objects if p.index in self.replication[o])

    def initializer(self, obj: ObjectId) -> ProcessId:
        return client(self.objects.index(obj))

    @property
    def initializers(self) -> tuple[ProcessId, ...]:
        return tuple(client(i) for i in range(len(self.objects)))

    @property
    def writer(self) -> ProcessId:
        return client(len(self.objects))

    @property
    def readers(self) -> tuple[ProcessId, ...]:
        return tuple(client(i) for i in range(len(self.objects) + 1, self.client_count))

    @property
    def reserved(self) -> frozenset[ProcessId]:
        """Clients excluded from visibility probes."""
        return frozenset(self.initializers) | {self.writer}


@dataclass(frozen=True)
class Transaction:
    """A static transaction: a read set and a write set known up front."""

    txn_id: int
    client: ProcessId
    reads: tuple[ObjectId, ...] = ()
    writes: tuple[tuple[ObjectId, Value], ...] = ()

    def __post_init__(self):
        if not self.reads and not self.writes:
            raise InvalidTransaction(f"T{self.txn_id} is empty")
        wobjs = [o for o, _ in self.writes]
        if len(set(wobjs)) != len(wobjs) or len(set(self.reads)) != len(self.reads):
            raise InvalidTransaction(f"T{self.txn_id} names an object twice")

    @property
    def read_only(self) -> bool:
        return not self.writes

    @property
    def write_only(self) -> bool:
        return not self.reads

    @property
    def write_set(self) -> tuple[ObjectId, ...]:
        return tuple(o for o, _ in self.writes)

    def written(self, obj: ObjectId) -> Value | None:
        return dict(self.writes).get(obj)


# Every key a protocol may put in message metadata. None of them may carry a
# written value; strings inside metadata must be object ids.
META_KEYS = frozenset({
    "txn", "rot", "stamp", "stamps", "cutoff", "snapshot", "deps", "objs",
    "phase", "req", "rot_ids", "dep_ts", "lst", "count",
})
PART_KINDS = frozenset({
    "read", "read_resp", "write", "write_ack", "prepare", "prepare_ack",
    "phase", "phase_ack", "commit", "commit_ack", "dep_check", "dep_reply",
    "cutoff_req", "cutoff_resp", "gossip", "relay",
})


@dataclass(frozen=True)
class Part:
    """One logical item inside a message; a message may batch several."""

    kind: str
    values: tuple[tuple[ObjectId, Value], ...] = ()
    meta: tuple[tuple[str, Any], ...] = ()

    def get(self, key: str, default: Any = None) -> Any:
        for k, v in self.meta:
            if k == key:
                return v
        return default


def part(kind: str, values: Iterable[tuple[ObjectId, Value]] = (), **meta: Any) -> Part:
    return Part(kind, tuple(values), tuple(sorted(meta.items())))


@dataclass(frozen=True)
class Message:
    msg_id: int
    src: ProcessId
    dst: ProcessId
    parts: tuple[Part, ...]

    @property
    def payload(self) -> tuple[tuple[ObjectId, Value], ...]:
        return tuple(v for p in self.parts for v in p.values)

    def content(self) -> tuple:
        """Everything except the id; used to compare runs whose ids differ."""
        return (self.src, self.dst, self.parts)


def check_meta(msg: Message, objects: Iterable[ObjectId]) -> None:
    objs = set(objects)

    def walk(x: Any, where: str) -> None:
        if x is None or isinstance(x, (bool, int)):
            return
        if isinstance(x, str):
            if x not in objs:
                raise MetadataViolation(f"message {msg.msg_id}: string {x!r} in {where} is not an object id")
            return
        if isinstance(x, (tuple, frozenset)):
            for y in x:
                walk(y, where)
            return
        raise MetadataViolation(f"message {msg.msg_id}: unsupported metadata type {type(x).__name__}")

    for p in msg.parts:
        if p.kind not in PART_KINDS:
            raise MetadataViolation(f"message {msg.msg_id}: unknown part kind {p.kind!r}")
        for key, val in p.meta:
            if key not in META_KEYS:
                raise MetadataViolation(f"message {msg.msg_id}: metadata key {key!r} not allowed")
            walk(val, key)
        for obj, _ in p.values:
            if obj not in objs:
                raise MetadataViolation(f"message {msg.msg_id}: payload names unknown object {obj!r}")
