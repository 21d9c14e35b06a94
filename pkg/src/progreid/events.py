"""System entities, system events and the JSONL event log format.

One event per line::

    {"src": {"kind": "Process", "key": "excel.exe"},
     "dst": {"kind": "File", "key": "/tmp/a.dll"},
     "rel": "PF", "ts": 100, "host": "h1"}
"""

from __future__ import annotations

import ipaddress
import json
import logging
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import BadTimestamp, MalformedLine, TypeMismatch

logger = logging.getLogger(__name__)


class EntityType(str, Enum):
    PROCESS = "Process"
    FILE = "File"
    SOCKET = "Socket"


class Relation(str, Enum):
    PP = "PP"
    PF = "PF"
    PI = "PI"


KIND_TAG = {EntityType.PROCESS: "P", EntityType.FILE: "F", EntityType.SOCKET: "I"}

# destination kind implied by each relation
REL_DST_KIND = {
    Relation.PP: EntityType.PROCESS,
    Relation.PF: EntityType.FILE,
    Relation.PI: EntityType.SOCKET,
}


def _check_socket_key(key: str) -> None:
    ip, sep, port = key.rpartition(":")
    if not sep or not ip:
        raise ValueError(f"socket key {key!r} is not <ip>:<port>")
    try:
        ipaddress.ip_address(ip.strip("[]"))
    except ValueError:
        raise ValueError(f"socket key {key!r} has a bad address") from None
    if not port.isdigit() or not 0 <= int(port) <= 65535:
        raise ValueError(f"socket key {key!r} has a bad port")


@dataclass(frozen=True, order=True)
class Entity:
    """A typed system entity identified by its canonical key.

    Processes are keyed by executable name, files by absolute path and
    sockets by ``ip:port``.
    """

    kind: EntityType
    key: str

    def __post_init__(self):
        if not isinstance(self.kind, EntityType):
            object.__setattr__(self, "kind", EntityType(self.kind))
        if not isinstance(self.key, str) or not self.key:
            raise ValueError("entity key must be a non-empty string")
        if self.kind is EntityType.SOCKET:
            _check_socket_key(self.key)

    @classmethod
    def process(cls, name: str) -> "Entity":
        return cls(EntityType.PROCESS, name)

    @classmethod
    def file(cls, path: str) -> "Entity":
        return cls(EntityType.FILE, path)

    @classmethod
    def socket(cls, addr: str) -> "Entity":
        return cls(EntityType.SOCKET, addr)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "key": self.key}


def canonical_entity_id(e: Entity) -> str:
    """``"<tag>:<key>"`` with tag P, F or I; injective over valid entities."""
    return f"{KIND_TAG[e.kind]}:{e.key}"


@dataclass(frozen=True)
class SystemEvent:
    src: Entity
    dst: Entity
    rel: Relation
    ts: int
    host: str

    def __post_init__(self):
        if not isinstance(self.rel, Relation):
            object.__setattr__(self, "rel", Relation(self.rel))
        if self.src.kind is not EntityType.PROCESS:
            raise TypeMismatch(f"event source must be a Process, got {self.src.kind.value}")
        if REL_DST_KIND[self.rel] is not self.dst.kind:
            raise TypeMismatch(
                f"relation {self.rel.value} requires a {REL_DST_KIND[self.rel].value} "
                f"destination, got {self.dst.kind.value}"
            )
        if isinstance(self.ts, bool) or not isinstance(self.ts, int) or self.ts < 0:
            raise BadTimestamp(f"timestamp must be a non-negative integer, got {self.ts!r}")

    def to_dict(self) -> dict:
        return {
            "src": self.src.to_dict(),
            "dst": self.dst.to_dict(),
            "rel": self.rel.value,
            "ts": self.ts,
            "host": self.host,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def _entity_from(obj, field: str) -> Entity:
    if not isinstance(obj, dict):
        raise MalformedLine(f"field {field!r} must be an object")
    try:
        kind = EntityType(obj["kind"])
        key = obj["key"]
    except KeyError as exc:
        raise MalformedLine(f"field {field!r} lacks {exc.args[0]!r}") from None
    except ValueError:
        raise MalformedLine(f"field {field!r} has unknown kind {obj.get('kind')!r}") from None
    if not isinstance(key, str):
        raise MalformedLine(f"field {field!r} key must be a string")
    try:
        return Entity(kind, key)
    except ValueError as exc:
        raise MalformedLine(f"field {field!r}: {exc}") from None


def parse_event_line(line: str) -> SystemEvent:
    """Parse and validate one JSON event object. Unknown fields are ignored."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLine(f"not JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise MalformedLine("event must be a JSON object")
    missing = [f for f in ("src", "dst", "rel", "ts", "host") if f not in obj]
    if missing:
        raise MalformedLine(f"missing field(s) {', '.join(missing)}")
    src = _entity_from(obj["src"], "src")
    dst = _entity_from(obj["dst"], "dst")
    try:
        rel = Relation(obj["rel"])
    except ValueError:
        raise MalformedLine(f"unknown relation {obj['rel']!r}") from None
    host = obj["host"]
    if not isinstance(host, str):
        raise MalformedLine("host must be a string")
    ts = obj["ts"]
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        raise BadTimestamp(f"timestamp must be a non-negative integer, got {ts!r}")
    return SystemEvent(src, dst, rel, ts, host)


def read_event_stream(path: str | os.PathLike, *, skip_bad: bool = False) -> list[SystemEvent]:
    """Read a JSONL event log in file order.

    Stops at the first bad line with its 1-based line number, unless
    ``skip_bad`` is set, in which case bad lines are logged and dropped.
    """
    events = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                events.append(parse_event_line(line))
            except (MalformedLine, TypeMismatch, BadTimestamp) as exc:
                if not skip_bad:
                    raise MalformedLine(f"{exc.code}: {exc}", line_no) from None
                skipped += 1
                logger.warning("%s: skipping line %d: %s", path, line_no, exc)
    if skipped:
        logger.warning("%s: skipped %d bad line(s)", path, skipped)
    return events


def write_event_stream(events: Iterable[SystemEvent], path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_json_line())
            fh.write("\n")
    os.replace(tmp, path)
