"""Binary event log: one header frame, then one frame per event."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, List

from .. import wire

TRACE_VERSION = 1


@wire.register(0x50)
@dataclass(frozen=True)
class TraceHeader:
    version: int
    config_json: str


@wire.register(0x51)
@dataclass(frozen=True)
class TraceEvent:
    tick: int
    kind: str
    src: int
    dst: int
    payload: Any


class TraceWriter:
    def __init__(self, config_json: str):
        self.buf = bytearray(wire.frame(TraceHeader(TRACE_VERSION, config_json)))
        self.events = 0

    def add(self, tick: int, kind: str, src: int, dst: int, payload: Any = None):
        self.buf += wire.frame(TraceEvent(tick, kind, src, dst, payload))
        self.events += 1

    def getvalue(self) -> bytes:
        return bytes(self.buf)


def read_trace(data: bytes):
    frames = wire.read_frames(data)
    header = next(frames, None)
    if not isinstance(header, TraceHeader):
        raise wire.WireError("trace does not start with a header")
    return header, list(frames)


def load_trace(path) -> bytes:
    return Path(path).read_bytes()


def events_of_kind(events: List[TraceEvent], kind: str) -> List[TraceEvent]:
    return [e for e in events if e.kind == kind]
