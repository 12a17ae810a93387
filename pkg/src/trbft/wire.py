"""Canonical binary serialization.

Every value is self-describing: a one-byte type code followed by its body.
Registered dataclasses encode as ``0x10 | tag | field count | fields`` where
``tag`` is a one-byte message type. Frames are length-prefixed so the same
bytes can feed the simulator, trace files, or a socket transport.

Layout (big-endian)::

    None        00
    False/True  01 / 02
    int         03 int64
    bytes       04 u32 len, data
    str         05 u32 len, utf-8
    tuple/list  06 u32 count, items
    frozenset   07 u32 count, items sorted by encoding
    dict        08 u32 count, (key, value) pairs sorted by key encoding
    record      10 u8 tag, u8 field count, fields in declaration order
"""
from __future__ import annotations

import dataclasses
import struct
from typing import Any, Dict, Type


class WireError(Exception):
    pass


_BY_TAG: Dict[int, Type] = {}
_TAG_OF: Dict[Type, int] = {}


def register(tag: int):
    def wrap(cls):
        if tag in _BY_TAG and _BY_TAG[tag] is not cls:
            raise WireError(f"tag {tag:#x} already used by {_BY_TAG[tag].__name__}")
        if not 0 <= tag <= 0xFF:
            raise WireError("tags are one byte")
        _BY_TAG[tag] = cls
        _TAG_OF[cls] = tag
        return cls
    return wrap


def register_external(tag: int, cls: Type) -> Type:
    return register(tag)(cls)


def tag_of(obj) -> int:
    return _TAG_OF[type(obj)]


def _enc(v: Any, out: bytearray):
    if v is None:
        out += b"\x00"
    elif v is False:
        out += b"\x01"
    elif v is True:
        out += b"\x02"
    elif isinstance(v, int):
        out += b"\x03" + struct.pack(">q", v)
    elif isinstance(v, (bytes, bytearray)):
        out += b"\x04" + struct.pack(">I", len(v)) + bytes(v)
    elif isinstance(v, str):
        b = v.encode()
        out += b"\x05" + struct.pack(">I", len(b)) + b
    elif isinstance(v, (tuple, list)):
        out += b"\x06" + struct.pack(">I", len(v))
        for item in v:
            _enc(item, out)
    elif isinstance(v, frozenset):
        items = sorted(encode(item) for item in v)
        out += b"\x07" + struct.pack(">I", len(items))
        for item in items:
            out += item
    elif isinstance(v, dict):
        pairs = sorted((encode(key), encode(val)) for key, val in v.items())
        out += b"\x08" + struct.pack(">I", len(pairs))
        for key, val in pairs:
            out += key + val
    elif type(v) in _TAG_OF:
        fields = dataclasses.fields(v)
        out += b"\x10" + bytes((_TAG_OF[type(v)], len(fields)))
        for f in fields:
            _enc(getattr(v, f.name), out)
    else:
        raise WireError(f"cannot encode {type(v).__name__}")


def encode(v: Any) -> bytes:
    out = bytearray()
    _enc(v, out)
    return bytes(out)


def _dec(buf: memoryview, pos: int):
    code = buf[pos]
    pos += 1
    if code == 0x00:
        return None, pos
    if code == 0x01:
        return False, pos
    if code == 0x02:
        return True, pos
    if code == 0x03:
        return struct.unpack_from(">q", buf, pos)[0], pos + 8
    if code in (0x04, 0x05):
        (n,) = struct.unpack_from(">I", buf, pos)
        pos += 4
        raw = bytes(buf[pos:pos + n])
        if len(raw) != n:
            raise WireError("truncated byte string")
        return (raw if code == 0x04 else raw.decode()), pos + n
    if code in (0x06, 0x07, 0x08):
        (n,) = struct.unpack_from(">I", buf, pos)
        pos += 4
        if code == 0x08:
            d = {}
            for _ in range(n):
                key, pos = _dec(buf, pos)
                val, pos = _dec(buf, pos)
                d[key] = val
            return d, pos
        items = []
        for _ in range(n):
            item, pos = _dec(buf, pos)
            items.append(item)
        return (tuple(items) if code == 0x06 else frozenset(items)), pos
    if code == 0x10:
        tag, count = buf[pos], buf[pos + 1]
        pos += 2
        cls = _BY_TAG.get(tag)
        if cls is None:
            raise WireError(f"unknown record tag {tag:#x}")
        values = []
        for _ in range(count):
            val, pos = _dec(buf, pos)
            values.append(val)
        return cls(*values), pos
    raise WireError(f"unknown type code {code:#x} at offset {pos - 1}")


def decode(data: bytes) -> Any:
    try:
        value, pos = _dec(memoryview(data), 0)
    except (IndexError, struct.error) as exc:
        raise WireError("truncated input") from exc
    if pos != len(data):
        raise WireError(f"{len(data) - pos} trailing bytes")
    return value


def frame(v: Any) -> bytes:
    body = encode(v)
    return struct.pack(">I", len(body)) + body


def read_frames(data: bytes):
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise WireError("truncated frame header")
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise WireError("truncated frame body")
        yield decode(data[pos:pos + n])
        pos += n
