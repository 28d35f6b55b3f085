"""Binary codec for protocol messages.

Layout (all integers little-endian):

    byte 0      format version (currently 1)
    byte 1      message kind (MsgKind)
    bytes 2..   kind-specific body

Field primitives:

    ts       u64 micros, u32 node, u32 seq               (16 bytes)
    key      u64
    bytes    u32 length prefix + raw bytes
    list     u32 count prefix + items
    f64      IEEE double
    u8/u32/u64 fixed-width unsigned

Body layouts per kind are given by the _SPECS table below; encode and decode
are generated from the same table so they cannot drift apart. decode(encode(m))
is the identity for every message kind (property-tested).
"""

from __future__ import annotations

import struct

from . import types as T
from .types import MsgKind, Timestamp

WIRE_VERSION = 1

_TS = struct.Struct("<QII")
_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")


class WireError(ValueError):
    pass


def _put_ts(out: list, ts: Timestamp):
    out.append(_TS.pack(ts.micros, ts.node, ts.seq))


def _put_bytes(out: list, b: bytes):
    out.append(_U32.pack(len(b)))
    out.append(b)


def _take_ts(buf: bytes, off: int):
    m, n, s = _TS.unpack_from(buf, off)
    return Timestamp(m, n, s), off + 16


def _take_bytes(buf: bytes, off: int):
    (n,) = _U32.unpack_from(buf, off)
    off += 4
    return bytes(buf[off:off + n]), off + n


# Field type tags: u8, u32, u64, i64key (key or -1 sentinel as u64 two's
# complement), f64, ts, bytes, keys (list of u64), reads (list of key+ts),
# writes (list of key+bytes), nodes (list of u32).
_SPECS: dict[int, tuple] = {
    MsgKind.GET: ("u64", "u64"),
    MsgKind.GET_REPLY: ("u64", "u64", "bytes", "ts", "f64"),
    MsgKind.VALIDATE: ("u64", "u8", "ts", "ts", "reads", "keys", "nodes"),
    MsgKind.VALIDATE_REPLY: ("u64", "u8", "u8", "i64key"),
    MsgKind.REPLICATE: ("u64", "ts", "writes", "nodes"),
    MsgKind.REPLICATE_REPLY: ("u64", "u8bool"),
    MsgKind.DECISION: ("u64", "u8", "ts"),
    MsgKind.DECISION_ACK: ("u64",),
    MsgKind.INVALIDATE: ("u64", "ts"),
    MsgKind.FRESHNESS_BROADCAST: ("u32", "ts", "ts"),
    MsgKind.WATERMARK_UPDATE: ("ts", "ts"),
    MsgKind.CTP_QUERY: ("u64", "ts", "nodes"),
    MsgKind.CTP_STATUS: ("u64", "u8"),
    MsgKind.BACKUP_REPLICATE: ("u64", "writes"),
    MsgKind.BACKUP_ACK: ("u64",),
}

_CTORS = {
    MsgKind.GET: T.Get,
    MsgKind.GET_REPLY: T.GetReply,
    MsgKind.VALIDATE: T.Validate,
    MsgKind.VALIDATE_REPLY: T.ValidateReply,
    MsgKind.REPLICATE: T.Replicate,
    MsgKind.REPLICATE_REPLY: T.ReplicateReply,
    MsgKind.DECISION: T.DecisionMsg,
    MsgKind.DECISION_ACK: T.DecisionAck,
    MsgKind.INVALIDATE: T.Invalidate,
    MsgKind.FRESHNESS_BROADCAST: T.FreshnessBroadcast,
    MsgKind.WATERMARK_UPDATE: T.WatermarkUpdate,
    MsgKind.CTP_QUERY: T.CtpQuery,
    MsgKind.CTP_STATUS: T.CtpStatus,
    MsgKind.BACKUP_REPLICATE: T.BackupReplicate,
    MsgKind.BACKUP_ACK: T.BackupAck,
}


def encode(msg) -> bytes:
    kind = msg[0]
    spec = _SPECS.get(kind)
    if spec is None:
        raise WireError(f"unknown message kind {kind}")
    out = [bytes((WIRE_VERSION, kind))]
    for field_type, value in zip(spec, msg[1:], strict=True):
        if field_type == "u64":
            out.append(_U64.pack(value))
        elif field_type == "u32":
            out.append(_U32.pack(value))
        elif field_type == "u8":
            out.append(_U8.pack(value))
        elif field_type == "u8bool":
            out.append(_U8.pack(1 if value else 0))
        elif field_type == "i64key":
            out.append(_U64.pack(value & 0xFFFFFFFFFFFFFFFF))
        elif field_type == "f64":
            out.append(_F64.pack(value))
        elif field_type == "ts":
            _put_ts(out, value)
        elif field_type == "bytes":
            _put_bytes(out, value)
        elif field_type == "keys":
            out.append(_U32.pack(len(value)))
            for k in value:
                out.append(_U64.pack(k))
        elif field_type == "nodes":
            out.append(_U32.pack(len(value)))
            for n in value:
                out.append(_U32.pack(n))
        elif field_type == "reads":
            out.append(_U32.pack(len(value)))
            for k, ts in value:
                out.append(_U64.pack(k))
                _put_ts(out, ts)
        elif field_type == "writes":
            out.append(_U32.pack(len(value)))
            for k, v in value:
                out.append(_U64.pack(k))
                _put_bytes(out, v)
        else:  # pragma: no cover - table typo guard
            raise WireError(f"bad field type {field_type}")
    return b"".join(out)


def decode(buf: bytes):
    if len(buf) < 2:
        raise WireError("short message")
    if buf[0] != WIRE_VERSION:
        raise WireError(f"unsupported wire version {buf[0]}")
    try:
        kind = MsgKind(buf[1])
    except ValueError as e:
        raise WireError(f"unknown message kind {buf[1]}") from e
    fields: list = [kind]
    off = 2
    for field_type in _SPECS[kind]:
        if field_type == "u64":
            (v,) = _U64.unpack_from(buf, off)
            off += 8
        elif field_type == "u32":
            (v,) = _U32.unpack_from(buf, off)
            off += 4
        elif field_type == "u8":
            (v,) = _U8.unpack_from(buf, off)
            off += 1
        elif field_type == "u8bool":
            v = buf[off] != 0
            off += 1
        elif field_type == "i64key":
            (raw,) = _U64.unpack_from(buf, off)
            v = raw - (1 << 64) if raw >= (1 << 63) else raw
            off += 8
        elif field_type == "f64":
            (v,) = _F64.unpack_from(buf, off)
            off += 8
        elif field_type == "ts":
            v, off = _take_ts(buf, off)
        elif field_type == "bytes":
            v, off = _take_bytes(buf, off)
        elif field_type == "keys":
            (n,) = _U32.unpack_from(buf, off)
            off += 4
            items = []
            for _ in range(n):
                (k,) = _U64.unpack_from(buf, off)
                off += 8
                items.append(k)
            v = tuple(items)
        elif field_type == "nodes":
            (n,) = _U32.unpack_from(buf, off)
            off += 4
            items = []
            for _ in range(n):
                (k,) = _U32.unpack_from(buf, off)
                off += 4
                items.append(k)
            v = tuple(items)
        elif field_type == "reads":
            (n,) = _U32.unpack_from(buf, off)
            off += 4
            items = []
            for _ in range(n):
                (k,) = _U64.unpack_from(buf, off)
                off += 8
                ts, off = _take_ts(buf, off)
                items.append((k, ts))
            v = tuple(items)
        elif field_type == "writes":
            (n,) = _U32.unpack_from(buf, off)
            off += 4
            items = []
            for _ in range(n):
                (k,) = _U64.unpack_from(buf, off)
                off += 8
                b, off = _take_bytes(buf, off)
                items.append((k, b))
            v = tuple(items)
        else:  # pragma: no cover
            raise WireError(f"bad field type {field_type}")
        fields.append(v)
    if off != len(buf):
        raise WireError(f"{len(buf) - off} trailing bytes")
    return _CTORS[kind](*fields)
