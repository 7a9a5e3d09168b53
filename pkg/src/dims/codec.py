"""Little-endian binary encoding helpers shared by the tree and index formats."""

from __future__ import annotations

import struct

from .metric import MetricObject

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")


class DecodeError(ValueError):
    pass


class Writer:
    def __init__(self):
        self.buf = bytearray()

    def u8(self, v: int):
        self.buf += _U8.pack(v)

    def u32(self, v: int):
        self.buf += _U32.pack(v)

    def u64(self, v: int):
        self.buf += _U64.pack(v)

    def i64(self, v: int):
        self.buf += _I64.pack(v)

    def f64(self, v: float):
        self.buf += _F64.pack(v)

    def blob(self, b: bytes):
        self.u32(len(b))
        self.buf += b

    def text(self, s: str):
        self.blob(s.encode("utf-8"))

    def obj(self, o: MetricObject):
        self.u64(o.id)
        if isinstance(o.payload, str):
            self.u8(0)
            self.text(o.payload)
        else:
            self.u8(1)
            self.u32(len(o.payload))
            self.buf += struct.pack(f"<{len(o.payload)}d", *o.payload)

    def getvalue(self) -> bytes:
        return bytes(self.buf)


class Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = memoryview(data)
        self.pos = pos

    def _take(self, s: struct.Struct):
        if self.pos + s.size > len(self.data):
            raise DecodeError("unexpected end of data")
        (v,) = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return v

    def u8(self) -> int:
        return self._take(_U8)

    def u32(self) -> int:
        return self._take(_U32)

    def u64(self) -> int:
        return self._take(_U64)

    def i64(self) -> int:
        return self._take(_I64)

    def f64(self) -> float:
        return self._take(_F64)

    def blob(self) -> bytes:
        n = self.u32()
        if self.pos + n > len(self.data):
            raise DecodeError("unexpected end of data")
        b = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return b

    def text(self) -> str:
        return self.blob().decode("utf-8")

    def obj(self) -> MetricObject:
        oid = self.u64()
        tag = self.u8()
        if tag == 0:
            return MetricObject(oid, self.text())
        if tag != 1:
            raise DecodeError(f"bad payload tag {tag}")
        n = self.u32()
        size = 8 * n
        if self.pos + size > len(self.data):
            raise DecodeError("unexpected end of data")
        vec = struct.unpack_from(f"<{n}d", self.data, self.pos)
        self.pos += size
        return MetricObject(oid, tuple(vec))

    def at_end(self) -> bool:
        return self.pos == len(self.data)
