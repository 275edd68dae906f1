"""Canonical byte packing used by every wire format in the package.

All multi-byte integers are big-endian and fixed width; variable-length
fields carry a 4-byte length prefix; strings are UTF-8. Transaction ids,
block hashes and signatures are computed over these exact encodings, so
any change here is a format break.
"""

from __future__ import annotations

from .errors import EhrChainError


class CodecError(EhrChainError):
    code = "codec"


def pack_u16(v: int) -> bytes:
    return v.to_bytes(2, "big")


def pack_u32(v: int) -> bytes:
    return v.to_bytes(4, "big")


def pack_u64(v: int) -> bytes:
    return v.to_bytes(8, "big")


def pack_bytes(b: bytes) -> bytes:
    """Length-prefixed blob: u32 length followed by the raw bytes."""
    return pack_u32(len(b)) + b


def pack_str(s: str) -> bytes:
    return pack_bytes(s.encode("utf-8"))


class Reader:
    """Sequential reader over one canonical encoding.

    Raises CodecError on truncation; ``done()`` rejects trailing garbage.
    """

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise CodecError(f"truncated input (need {n} bytes at offset {self._pos})")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def blob(self) -> bytes:
        return self.take(self.u32())

    def string(self) -> str:
        raw = self.blob()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CodecError("invalid UTF-8 string field") from exc

    def done(self) -> None:
        if self._pos != len(self._data):
            raise CodecError(f"{len(self._data) - self._pos} trailing bytes")
