"""Little-endian helpers for the versioned binary containers"""

import struct
from io import BytesIO
from typing import Any, Final

import numpy as np
import numpy.typing as npt

from safenet.custom_exceptions import ContainerFormatError

MAGIC_LENGTH: Final[int] = 4


class BinaryWriter:
    def __init__(self, magic: bytes, version: int):
        if len(magic) != MAGIC_LENGTH:
            raise ValueError(f"magic must be {MAGIC_LENGTH} bytes")
        self.buffer = BytesIO()
        self.buffer.write(magic)
        self.u16(version)

    def u8(self, value: int) -> None:
        self.buffer.write(struct.pack("<B", value))

    def u16(self, value: int) -> None:
        self.buffer.write(struct.pack("<H", value))

    def u32(self, value: int) -> None:
        self.buffer.write(struct.pack("<I", value))

    def raw(self, data: bytes) -> None:
        self.buffer.write(data)

    def blob(self, data: bytes) -> None:
        """Length-prefixed (u32) byte string"""
        self.u32(len(data))
        self.buffer.write(data)

    def array(self, values: npt.NDArray[Any], dtype: str) -> None:
        """Raw payload without a header; `dtype` is a little-endian numpy code such as `<f4`."""
        self.buffer.write(np.ascontiguousarray(values, dtype=np.dtype(dtype)).tobytes())

    def getvalue(self) -> bytes:
        return self.buffer.getvalue()


class BinaryReader:
    def __init__(self, data: bytes, magic: bytes, supported_versions: tuple[int, ...] = (1,)):
        self.data = data
        self.offset = 0
        found = self.raw(MAGIC_LENGTH)
        if found != magic:
            raise ContainerFormatError(f"bad magic bytes {found!r}, expected {magic!r}")
        self.version = self.u16()
        if self.version not in supported_versions:
            raise ContainerFormatError(f"unsupported container version {self.version}")

    def raw(self, n: int) -> bytes:
        end = self.offset + n
        if end > len(self.data):
            raise ContainerFormatError(f"container truncated: needed {n} bytes at offset {self.offset}")
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self.raw(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.raw(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.raw(4))[0]

    def blob(self) -> bytes:
        return self.raw(self.u32())

    def array(self, shape: tuple[int, ...], dtype: str) -> npt.NDArray[Any]:
        dt = np.dtype(dtype)
        count = int(np.prod(shape, dtype=np.int64))
        payload = self.raw(count * dt.itemsize)
        return np.frombuffer(payload, dtype=dt).reshape(shape).copy()

    def at_end(self) -> bool:
        return self.offset == len(self.data)
