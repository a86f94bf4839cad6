"""Checksummed binary container shared by the ANMF, ANMD and ANMP formats.

Layout (little-endian):

    magic      4 bytes
    version    u16
    length     u64   payload byte count
    payload    `length` bytes
    crc32      u32   over every preceding byte
"""

import logging
import struct
import zlib
from pathlib import Path

import numpy as np

from anm.errors import (
    ArtifactFormatError,
    ChecksumError,
    FormatVersionError,
    MissingArtifactError,
    TruncatedFileError,
)

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<4sHQ")
_TRAILER = struct.Struct("<I")


def write_container(path: str | Path, magic: bytes, version: int, payload: bytes) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = _HEADER.pack(magic, version, len(payload)) + payload
    blob = body + _TRAILER.pack(zlib.crc32(body))
    path.write_bytes(blob)
    logger.debug("Wrote %s container %s (%d bytes)", magic.decode(), path, len(blob))
    return len(blob)


def read_container(path: str | Path, magic: bytes, supported_version: int) -> tuple[int, bytes]:
    """Return (version, payload) after validating magic, version, length and CRC."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(str(path), _HEADER.size + _TRAILER.size, len(blob))
    found_magic, version, length = _HEADER.unpack_from(blob, 0)
    if found_magic != magic:
        raise ArtifactFormatError(f"{path}: bad magic {found_magic!r}, expected {magic!r}")
    if version > supported_version:
        raise FormatVersionError(str(path), version, supported_version)
    expected = _HEADER.size + length + _TRAILER.size
    if len(blob) < expected:
        raise TruncatedFileError(str(path), expected, len(blob))
    if len(blob) > expected:
        raise ArtifactFormatError(f"{path}: {len(blob) - expected} trailing bytes")
    body_end = _HEADER.size + length
    (stored,) = _TRAILER.unpack_from(blob, body_end)
    computed = zlib.crc32(blob[:body_end])
    if stored != computed:
        raise ChecksumError(str(path), stored, computed)
    return version, blob[_HEADER.size:body_end]


class PayloadWriter:
    """Accumulates little-endian fields for a container payload."""

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> None:
        self._parts.append(struct.pack("<B", value))

    def u32(self, value: int) -> None:
        self._parts.append(struct.pack("<I", value))

    def string(self, value: str) -> None:
        raw = value.encode("utf-8")
        self.u32(len(raw))
        self._parts.append(raw)

    def array(self, arr: np.ndarray, dtype: str) -> None:
        self._parts.append(np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())

    def tensor(self, arr: np.ndarray) -> None:
        """Rank and extents followed by f32 row-major data."""
        self.u8(arr.ndim)
        for extent in arr.shape:
            self.u32(extent)
        self.array(arr, "f4")

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class PayloadReader:
    def __init__(self, payload: bytes, path: str) -> None:
        self._buf = payload
        self._pos = 0
        self._path = path

    def _take(self, count: int) -> bytes:
        end = self._pos + count
        if end > len(self._buf):
            raise ArtifactFormatError(
                f"{self._path}: payload ends early (needs {end} bytes, has {len(self._buf)})"
            )
        chunk = self._buf[self._pos:end]
        self._pos = end
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def string(self) -> str:
        return self._take(self.u32()).decode("utf-8")

    def array(self, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        count = int(np.prod(shape, dtype=np.int64))
        raw = self._take(count * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).astype(dt.newbyteorder("="), copy=True).reshape(shape)

    def tensor(self) -> np.ndarray:
        ndim = self.u8()
        shape = tuple(self.u32() for _ in range(ndim))
        return self.array("f4", shape)

    def done(self) -> None:
        if self._pos != len(self._buf):
            raise ArtifactFormatError(f"{self._path}: {len(self._buf) - self._pos} unread payload bytes")
