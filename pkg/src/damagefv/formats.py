"""Little-endian binary containers shared by the artifact files.

Every container starts with a 4-byte magic. Readers validate the magic, the
declared sizes and the payload length before building any result, so a bad
file never yields a partially populated object.
"""
import struct

import numpy as np

FORMAT_VERSION = 1
# largest element count a single payload may declare
MAX_ELEMENTS = 2**32 - 1


class FormatError(ValueError):
    """Base class for malformed artifact files."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class SizeOverflowError(FormatError):
    pass


class VersionError(FormatError):
    pass


class Reader:
    """Cursor over an in-memory payload with bounds-checked reads."""

    def __init__(self, data, what="file"):
        self.data = memoryview(data)
        self.pos = 0
        self.what = what

    def expect_magic(self, magic):
        got = bytes(self.take(len(magic)))
        if got != magic:
            raise BadMagicError(f"{self.what}: bad magic {got!r}, expected {magic!r}")

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedError(
                f"{self.what}: truncated, need {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def array(self, dtype, count, shape=None):
        dtype = np.dtype(dtype).newbyteorder("<")
        if count > MAX_ELEMENTS:
            raise SizeOverflowError(f"{self.what}: element count {count} overflows")
        raw = self.take(count * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("="))
        return arr.reshape(shape) if shape is not None else arr

    def version(self, supported=FORMAT_VERSION):
        (v,) = self.unpack("<H")
        if v != supported:
            raise VersionError(f"{self.what}: unsupported version {v}")
        return v

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")


def check_count(*dims, what="payload"):
    total = 1
    for d in dims:
        total *= int(d)
    if total > MAX_ELEMENTS:
        raise SizeOverflowError(f"{what}: {' x '.join(map(str, dims))} elements overflow")
    return total


def le_bytes(arr, dtype):
    return np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


def read_file(path):
    with open(path, "rb") as fh:
        return fh.read()


def write_file(path, payload):
    with open(path, "wb") as fh:
        fh.write(payload)
