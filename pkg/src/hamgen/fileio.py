"""Binary containers shared by dataset and checkpoint files.

Every container ends with a little-endian CRC32 of all preceding bytes.
"""
import json
import os
import struct
import zlib

import numpy as np


class FormatError(ValueError):
    """A file is not a valid hamgen container."""


class VersionMismatch(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class ChecksumError(FormatError):
    pass


def seal(payload: bytes) -> bytes:
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def unseal(blob: bytes, magic: bytes) -> bytes:
    """Check magic and trailing CRC32; return the payload without the CRC."""
    if len(blob) < len(magic) + 4:
        raise TruncatedFile(f"file is {len(blob)} bytes, too short for a container")
    if not blob.startswith(magic):
        head = blob[: len(magic)]
        if head.split(b"-")[:2] == magic.split(b"-")[:2]:
            raise VersionMismatch(f"expected {magic!r}, found {head!r}")
        raise FormatError(f"bad magic {head!r}, expected {magic!r}")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC32 mismatch; file is corrupted")
    return payload


def dump_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def atomic_write(path, blob: bytes):
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


CKPT_MAGIC = b"HAMGEN-CKPT-1\n"


def write_arrays(path, meta: dict, arrays: dict):
    """Write named float64 arrays plus a JSON header as a checkpoint container."""
    manifest = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    header = dump_json({"meta": meta, "arrays": manifest})
    parts = [CKPT_MAGIC, struct.pack("<I", len(header)), header]
    for v in arrays.values():
        parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    atomic_write(path, seal(b"".join(parts)))


def read_arrays(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    payload = unseal(blob, CKPT_MAGIC)
    pos = len(CKPT_MAGIC)
    if len(payload) < pos + 4:
        raise TruncatedFile("checkpoint header missing")
    (hlen,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    header = json.loads(payload[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(payload):
            raise TruncatedFile(f"array {entry['name']!r} truncated")
        arrays[entry["name"]] = np.frombuffer(payload, "<f8", int(nbytes // 8), pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(payload):
        raise FormatError("trailing bytes after last array")
    return header["meta"], arrays
