"""Self-describing tensor dump used for CLI interchange.

Layout (all little-endian): 4-byte magic ``DNFT``, uint32 rank, ``rank``
uint64 dimension sizes, then the row-major float64 payload.
"""
import struct

import numpy as np

MAGIC = b"DNFT"


class TensorFormatError(ValueError):
    pass


def dumps(array):
    arr = np.ascontiguousarray(array, dtype="<f8")
    if not 1 <= arr.ndim <= 4:
        raise ValueError(f"tensor rank must be 1-4, got {arr.ndim}")
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def loads(blob, source="<tensor>"):
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise TensorFormatError(f"{source}: not a tensor dump (bad magic)")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if not 1 <= rank <= 4:
        raise TensorFormatError(f"{source}: unsupported rank {rank}")
    start = 8 + 8 * rank
    if len(blob) < start:
        raise TensorFormatError(f"{source}: truncated header")
    shape = struct.unpack_from(f"<{rank}Q", blob, 8)
    count = int(np.prod(shape))
    if len(blob) != start + 8 * count:
        raise TensorFormatError(f"{source}: payload holds {len(blob) - start} bytes, expected {8 * count}")
    return np.frombuffer(blob, dtype="<f8", offset=start).reshape(shape).astype(np.float64)


def save(path, array):
    with open(path, "wb") as fh:
        fh.write(dumps(array))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read(), str(path))
