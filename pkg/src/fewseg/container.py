"""Binary tensor container used for checkpoints and precomputed-feature files.

Layout (all integers little-endian):

    magic           4 bytes  b"VAT1"
    entry_count     u32
    per entry:
        name_len    u32, then name bytes (UTF-8, unique within the file)
        tag_len     u8,  then dtype tag bytes (ASCII: "f32" | "f64" | "u8")
        rank        u32
        dims        rank * u64
        data        raw little-endian values, C order

Round-trips are bitwise exact, including zero-rank scalars and empty tensors.
"""

import struct

import numpy as np

MAGIC = b"VAT1"

_TAG_TO_DTYPE = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "u8": np.dtype("u1"),
}
_DTYPE_TO_TAG = {
    np.dtype("float32"): "f32",
    np.dtype("float64"): "f64",
    np.dtype("uint8"): "u8",
}


class ContainerError(ValueError):
    """Raised for malformed container files or unsupported entries."""


def write_tensors(path, tensors):
    """Write an ordered name -> ndarray mapping to `path`.

    Only float32, float64 and uint8 arrays are supported.
    """
    names = list(tensors)
    if len(set(names)) != len(names):
        raise ContainerError("duplicate entry names")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.asarray(tensors[name])
            tag = _DTYPE_TO_TAG.get(arr.dtype)
            if tag is None:
                raise ContainerError(f"unsupported dtype {arr.dtype} for entry {name!r}")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            tag_bytes = tag.encode("ascii")
            fh.write(struct.pack("<B", len(tag_bytes)))
            fh.write(tag_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(arr, dtype=_TAG_TO_DTYPE[tag]).tobytes())


def read_tensors(path):
    """Read a container file back into an ordered name -> ndarray dict."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ContainerError("bad magic; not a tensor container")
    off = 4
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (tag_len,) = struct.unpack_from("<B", data, off)
        off += 1
        tag = data[off : off + tag_len].decode("ascii")
        off += tag_len
        if tag not in _TAG_TO_DTYPE:
            raise ContainerError(f"unknown dtype tag {tag!r}")
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", data, off) if rank else ()
        off += 8 * rank
        dtype = _TAG_TO_DTYPE[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        raw = data[off : off + nbytes]
        if len(raw) != nbytes:
            raise ContainerError(f"truncated data for entry {name!r}")
        off += nbytes
        if name in out:
            raise ContainerError(f"duplicate entry name {name!r}")
        out[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    if off != len(data):
        raise ContainerError("trailing bytes after last entry")
    return out
