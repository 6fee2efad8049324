"""Binary checkpoint records: bit-exact float64 array persistence.

Layout: magic ``DGA1`` then a sequence of records, each
``u64 name-length | name bytes | u64 rank | u64 extents... | f64 payload``
with all integers and floats little-endian. String metadata (vocab,
config echo) rides along as reserved ``__meta__.*`` records holding one
float per utf-8 byte, keeping the container single-format.
"""

import os
import struct

import numpy as np

from .errors import CompatibilityError, DataError

MAGIC = b"DGA1"
META_PREFIX = "__meta__."

_U64 = struct.Struct("<Q")


def _write_record(fh, name, arr):
    raw = name.encode("utf-8")
    fh.write(_U64.pack(len(raw)))
    fh.write(raw)
    fh.write(_U64.pack(arr.ndim))
    for ext in arr.shape:
        fh.write(_U64.pack(ext))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def write_checkpoint(path, arrays, meta=None):
    """Write named float64 arrays (plus optional string metadata) to ``path``.

    ``arrays`` is an ordered name -> ndarray mapping; ``meta`` maps
    string keys to string values. The write is atomic (temp file then
    rename).
    """
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in arrays.items():
            if name.startswith(META_PREFIX):
                raise DataError(f"array name {name!r} collides with metadata prefix")
            _write_record(fh, name, np.asarray(arr, dtype=np.float64))
        for key, value in (meta or {}).items():
            payload = np.frombuffer(value.encode("utf-8"), dtype=np.uint8)
            _write_record(fh, META_PREFIX + key, payload.astype(np.float64))
    os.replace(tmp, path)


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(f"truncated checkpoint while reading {what}")
    return buf


def read_checkpoint(path):
    """Read a checkpoint back as ``(arrays, meta)``.

    Arrays come back bit-identical to what was written. A bad magic
    header raises :class:`CompatibilityError`; truncation raises
    :class:`DataError`.
    """
    arrays = {}
    meta = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CompatibilityError(
                f"{path}: not a checkpoint (bad magic {magic!r})")
        while True:
            head = fh.read(_U64.size)
            if not head:
                break
            if len(head) != _U64.size:
                raise DataError("truncated checkpoint while reading name length")
            (name_len,) = _U64.unpack(head)
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = _U64.unpack(_read_exact(fh, _U64.size, "rank"))
            shape = tuple(
                _U64.unpack(_read_exact(fh, _U64.size, "extent"))[0]
                for _ in range(rank)
            )
            count = 1
            for ext in shape:
                count *= ext
            payload = _read_exact(fh, count * 8, f"payload of {name!r}")
            arr = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
            if name.startswith(META_PREFIX):
                key = name[len(META_PREFIX):]
                meta[key] = arr.astype(np.uint8).tobytes().decode("utf-8")
            else:
                arrays[name] = arr
    return arrays, meta


def store_arrays(store):
    """Ordered name -> data view of a ParameterStore, for writing."""
    return {name: t.data for name, t in store.items()}


def load_into_store(arrays, store):
    """Copy checkpoint arrays into an initialized ParameterStore.

    Every parameter must be present with a matching shape; extras or
    mismatches mean the checkpoint belongs to a different model and
    raise :class:`CompatibilityError`.
    """
    names = set(store.names())
    extra = set(arrays) - names
    missing = names - set(arrays)
    if extra or missing:
        raise CompatibilityError(
            f"checkpoint/model parameter mismatch: missing {sorted(missing)}, "
            f"unexpected {sorted(extra)}")
    for name, t in store.items():
        arr = arrays[name]
        if arr.shape != t.data.shape:
            raise CompatibilityError(
                f"parameter {name!r}: checkpoint shape {arr.shape} != model {t.data.shape}")
        # ascontiguousarray would promote 0-d params to shape (1,)
        data = np.asarray(arr, dtype=np.float64)
        if not data.flags.c_contiguous:
            data = data.copy()
        t.data = data
