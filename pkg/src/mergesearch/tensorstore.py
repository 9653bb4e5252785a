"""MRGC checkpoint container and checkpoint pools.

Layout of an MRGC file (all integers little-endian)::

    0..3    b"MRGC"
    4..7    u32 version (= 1)
    8..15   u64 header length H
    16..    H bytes of UTF-8 JSON: {name: {"shape": [...], "offset": int, "len": int}}
    ...     payload: concatenated float32 data, offsets relative to payload start

Trailing zero bytes after the last tensor are tolerated.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import (
    BadMagic,
    CorruptHeader,
    InvalidTensor,
    TruncatedPayload,
    UnsupportedVersion,
)

MAGIC = b"MRGC"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
DTYPE = np.dtype("<f4")


def _as_tensor(name, value):
    if not isinstance(name, str) or not name:
        raise InvalidTensor(f"tensor names must be non-empty strings, got {name!r}")
    if isinstance(value, tuple) and len(value) == 2:
        shape, data = value
        shape = [int(s) for s in shape]
        data = np.asarray(data)
        if data.ndim != 1:
            raise InvalidTensor(f"{name}: flat data expected when a shape is given")
        if any(s <= 0 for s in shape):
            raise InvalidTensor(f"{name}: shape {shape} has non-positive extents")
        if data.size != math.prod(shape):
            raise InvalidTensor(
                f"{name}: data length {data.size} != product of shape {shape}"
            )
        arr = data.astype(DTYPE, copy=True).reshape(shape)
    else:
        arr = np.array(value, dtype=DTYPE, copy=True)
        if arr.ndim == 0 or arr.size == 0:
            raise InvalidTensor(f"{name}: tensors need at least one element and one axis")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TensorMap:
    """An immutable, ordered collection of named float32 tensors.

    ``tensors`` accepts arrays (any shape) or ``(shape, flat_data)`` pairs.
    """

    id: str
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self,
            "tensors",
            {name: _as_tensor(name, value) for name, value in dict(self.tensors).items()},
        )

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def names(self):
        return list(self.tensors)

    def schema(self):
        return [(name, tuple(arr.shape)) for name, arr in self.tensors.items()]

    def bit_equal(self, other):
        """True when names, order, shapes and raw bytes all coincide."""
        if self.schema() != other.schema():
            return False
        return all(self[n].tobytes() == other[n].tobytes() for n in self.tensors)


def write_checkpoint(path, ckpt: TensorMap):
    header = {}
    offset = 0
    for name, arr in ckpt.tensors.items():
        header[name] = {"shape": list(arr.shape), "offset": offset, "len": int(arr.size)}
        offset += arr.size * DTYPE.itemsize
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for arr in ckpt.tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype=DTYPE).tobytes())
    os.replace(tmp, path)


@dataclass(frozen=True)
class _Entry:
    shape: tuple
    offset: int
    length: int


class CheckpointFile:
    """Lazy view of an MRGC file: the header is parsed once, tensors on demand."""

    def __init__(self, path):
        self.path = Path(path)
        self.entries, self.payload_start = _read_header(self.path)

    def names(self):
        return list(self.entries)

    def schema(self):
        return [(name, e.shape) for name, e in self.entries.items()]

    def read(self, name):
        e = self.entries[name]
        with open(self.path, "rb") as fh:
            fh.seek(self.payload_start + e.offset)
            raw = fh.read(e.length * DTYPE.itemsize)
        if len(raw) != e.length * DTYPE.itemsize:
            raise TruncatedPayload(f"{self.path}: tensor {name!r} is truncated")
        arr = np.frombuffer(raw, dtype=DTYPE).reshape(e.shape)
        return arr

    def load(self, id=None):
        return TensorMap(id or self.path.stem, {n: self.read(n) for n in self.entries})


def _read_header(path):
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) < 4 or prefix[:4] != MAGIC:
            raise BadMagic(f"{path}: not an MRGC file")
        if len(prefix) < _PREFIX.size:
            raise CorruptHeader(f"{path}: file ends inside the fixed prefix")
        _, version, header_len = _PREFIX.unpack(prefix)
        if version != VERSION:
            raise UnsupportedVersion(f"{path}: version {version} (supported: {VERSION})")
        if header_len > size - _PREFIX.size:
            raise CorruptHeader(f"{path}: header length {header_len} exceeds file size")
        blob = fh.read(header_len)
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"{path}: header is not valid JSON ({exc})") from None
    if not isinstance(header, dict):
        raise CorruptHeader(f"{path}: header must be a JSON object")

    payload_start = _PREFIX.size + header_len
    payload_size = size - payload_start
    entries = {}
    end = 0
    for name, meta in header.items():
        try:
            shape = tuple(int(s) for s in meta["shape"])
            offset = int(meta["offset"])
            length = int(meta["len"])
        except (KeyError, TypeError, ValueError):
            raise CorruptHeader(f"{path}: malformed entry for {name!r}") from None
        if not name or any(s <= 0 for s in shape) or math.prod(shape) != length:
            raise CorruptHeader(f"{path}: inconsistent shape/len for {name!r}")
        if offset < 0 or offset % 4:
            raise CorruptHeader(f"{path}: bad offset {offset} for {name!r}")
        if offset > payload_size or (offset == payload_size and length > 0):
            raise CorruptHeader(f"{path}: offset of {name!r} points past end of file")
        stop = offset + length * DTYPE.itemsize
        if stop > payload_size:
            raise TruncatedPayload(f"{path}: payload of {name!r} is truncated")
        entries[name] = _Entry(shape, offset, length)
        end = max(end, stop)

    if end < payload_size:
        with open(path, "rb") as fh:
            fh.seek(payload_start + end)
            tail = fh.read()
        if tail.strip(b"\x00"):
            raise CorruptHeader(f"{path}: non-zero bytes after the last tensor")
    return entries, payload_start


def read_checkpoint(path) -> TensorMap:
    return CheckpointFile(path).load()


Location = Union[str, os.PathLike, TensorMap]


@dataclass(frozen=True)
class Mismatch:
    entry: int  # 0-based pool index
    tensor: str
    expected: tuple | None  # None: tensor not in the schema
    found: tuple | None  # None: tensor missing from the entry


@dataclass
class SchemaReport:
    passed: bool
    entries: list
    first_mismatch: Mismatch | None = None

    def describe(self):
        if self.passed:
            return "pool schema ok"
        m = self.first_mismatch
        return (
            f"entry {m.entry} tensor {m.tensor!r}: expected shape {m.expected}, "
            f"found {m.found}"
        )


class CheckpointPool:
    """Ordered candidate checkpoints. Index i (0-based) is the i-th merge weight."""

    def __init__(self, entries):
        self.labels = []
        self._sources = []
        for label, loc in entries:
            self.labels.append(str(label))
            self._sources.append(loc if isinstance(loc, (TensorMap, CheckpointFile)) else CheckpointFile(loc))
        if not self._sources:
            raise ValueError("a checkpoint pool needs at least one entry")

    @classmethod
    def from_tensormaps(cls, ckpts):
        return cls([(c.id, c) for c in ckpts])

    @classmethod
    def from_dir(cls, directory):
        """Open a pool directory written by :func:`save_pool`.

        Without a ``pool.json`` manifest, every ``*.mrgc`` file is used in
        sorted filename order.
        """
        directory = Path(directory)
        manifest = directory / "pool.json"
        if manifest.exists():
            spec = json.loads(manifest.read_text())
            return cls([(e["label"], directory / e["file"]) for e in spec["entries"]])
        files = sorted(directory.glob("*.mrgc"))
        return cls([(f.stem, f) for f in files])

    def __len__(self):
        return len(self._sources)

    def schema(self):
        return self._sources[0].schema()

    def tensor_names(self):
        return [name for name, _ in self.schema()]

    def entry_schema(self, i):
        return self._sources[i].schema()

    def load_tensor(self, i, name):
        src = self._sources[i]
        if isinstance(src, TensorMap):
            return src[name]
        return src.read(name)

    def load(self, i):
        src = self._sources[i]
        if isinstance(src, TensorMap):
            return src
        return src.load(id=self.labels[i])

    def subset(self, indices):
        return CheckpointPool([(self.labels[i], self._sources[i]) for i in indices])

    def content_hash(self):
        """SHA-256 over names, shapes and float32 bytes of every entry, in order."""
        h = hashlib.sha256()
        for i in range(len(self)):
            for name, shape in self.entry_schema(i):
                h.update(json.dumps([name, list(shape)]).encode())
                h.update(np.ascontiguousarray(self.load_tensor(i, name), dtype=DTYPE).tobytes())
            h.update(b"\x00entry\x00")
        return h.hexdigest()


def validate_pool(pool: CheckpointPool) -> SchemaReport:
    reference = dict(pool.schema())
    ok = []
    first = None
    for i in range(len(pool)):
        found = dict(pool.entry_schema(i))
        problem = None
        for name, shape in reference.items():
            if name not in found:
                problem = Mismatch(i, name, shape, None)
            elif found[name] != shape:
                problem = Mismatch(i, name, shape, found[name])
            if problem:
                break
        if problem is None:
            extra = [n for n in found if n not in reference]
            if extra:
                problem = Mismatch(i, extra[0], None, found[extra[0]])
        ok.append(problem is None)
        if problem is not None and first is None:
            first = problem
    return SchemaReport(all(ok), ok, first)


def save_pool(directory, ckpts, labels=None):
    """Write checkpoints plus a ``pool.json`` manifest that fixes their order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, ckpt in enumerate(ckpts):
        label = labels[k] if labels else ckpt.id
        fname = f"{k:03d}_{label}.mrgc"
        write_checkpoint(directory / fname, ckpt)
        entries.append({"label": label, "file": fname})
    (directory / "pool.json").write_text(json.dumps({"entries": entries}, indent=2))
    return CheckpointPool.from_dir(directory)
