"""Flat binary container for tensors, factor bundles and checkpoints.

Layout (all integers little-endian)::

    magic      4 bytes   b"TAUG"
    version    uint16    currently 1
    kind       uint8     0 tensor, 1 tucker, 2 cp, 3 tt, 4 attn, 5 checkpoint, 6 windows
    order      uint32    order of the represented tensor (0 when not applicable)
    n_ranks    uint32, then n_ranks x uint64
    manifest   uint32 byte length, then UTF-8 JSON (length 0 when absent)
    n_arrays   uint32
    per array  uint16 name length, UTF-8 name, uint8 ndim, ndim x uint64 extents
    payload    each array in header order as float64 little-endian, row-major
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import struct

import numpy as np

from .errors import ParseError

MAGIC = b"TAUG"
VERSION = 1
KINDS = {"tensor": 0, "tucker": 1, "cp": 2, "tt": 3, "attn": 4, "checkpoint": 5, "windows": 6}
_KIND_NAMES = {v: k for k, v in KINDS.items()}


@dataclass
class Container:
    kind: str
    arrays: dict
    order: int = 0
    ranks: tuple = ()
    manifest: dict = field(default_factory=dict)


def dumps(c: Container) -> bytes:
    if c.kind not in KINDS:
        raise ValueError(f"unknown container kind {c.kind!r}")
    out = [MAGIC, struct.pack("<HBI", VERSION, KINDS[c.kind], c.order)]
    out.append(struct.pack("<I", len(c.ranks)))
    out.append(struct.pack(f"<{len(c.ranks)}Q", *c.ranks))
    manifest = json.dumps(c.manifest, sort_keys=True).encode() if c.manifest else b""
    out.append(struct.pack("<I", len(manifest)))
    out.append(manifest)
    arrays = [(name, np.array(a, dtype="<f8", order="C")) for name, a in c.arrays.items()]
    out.append(struct.pack("<I", len(arrays)))
    for name, a in arrays:
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{a.ndim}Q", a.ndim, *a.shape))
    for _, a in arrays:
        out.append(a.tobytes(order="C"))
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ParseError("truncated container")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes) -> Container:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise ParseError("bad container magic")
    version, kind, order = r.unpack("<HBI")
    if version != VERSION:
        raise ParseError(f"unsupported container version {version}")
    if kind not in _KIND_NAMES:
        raise ParseError(f"unknown container kind code {kind}")
    (n_ranks,) = r.unpack("<I")
    ranks = r.unpack(f"<{n_ranks}Q")
    (m_len,) = r.unpack("<I")
    try:
        manifest = json.loads(r.take(m_len).decode()) if m_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad manifest: {exc}") from None
    (n_arrays,) = r.unpack("<I")
    headers = []
    for _ in range(n_arrays):
        (n_len,) = r.unpack("<H")
        try:
            name = r.take(n_len).decode()
        except UnicodeDecodeError:
            raise ParseError("array name is not valid UTF-8") from None
        (ndim,) = r.unpack("<B")
        headers.append((name, r.unpack(f"<{ndim}Q")))
    arrays = {}
    for name, shape in headers:
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(8 * count), dtype="<f8")
        arrays[name] = data.reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise ParseError("trailing bytes after container payload")
    return Container(_KIND_NAMES[kind], arrays, order, tuple(ranks), manifest)


def save(path, c: Container) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(c))


def load(path) -> Container:
    with open(path, "rb") as fh:
        return loads(fh.read())


# -- factor bundles ---------------------------------------------------------

def pack_tensor(t) -> Container:
    t = np.asarray(t, dtype=np.float64)
    return Container("tensor", {"data": t}, order=t.ndim)


def pack_factors(f) -> Container:
    from .decomp import CPFactors, TTFactors, TuckerFactors

    if isinstance(f, TuckerFactors):
        arrays = {"core": f.core, **{f"U{m}": u for m, u in enumerate(f.loadings)}}
        return Container("tucker", arrays, order=f.core.ndim, ranks=tuple(f.ranks))
    if isinstance(f, CPFactors):
        arrays = {"weights": f.weights, **{f"U{m}": u for m, u in enumerate(f.loadings)}}
        return Container("cp", arrays, order=len(f.loadings), ranks=(f.rank,))
    if isinstance(f, TTFactors):
        arrays = {f"C{i}": c for i, c in enumerate(f.cores)}
        return Container("tt", arrays, order=len(f.cores), ranks=tuple(f.ranks))
    raise TypeError(f"cannot pack {type(f).__name__}")


def unpack_factors(c: Container):
    from .decomp import CPFactors, TTFactors, TuckerFactors

    try:
        if c.kind == "tucker":
            return TuckerFactors(c.arrays["core"], [c.arrays[f"U{m}"] for m in range(c.order)])
        if c.kind == "cp":
            return CPFactors(c.arrays["weights"], [c.arrays[f"U{m}"] for m in range(c.order)])
        if c.kind == "tt":
            return TTFactors([c.arrays[f"C{i}"] for i in range(c.order)])
    except KeyError as exc:
        raise ParseError(f"container missing array {exc}") from None
    raise ParseError(f"container kind {c.kind!r} is not a factor bundle")
