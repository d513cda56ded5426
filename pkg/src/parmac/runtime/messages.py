"""Circulating submodel messages and their binary wire format.

Layout (all little-endian)::

    u8  kind            0 = hash bit, 1 = decoder row
    u32 submodel index  bit l or row d within its kind
    u32 counter         hop count, starts at 1
    u32 n_words         number of u64 bitmap words that follow
    u64 * n_words       visit bitmap
    u32 payload length  number of float64 values
    f64 * length        weights

The visit bitmap is a sequence of machine-set segments, each
``words_per_segment`` words wide: while a submodel is still training, one
segment per remaining training round (the first is the current round) plus
a final segment for the redistribution round; during redistribution only
that final segment remains.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import WireFormatError

ENCODER_BIT = 0
DECODER_ROW = 1

_HEAD = struct.Struct("<BIII")
_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class SubmodelMsg:
    kind: int
    index: int
    counter: int
    visits: tuple[frozenset, ...]
    payload: np.ndarray

    @classmethod
    def for_submodel(cls, sid: int, L: int, counter: int, visits, payload) -> "SubmodelMsg":
        kind, index = (ENCODER_BIT, sid) if sid < L else (DECODER_ROW, sid - L)
        w = np.array(payload, dtype=np.float64, copy=True)
        w.setflags(write=False)
        return cls(kind, index, counter, tuple(frozenset(v) for v in visits), w)

    def sid(self, L: int) -> int:
        return self.index if self.kind == ENCODER_BIT else L + self.index

    @property
    def visit_list(self) -> frozenset:
        return self.visits[0]

    @property
    def in_training(self) -> bool:
        return len(self.visits) >= 2

    def with_(self, **kw) -> "SubmodelMsg":
        d = dict(kind=self.kind, index=self.index, counter=self.counter,
                 visits=self.visits, payload=self.payload)
        d.update(kw)
        if "payload" in kw:
            w = np.array(kw["payload"], dtype=np.float64, copy=True)
            w.setflags(write=False)
            d["payload"] = w
        d["visits"] = tuple(frozenset(v) for v in d["visits"])
        return SubmodelMsg(**d)

    def pruned(self, dead) -> "SubmodelMsg":
        if not dead or not any(v & dead for v in self.visits):
            return self
        return self.with_(visits=tuple(v - dead for v in self.visits))


def words_per_segment(id_capacity: int) -> int:
    return max(1, -(-id_capacity // 64))


def _segment_words(machines: frozenset, wps: int) -> list[int]:
    words = [0] * wps
    for m in machines:
        if m < 0 or m >= 64 * wps:
            raise WireFormatError(f"machine id {m} outside bitmap capacity {64 * wps}")
        words[m // 64] |= 1 << (m % 64)
    return words


def encode_msg(msg: SubmodelMsg, id_capacity: int = 64) -> bytes:
    """Serialise a submodel message. Only weights and bookkeeping go on the wire."""
    if not isinstance(msg, SubmodelMsg):
        raise TypeError("only SubmodelMsg values can be sent")
    wps = words_per_segment(id_capacity)
    words = []
    for seg in msg.visits:
        words.extend(_segment_words(seg, wps))
    payload = np.ascontiguousarray(msg.payload, dtype="<f8")
    if payload.ndim != 1:
        raise WireFormatError("payload must be a single weight vector")
    return b"".join([
        _HEAD.pack(msg.kind, msg.index, msg.counter, len(words)),
        np.asarray(words, dtype="<u8").tobytes(),
        _LEN.pack(payload.size),
        payload.tobytes(),
    ])


def decode_msg(blob: bytes, id_capacity: int = 64) -> SubmodelMsg:
    if len(blob) < _HEAD.size:
        raise WireFormatError("message shorter than its header")
    kind, index, counter, n_words = _HEAD.unpack_from(blob, 0)
    if kind not in (ENCODER_BIT, DECODER_ROW):
        raise WireFormatError(f"unknown submodel kind {kind}")
    wps = words_per_segment(id_capacity)
    if n_words % wps:
        raise WireFormatError("bitmap length is not a whole number of segments")
    off = _HEAD.size
    end = off + 8 * n_words
    if len(blob) < end + _LEN.size:
        raise WireFormatError("truncated bitmap")
    words = np.frombuffer(blob[off:end], dtype="<u8")
    (n,) = _LEN.unpack_from(blob, end)
    off = end + _LEN.size
    if len(blob) != off + 8 * n:
        raise WireFormatError("payload length mismatch")
    payload = np.frombuffer(blob[off:], dtype="<f8").astype(np.float64)
    visits = []
    for s in range(n_words // wps):
        seg = set()
        for j in range(wps):
            word = int(words[s * wps + j])
            b = 0
            while word:
                if word & 1:
                    seg.add(64 * j + b)
                word >>= 1
                b += 1
        visits.append(frozenset(seg))
    payload.setflags(write=False)
    return SubmodelMsg(kind, index, counter, tuple(visits), payload)
