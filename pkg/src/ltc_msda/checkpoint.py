"""Binary checkpoint format.

Layout (little-endian)::

    b"LTCG"  u32 version  u32 M  u32 K  u32 d  u32 input_dim
    tensor*  (u32 ndim, u64 shape[ndim], float64 data[prod(shape)])
    u64      checksum (blake2b, 8-byte digest) over every byte after the magic

Tensor order: encoder W1 b1 W2 b2, GCN W1 b1 W2 b2, bank prototypes, bank
initialized flags (0/1), encoder first/second moments, GCN first/second
moments, F, A, meta [sigma, beta, step], sampler state.
"""
from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import EncoderParams
from .errors import CheckpointFormatError, DimensionError
from .gcn import GcnParams
from .graph import KnowledgeGraph
from .optim import Moments
from .prototypes import PrototypeBank
from .state import TrainState

MAGIC = b"LTCG"
VERSION = 1
_HEADER = struct.Struct("<5I")
_MASK16 = (1 << 16) - 1


@dataclass
class Checkpoint:
    state: TrainState
    graph: KnowledgeGraph

    @property
    def encoder(self) -> EncoderParams:
        return self.state.encoder

    @property
    def gcn(self) -> GcnParams:
        return self.state.gcn

    @property
    def sigma(self) -> float:
        return self.graph.sigma

    @property
    def M(self) -> int:
        return self.graph.M

    @property
    def K(self) -> int:
        return self.graph.K

    @classmethod
    def from_state(cls, state: TrainState, sigma: float) -> "Checkpoint":
        graph = state.graph
        if graph is None:
            d = state.encoder.feature_dim
            graph = KnowledgeGraph(np.zeros((0, d)), np.zeros((0, 0)), sigma, state.bank.num_domains - 1, state.bank.num_classes)
        return cls(state, graph)


def _u128_chunks(value: int) -> list[float]:
    return [float((value >> (16 * i)) & _MASK16) for i in range(8)]


def _from_chunks(chunks) -> int:
    return sum(int(c) << (16 * i) for i, c in enumerate(chunks))


def _rng_tensor(rng: np.random.Generator) -> np.ndarray:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise CheckpointFormatError(f"unsupported bit generator {st['bit_generator']}")
    vals = _u128_chunks(st["state"]["state"]) + _u128_chunks(st["state"]["inc"])
    vals += [float(st["has_uint32"]), float(st["uinteger"])]
    return np.array(vals)


def _rng_from_tensor(t: np.ndarray) -> np.random.Generator:
    if t.shape != (18,):
        raise CheckpointFormatError("sampler state tensor has the wrong length")
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": _from_chunks(t[:8]), "inc": _from_chunks(t[8:16])},
        "has_uint32": int(t[16]),
        "uinteger": int(t[17]),
    }
    return np.random.Generator(bg)


def _tensors(ckpt: Checkpoint) -> list[np.ndarray]:
    s = ckpt.state
    out = s.encoder.arrays() + s.gcn.arrays()
    out += [s.bank.prototypes, s.bank.initialized.astype(np.float64)]
    out += s.encoder_moments.first.arrays() + s.encoder_moments.second.arrays()
    out += s.gcn_moments.first.arrays() + s.gcn_moments.second.arrays()
    out += [ckpt.graph.F, ckpt.graph.A]
    out += [np.array([ckpt.graph.sigma, s.bank.beta, float(s.step)]), _rng_tensor(s.rng)]
    return out


def to_bytes(ckpt: Checkpoint) -> bytes:
    s = ckpt.state
    parts = [_HEADER.pack(VERSION, ckpt.M, ckpt.K, s.encoder.feature_dim, s.encoder.input_dim)]
    for t in _tensors(ckpt):
        t = np.ascontiguousarray(t, dtype="<f8")
        parts.append(struct.pack("<I", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}Q", *t.shape))
        parts.append(t.tobytes())
    payload = b"".join(parts)
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return MAGIC + payload + digest


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically: a temp file in the same directory is renamed into place."""
    path = Path(path)
    data = to_bytes(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def tensor(self) -> np.ndarray:
        (ndim,) = struct.unpack("<I", self.take(4))
        if ndim > 8:
            raise CheckpointFormatError(f"implausible tensor rank {ndim}")
        shape = struct.unpack(f"<{ndim}Q", self.take(8 * ndim))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        return np.frombuffer(self.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)


def from_bytes(data: bytes, expect_M: int | None = None, expect_K: int | None = None) -> Checkpoint:
    if len(data) < len(MAGIC) + _HEADER.size + 8 or data[:4] != MAGIC:
        raise CheckpointFormatError("not a checkpoint (bad magic or too short)")
    payload, digest = data[4:-8], data[-8:]
    if hashlib.blake2b(payload, digest_size=8).digest() != digest:
        raise CheckpointFormatError("checksum mismatch (corrupt or truncated file)")
    version, M, K, d, input_dim = _HEADER.unpack(payload[:_HEADER.size])
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if expect_M is not None and expect_M != M or expect_K is not None and expect_K != K:
        raise DimensionError(f"checkpoint has (M={M}, K={K}) but config expects (M={expect_M}, K={expect_K})")
    r = _Reader(payload)
    r.pos = _HEADER.size
    try:
        enc = EncoderParams(*(r.tensor() for _ in range(4)))
        gcn = GcnParams(*(r.tensor() for _ in range(4)))
        protos, flags = r.tensor(), r.tensor()
        enc_m = Moments(EncoderParams(*(r.tensor() for _ in range(4))), EncoderParams(*(r.tensor() for _ in range(4))))
        gcn_m = Moments(GcnParams(*(r.tensor() for _ in range(4))), GcnParams(*(r.tensor() for _ in range(4))))
        F, A = r.tensor(), r.tensor()
        meta = r.tensor()
        rng = _rng_from_tensor(r.tensor())
    except CheckpointFormatError:
        raise
    except (ValueError, TypeError) as exc:
        raise CheckpointFormatError(f"malformed tensor section: {exc}") from exc
    if r.pos != len(payload):
        raise CheckpointFormatError("trailing bytes after the last tensor")
    if enc.feature_dim != d or enc.input_dim != input_dim or gcn.num_classes != K or protos.shape != (M + 1, K, d):
        raise CheckpointFormatError("tensor shapes disagree with the header")
    sigma, beta, step = float(meta[0]), float(meta[1]), int(meta[2])
    bank = PrototypeBank(protos, flags.astype(bool), beta)
    graph = KnowledgeGraph(F, A, sigma, M, K)
    state = TrainState(enc, gcn, bank, enc_m, gcn_m, step, rng, graph if F.shape[0] else None)
    return Checkpoint(state, graph)


def load_checkpoint(path, expect_M: int | None = None, expect_K: int | None = None) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), expect_M, expect_K)
