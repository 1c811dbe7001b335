"""Binary containers: "XVEM" embedding files and "XVMC" checkpoints.

All integers are little-endian. Strings are u32 length + UTF-8 bytes.

XVEM layout:
    magic "XVEM" | u32 N | u32 E | N id strings | N*E float32 values

XVMC layout:
    magic "XVMC" | u32 version(=1) | stage string | i64 seed
    | digest string | u32 tensor count
    | per tensor: name string | u32 ndim | u32 dims... | float32 values

Values are stored as float32, so a round trip reproduces parameters to
32-bit precision. Tensor order is preserved, which makes save->load->save
byte-identical.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .retrieval import EmbeddingMatrix

EMBED_MAGIC = b"XVEM"
CKPT_MAGIC = b"XVMC"
CKPT_VERSION = 1


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"{self.path}: truncated, expected {self.pos + n} bytes, "
                f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self.take(8))[0]

    def string(self) -> str:
        n = self.u32()
        return self.take(n).decode("utf-8")

    def f32_array(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_embeddings(path, matrix: EmbeddingMatrix) -> None:
    n, e = matrix.data.shape
    parts = [EMBED_MAGIC, struct.pack("<II", n, e)]
    parts += [_pack_string(i) for i in matrix.ids]
    parts.append(matrix.data.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_embeddings(path) -> EmbeddingMatrix:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != EMBED_MAGIC:
        raise FormatError(f"{path}: bad magic, not an embedding container")
    n, e = r.u32(), r.u32()
    ids = [r.string() for _ in range(n)]
    data = r.f32_array(n * e).reshape(n, e) if n else np.zeros((0, e))
    return EmbeddingMatrix(ids, data)


@dataclass
class Checkpoint:
    stage: str
    seed: int
    config_digest: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    config_text: str = ""

    def num_values(self) -> int:
        return sum(int(np.prod(a.shape)) for a in self.tensors.values())


CONFIG_BLOCK = "meta.config_text"


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), _pack_string(ckpt.stage),
             struct.pack("<q", int(ckpt.seed)), _pack_string(ckpt.config_digest)]
    tensors = dict(ckpt.tensors)
    if ckpt.config_text:
        # config text rides along as a float block so checkpoints stay
        # self-describing; each float holds one byte value
        tensors[CONFIG_BLOCK] = np.frombuffer(
            ckpt.config_text.encode("utf-8"), dtype=np.uint8).astype(np.float64)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        parts.append(_pack_string(name))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic, not a checkpoint container")
    version = r.u32()
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    stage = r.string()
    seed = r.i64()
    digest = r.string()
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.string()
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        tensors[name] = r.f32_array(size).reshape(shape)
    config_text = ""
    if CONFIG_BLOCK in tensors:
        raw = tensors.pop(CONFIG_BLOCK)
        config_text = bytes(raw.astype(np.uint8)).decode("utf-8")
    return Checkpoint(stage, seed, digest, tensors, config_text)
