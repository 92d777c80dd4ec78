"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"VD2NN"                     magic
    u16                          format version
    u32 + bytes                  resolved run config, UTF-8
    u32 L, u32 n                 layer count and grid size
    L * n * n float64            phases, row-major, wrapped into [0, 2*pi)
    u8                           1 if an electronic head follows, else 0
    [u32 k_in, u32 k_out, k_in*k_out float64 weights, k_out float64 bias]
    u32                          CRC-32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vd2nn.config import RunConfig, parse_config
from vd2nn.errors import ChecksumError, CheckpointError, ConfigError, VersionMismatchError
from vd2nn.network import DiffractiveNetwork
from vd2nn.readout import ElectronicHead

MAGIC = b"VD2NN"
VERSION = 1
TWO_PI = 2 * np.pi

__all__ = ["Checkpoint", "MAGIC", "VERSION", "wrap_phase", "encode", "decode", "save", "load"]


def wrap_phase(phase: np.ndarray) -> np.ndarray:
    """Map phases into ``[0, 2*pi)``; idempotent on already wrapped values."""
    w = np.mod(np.asarray(phase, dtype=np.float64), TWO_PI)
    # np.mod can round a tiny negative input up to exactly 2*pi
    return np.where(w >= TWO_PI, 0.0, w)


@dataclass(eq=False)
class Checkpoint:
    config_text: str
    phases: list[np.ndarray]
    electronic: ElectronicHead | None = None

    @classmethod
    def from_network(cls, config: RunConfig, network: DiffractiveNetwork) -> "Checkpoint":
        return cls(config.to_text(), [layer.phase for layer in network.layers], network.head.electronic)

    def config(self) -> RunConfig:
        try:
            return parse_config(self.config_text)
        except ConfigError as exc:
            raise CheckpointError(f"checkpoint carries an invalid config: {exc}") from exc

    def network(self) -> DiffractiveNetwork:
        cfg = self.config()
        net = cfg.build_network()
        if len(self.phases) != cfg.geometry.num_layers:
            raise CheckpointError(
                f"checkpoint has {len(self.phases)} layers, its config says {cfg.geometry.num_layers}"
            )
        params = [wrap_phase(p) for p in self.phases]
        if net.head.electronic is not None:
            if self.electronic is None:
                raise CheckpointError("hybrid config but no electronic head arrays in checkpoint")
            params += [self.electronic.weights, self.electronic.bias]
        elif self.electronic is not None:
            raise CheckpointError("electronic head arrays present for a non-hybrid config")
        return net.with_parameters(params)


def encode(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config_text.encode("utf-8")
    if not ckpt.phases:
        raise CheckpointError("checkpoint has no layers")
    n = ckpt.phases[0].shape[0]
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(cfg)), cfg]
    parts.append(struct.pack("<II", len(ckpt.phases), n))
    for p in ckpt.phases:
        if p.shape != (n, n):
            raise CheckpointError(f"layer shape {p.shape} differs from ({n}, {n})")
        parts.append(wrap_phase(p).astype("<f8").tobytes(order="C"))
    if ckpt.electronic is None:
        parts.append(b"\x00")
    else:
        w, b = ckpt.electronic.weights, ckpt.electronic.bias
        parts.append(b"\x01" + struct.pack("<II", *w.shape))
        parts.append(w.astype("<f8").tobytes(order="C"))
        parts.append(b.astype("<f8").tobytes(order="C"))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def decode(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 2 + 4 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (stored,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored:
        raise ChecksumError("checkpoint checksum mismatch; the file is corrupted")
    r = _Reader(data[:-4])
    r.take(len(MAGIC))
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, this build reads {VERSION}")
    (cfg_len,) = r.unpack("<I")
    try:
        text = r.take(cfg_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError("config block is not valid UTF-8") from exc
    num_layers, n = r.unpack("<II")
    phases = [r.floats((n, n)) for _ in range(num_layers)]
    (flag,) = r.unpack("<B")
    electronic = None
    if flag == 1:
        k_in, k_out = r.unpack("<II")
        electronic = ElectronicHead(r.floats((k_in, k_out)), r.floats((k_out,)))
    elif flag != 0:
        raise CheckpointError(f"bad electronic-head flag {flag}")
    if r.pos != len(r.data):
        raise CheckpointError(f"{len(r.data) - r.pos} trailing bytes in checkpoint")
    return Checkpoint(text, phases, electronic)


def save(ckpt: Checkpoint, path) -> None:
    try:
        Path(path).write_bytes(encode(ckpt))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def load(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(data)
