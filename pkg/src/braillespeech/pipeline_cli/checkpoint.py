"""BIPC checkpoint files: a flat table of named float32 tensors.

Layout (little endian): ``b"BIPC"``, u32 version, u32 tensor count, then per
tensor u16 name length, UTF-8 name, u8 rank, u32 dims and the f32 payload,
and finally the CRC32 of everything before it.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from braillespeech.errors import CheckpointMismatch, CorruptFile, IoFailure, VersionMismatch

MAGIC = b"BIPC"
VERSION = 1


def encode(tensors):
    """``tensors``: mapping name -> array. Names are written in sorted order."""
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4", order="C")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob):
    if len(blob) < 16:
        raise CorruptFile("checkpoint is truncated")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFile("checkpoint checksum mismatch")
    if body[:4] != MAGIC:
        raise CorruptFile("not a BIPC checkpoint")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    pos = 12
    tensors = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            name = body[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (rank,) = struct.unpack_from("<B", body, pos)
            shape = struct.unpack_from(f"<{rank}I", body, pos + 1)
            pos += 1 + 4 * rank
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(body):
                raise CorruptFile(f"tensor {name} runs past the end of the file")
            tensors[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=pos).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise CorruptFile(f"malformed tensor table: {exc}") from exc
    if pos != len(body):
        raise CorruptFile("trailing bytes after the tensor table")
    return tensors


def save_checkpoint(path, tensors):
    try:
        with open(path, "wb") as fh:
            fh.write(encode(tensors))
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            return decode(fh.read())
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def state_of(store, prefix=""):
    return {name: t.data for name, t in store.items() if name.startswith(prefix)}


def restore(store, tensors, prefix):
    """Copy the ``prefix`` tensors into ``store``; names must match exactly."""
    want = {n for n in store if n.startswith(prefix)}
    have = {n for n in tensors if n.startswith(prefix)}
    if not have:
        raise CheckpointMismatch(f"checkpoint holds no {prefix!r} tensors")
    if want != have:
        missing, extra = sorted(want - have), sorted(have - want)
        raise CheckpointMismatch(f"{prefix} tensor names differ: missing {missing[:3]}, unexpected {extra[:3]}")
    for name in want:
        t = store[name]
        if t.data.shape != tensors[name].shape:
            raise CheckpointMismatch(f"{name}: shape {tensors[name].shape} vs model {t.data.shape}")
        t.data = tensors[name].astype(t.data.dtype)
