"""Writer (and self-check reader) for the engine's corpus directory format.

The format is the exporter's only coupling to the engine: a directory
with ``manifest.json`` (format_version, d_sim, d_cond, max_tokens,
n_records, encoder, extras) and ``tensors.bin`` (magic ``DRUM``, u32
version, per-record blocks, then the unconditional embedding). All
integers are little-endian u32, all floats little-endian f32, so output
bytes are a pure function of the input values.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"DRUM"
FORMAT_VERSION = 1


@dataclass
class ExportRecord:
    id: str
    sim_embedding: np.ndarray
    condition: np.ndarray
    preference: float = 1.0
    class_embedding: Optional[np.ndarray] = None


def _f32(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype="<f4"))


def write_corpus(path, records: list[ExportRecord], d_sim: int, d_cond: int,
                 max_tokens: int, uncond: np.ndarray, encoder: str,
                 extras: Optional[dict] = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for rec in records:
        if rec.sim_embedding.shape != (d_sim,):
            raise ValueError(f"record {rec.id!r}: bad sim_embedding shape")
        if rec.condition.ndim != 2 or rec.condition.shape[1] != d_cond \
                or not 1 <= rec.condition.shape[0] <= max_tokens:
            raise ValueError(f"record {rec.id!r}: bad condition shape")
        if rec.class_embedding is not None and rec.class_embedding.shape != (d_cond,):
            raise ValueError(f"record {rec.id!r}: bad class_embedding shape")
        if not rec.preference >= 0:
            raise ValueError(f"record {rec.id!r}: negative preference")

    manifest = {
        "format_version": FORMAT_VERSION,
        "d_sim": d_sim,
        "d_cond": d_cond,
        "max_tokens": max_tokens,
        "n_records": len(records),
        "encoder": encoder,
        "extras": dict(extras or {}),
    }
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    for rec in records:
        rid = rec.id.encode("utf-8")
        blob += struct.pack("<I", len(rid)) + rid
        blob += struct.pack("<I", rec.condition.shape[0])
        blob += _f32(rec.sim_embedding).tobytes()
        blob += _f32(rec.condition).tobytes()
        if rec.class_embedding is not None:
            blob += struct.pack("<B", 1)
            blob += _f32(rec.class_embedding).tobytes()
        else:
            blob += struct.pack("<B", 0)
        blob += struct.pack("<f", rec.preference)
    blob += struct.pack("<I", uncond.shape[0])
    blob += _f32(uncond).tobytes()

    (path / "manifest.json").write_bytes(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8"))
    (path / "tensors.bin").write_bytes(bytes(blob))


def read_corpus(path) -> dict:
    """Parse a corpus directory back; used to self-check exported output."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text("utf-8"))
    data = (path / "tensors.bin").read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError("truncated payload")
        out = data[pos:pos + n]
        pos += n
        return out

    def u32():
        return struct.unpack("<I", take(4))[0]

    def f32s(n):
        return np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32)

    if take(4) != MAGIC or u32() != FORMAT_VERSION:
        raise ValueError("bad magic or version")
    d_sim, d_cond = manifest["d_sim"], manifest["d_cond"]
    records = []
    for _ in range(manifest["n_records"]):
        rid = take(u32()).decode("utf-8")
        T = u32()
        sim = f32s(d_sim)
        cond = f32s(T * d_cond).reshape(T, d_cond)
        cls = f32s(d_cond) if take(1)[0] else None
        pref = struct.unpack("<f", take(4))[0]
        records.append(ExportRecord(id=rid, sim_embedding=sim, condition=cond,
                                    preference=pref, class_embedding=cls))
    T_u = u32()
    uncond = f32s(T_u * d_cond).reshape(T_u, d_cond)
    if pos != len(data):
        raise ValueError("trailing bytes")
    return {"manifest": manifest, "records": records, "uncond": uncond}
