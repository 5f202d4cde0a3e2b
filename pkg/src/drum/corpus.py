"""Corpus data model and its bit-exact on-disk format.

A corpus directory holds two files:

* ``manifest.json`` -- format_version, dimensions, record count, encoder
  name and free-form extras, serialized with sorted keys so identical
  corpora produce identical bytes.
* ``tensors.bin`` -- magic ``DRUM``, u32 format version, then one block
  per record (id, token count, similarity embedding, condition matrix,
  optional class embedding, preference), followed by the unconditional
  embedding. All integers little-endian u32, all floats little-endian
  f32.

Corpora are immutable after load and safe to share across threads.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CorpusFormatError, TruncatedCorpusError, ValidationError

MAGIC = b"DRUM"
FORMAT_VERSION = 1


@dataclass
class PromptRecord:
    """One historical or target prompt in embedding form.

    ``sim_embedding`` lives in the similarity (CLIP) space used for
    profiling and metrics; ``condition`` holds the pre-normalization
    text-encoder tokens the adapter consumes; ``preference`` is the
    nonnegative intensity attached to this prompt (1.0 when unrated).
    """

    id: str
    sim_embedding: np.ndarray
    condition: np.ndarray
    preference: float = 1.0
    class_embedding: Optional[np.ndarray] = None
    text: Optional[str] = None

    def __eq__(self, other):
        if not isinstance(other, PromptRecord):
            return NotImplemented
        if (self.id, self.text, self.preference) != (other.id, other.text, other.preference):
            return False
        if not np.array_equal(self.sim_embedding, other.sim_embedding):
            return False
        if not np.array_equal(self.condition, other.condition):
            return False
        if (self.class_embedding is None) != (other.class_embedding is None):
            return False
        if self.class_embedding is not None:
            return np.array_equal(self.class_embedding, other.class_embedding)
        return True


@dataclass
class EmbeddingCorpus:
    """Ordered collection of PromptRecords plus dimensional metadata."""

    records: list[PromptRecord]
    d_sim: int
    d_cond: int
    max_tokens: int
    uncond: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingCorpus):
            return NotImplemented
        return (
            self.d_sim == other.d_sim
            and self.d_cond == other.d_cond
            and self.max_tokens == other.max_tokens
            and np.array_equal(self.uncond, other.uncond)
            and self.records == other.records
        )

    def record_by_id(self, rid: str) -> PromptRecord:
        for rec in self.records:
            if rec.id == rid:
                return rec
        raise KeyError(rid)

    def validate(self) -> None:
        """Check every structural invariant; raise ValidationError on the first failure."""
        if self.d_sim < 1 or self.d_cond < 1 or self.max_tokens < 1:
            raise ValidationError("dimensions and max_tokens must be positive")
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise ValidationError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            e = np.asarray(rec.sim_embedding)
            if e.shape != (self.d_sim,):
                raise ValidationError(f"record {rec.id!r}: sim_embedding shape {e.shape} != ({self.d_sim},)")
            if not np.all(np.isfinite(e)):
                raise ValidationError(f"record {rec.id!r}: non-finite sim_embedding")
            c = np.asarray(rec.condition)
            if c.ndim != 2 or c.shape[1] != self.d_cond:
                raise ValidationError(f"record {rec.id!r}: condition shape {c.shape} incompatible with d_cond={self.d_cond}")
            if not 1 <= c.shape[0] <= self.max_tokens:
                raise ValidationError(f"record {rec.id!r}: token count {c.shape[0]} outside [1, {self.max_tokens}]")
            if not np.all(np.isfinite(c)):
                raise ValidationError(f"record {rec.id!r}: non-finite condition")
            if rec.class_embedding is not None:
                k = np.asarray(rec.class_embedding)
                if k.shape != (self.d_cond,):
                    raise ValidationError(f"record {rec.id!r}: class_embedding shape {k.shape} != ({self.d_cond},)")
                if not np.all(np.isfinite(k)):
                    raise ValidationError(f"record {rec.id!r}: non-finite class_embedding")
            if not (np.isfinite(rec.preference) and rec.preference >= 0):
                raise ValidationError(f"record {rec.id!r}: preference must be finite and >= 0")
        u = np.asarray(self.uncond)
        if u.ndim != 2 or u.shape[1] != self.d_cond or u.shape[0] < 1:
            raise ValidationError(f"uncond shape {u.shape} incompatible with d_cond={self.d_cond}")
        if not np.all(np.isfinite(u)):
            raise ValidationError("non-finite uncond")


def _f32(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype="<f4"))


def save_corpus(corpus: EmbeddingCorpus, path) -> None:
    """Write ``corpus`` to directory ``path`` (created if missing).

    Output bytes are a pure function of the corpus value: no timestamps,
    sorted manifest keys, fixed field order.
    """
    corpus.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "d_sim": corpus.d_sim,
        "d_cond": corpus.d_cond,
        "max_tokens": corpus.max_tokens,
        "n_records": len(corpus.records),
        "encoder": corpus.manifest.get("encoder", "unknown"),
        "extras": {k: v for k, v in corpus.manifest.items() if k != "encoder"},
    }
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    for rec in corpus.records:
        rid = rec.id.encode("utf-8")
        blob += struct.pack("<I", len(rid)) + rid
        T = rec.condition.shape[0]
        blob += struct.pack("<I", T)
        blob += _f32(rec.sim_embedding).tobytes()
        blob += _f32(rec.condition).tobytes()
        if rec.class_embedding is not None:
            blob += struct.pack("<B", 1)
            blob += _f32(rec.class_embedding).tobytes()
        else:
            blob += struct.pack("<B", 0)
        blob += struct.pack("<f", rec.preference)
    blob += struct.pack("<I", corpus.uncond.shape[0])
    blob += _f32(corpus.uncond).tobytes()

    (path / "manifest.json").write_bytes(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    )
    (path / "tensors.bin").write_bytes(bytes(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCorpusError(
                f"payload ends at byte {len(self.data)}, needed {self.pos + n}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32)


def load_corpus(path) -> EmbeddingCorpus:
    """Load and eagerly validate a corpus directory written by save_corpus."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusFormatError(f"unreadable manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CorpusFormatError(f"unsupported format_version {manifest.get('format_version')!r}")
    for key in ("d_sim", "d_cond", "max_tokens", "n_records"):
        if not isinstance(manifest.get(key), int) or manifest[key] < 0:
            raise CorpusFormatError(f"manifest field {key!r} missing or invalid")
    d_sim, d_cond = manifest["d_sim"], manifest["d_cond"]

    r = _Reader((path / "tensors.bin").read_bytes())
    if r.take(4) != MAGIC:
        raise CorpusFormatError("bad magic bytes")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CorpusFormatError(f"unsupported payload version {version}")
    records = []
    try:
        for _ in range(manifest["n_records"]):
            rid = r.take(r.u32()).decode("utf-8")
            T = r.u32()
            sim = r.f32s(d_sim)
            cond = r.f32s(T * d_cond).reshape(T, d_cond)
            has_class = r.take(1)[0]
            cls = r.f32s(d_cond) if has_class else None
            pref = struct.unpack("<f", r.take(4))[0]
            records.append(PromptRecord(id=rid, sim_embedding=sim, condition=cond,
                                        preference=pref, class_embedding=cls))
        T_u = r.u32()
        uncond = r.f32s(T_u * d_cond).reshape(T_u, d_cond)
    except (UnicodeDecodeError, MemoryError, OverflowError) as exc:
        # Misaligned parse: a corrupted header field sends the reader
        # into tensor bytes.
        raise CorpusFormatError(f"payload does not parse: {exc}") from exc
    if r.pos != len(r.data):
        raise CorpusFormatError(f"{len(r.data) - r.pos} trailing bytes after payload")

    extras = dict(manifest.get("extras", {}))
    extras["encoder"] = manifest.get("encoder", "unknown")
    return EmbeddingCorpus(
        records=records,
        d_sim=d_sim,
        d_cond=d_cond,
        max_tokens=manifest["max_tokens"],
        uncond=uncond,
        manifest=extras,
    )


@dataclass
class SyntheticSpec:
    """Parameters for the deterministic synthetic-corpus generator."""

    n_users: int = 8
    history_len: int = 8
    d_sim: int = 16
    d_cond: int = 16
    max_tokens: int = 8
    archetypes: int = 2
    seed: int = 0
    noise: float = 0.1


def gen_synthetic(spec: SyntheticSpec) -> EmbeddingCorpus:
    """Generate a deterministic synthetic corpus.

    Each user is assigned one of ``archetypes`` orthonormal latent
    directions; their records are that direction plus Gaussian noise.
    Streams come from the counter-based Philox generator, so the same
    spec always yields the same corpus. When ``d_sim == d_cond`` the
    similarity embedding is the unit-normalized class embedding, tying
    the similarity space to condition content; otherwise a separate set
    of similarity-space archetypes is drawn.
    """
    if min(spec.n_users, spec.history_len, spec.d_sim, spec.d_cond,
           spec.max_tokens, spec.archetypes) < 1:
        raise ValidationError("all synthetic sizes must be >= 1")
    if spec.archetypes > min(spec.d_sim, spec.d_cond):
        raise ValidationError("archetypes cannot exceed embedding dimensionality")
    rng = np.random.Generator(np.random.Philox(spec.seed))

    def ortho_dirs(dim: int) -> np.ndarray:
        q, _ = np.linalg.qr(rng.standard_normal((dim, spec.archetypes)))
        return q.T  # (archetypes, dim), orthonormal rows

    cond_arch = ortho_dirs(spec.d_cond)
    shared_sim = spec.d_sim == spec.d_cond
    sim_arch = cond_arch if shared_sim else ortho_dirs(spec.d_sim)

    # Shared per-position basis: conditions and the unconditional
    # embedding carry the same positional component, so attention can
    # align output tokens with target tokens by position content alone.
    pos_q, _ = np.linalg.qr(rng.standard_normal((spec.d_cond, min(spec.d_cond, spec.max_tokens))))
    pos = np.zeros((spec.max_tokens, spec.d_cond))
    pos[:pos_q.shape[1]] = pos_q.T
    if spec.max_tokens > spec.d_cond:
        for j in range(spec.d_cond, spec.max_tokens):
            pos[j] = pos[j % spec.d_cond]

    records = []
    for u in range(spec.n_users):
        a = u % spec.archetypes
        for j in range(spec.history_len):
            T = int(rng.integers(1, spec.max_tokens + 1))
            semantic = cond_arch[a] + spec.noise * rng.standard_normal(spec.d_cond)
            cond = semantic[None, :] + pos[:T] \
                + spec.noise * rng.standard_normal((T, spec.d_cond))
            if shared_sim:
                sim = semantic / np.linalg.norm(semantic)
            else:
                raw = sim_arch[a] + spec.noise * rng.standard_normal(spec.d_sim)
                sim = raw / np.linalg.norm(raw)
            pref = float(np.float32(rng.integers(1, 6) / 5.0))
            records.append(PromptRecord(
                id=f"u{u:04d}_p{j:04d}",
                sim_embedding=sim.astype(np.float32),
                condition=cond.astype(np.float32),
                class_embedding=semantic.astype(np.float32),
                preference=pref,
            ))
    uncond = (pos + 0.05 * rng.standard_normal((spec.max_tokens, spec.d_cond))).astype(np.float32)
    manifest = {
        "encoder": "synthetic",
        "generator": "philox",
        "n_users": spec.n_users,
        "history_len": spec.history_len,
        "archetypes": spec.archetypes,
        "noise": spec.noise,
        "seed": spec.seed,
    }
    return EmbeddingCorpus(records=records, d_sim=spec.d_sim, d_cond=spec.d_cond,
                           max_tokens=spec.max_tokens, uncond=uncond, manifest=manifest)


def user_ids(corpus: EmbeddingCorpus) -> list[str]:
    """Distinct user prefixes for synthetic-style ids ``u####_p####``, in id order."""
    seen: dict[str, None] = {}
    for rec in corpus.records:
        prefix = rec.id.split("_")[0]
        seen.setdefault(prefix, None)
    return list(seen)


def user_record_indices(corpus: EmbeddingCorpus, user: str) -> list[int]:
    return [i for i, rec in enumerate(corpus.records) if rec.id.split("_")[0] == user]
