"""Cross-attention condition adapter.

A stack of multi-head cross-attention layers that queries from the
unconditional embedding while reference and target conditions supply
keys and values. Token weighting inside each head routes through the
guidance module: decoupled per-segment softmax when guidance is on, a
single joint softmax when it is off. Wide encoders (d_cond > d_model)
get one linear projection before and one after the stack.

Gradients are computed by hand-written reverse-mode passes mirroring
the forward computation; no autodiff framework is involved. The cache
returned by ``forward_tokens`` holds every intermediate the backward
pass needs.

Architecture notes (engine decisions, not externally mandated): queries
are layer-normalized (no affine) before each attention layer, each
layer adds a residual from the query stream, there are no feed-forward
sublayers and no positional encodings.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import PromptRecord
from .errors import CorpusFormatError, DegenerateGuidanceError, ValidationError
from .guidance import (REFERENCE, TARGET, GuidanceConfig, Segment,
                       SegmentedScores, fused_weights, guide_class_embeddings,
                       guided_weights)

LN_EPS = 1e-5
CHECKPOINT_VERSION = 1


@dataclass
class LayerParams:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray


@dataclass
class AdapterParams:
    """All learnable tensors plus the architecture they belong to."""

    d_cond: int
    d_model: int
    n_heads: int
    n_layers: int
    layers: list[LayerParams]
    pre_w: Optional[np.ndarray] = None
    pre_b: Optional[np.ndarray] = None
    post_w: Optional[np.ndarray] = None
    post_b: Optional[np.ndarray] = None
    seed: int = 0
    steps: int = 0

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def has_projections(self) -> bool:
        return self.pre_w is not None

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValidationError("d_model must be divisible by n_heads")
        if len(self.layers) != self.n_layers:
            raise ValidationError("layer count mismatch")
        dm = self.d_model
        for i, lp in enumerate(self.layers):
            for name in ("wq", "wk", "wv", "wo"):
                if getattr(lp, name).shape != (dm, dm):
                    raise ValidationError(f"layer {i}: {name} shape mismatch")
            for name in ("bq", "bk", "bv", "bo"):
                if getattr(lp, name).shape != (dm,):
                    raise ValidationError(f"layer {i}: {name} shape mismatch")
        if (self.pre_w is None) != (self.post_w is None):
            raise ValidationError("pre/post projections must be present together")
        if self.pre_w is not None:
            if self.pre_w.shape != (self.d_cond, dm) or self.post_w.shape != (dm, self.d_cond):
                raise ValidationError("projection shape mismatch")
        for name, arr in self.named_tensors():
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite values in {name}")

    def named_tensors(self):
        """Fixed (name, array) order; also the checkpoint serialization order."""
        out = []
        if self.pre_w is not None:
            out += [("pre_w", self.pre_w), ("pre_b", self.pre_b)]
        for i, lp in enumerate(self.layers):
            for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
                out.append((f"layer{i}.{name}", getattr(lp, name)))
        if self.post_w is not None:
            out += [("post_w", self.post_w), ("post_b", self.post_b)]
        return out

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        if "." in name:
            layer, attr = name.split(".")
            setattr(self.layers[int(layer[5:])], attr, value)
        else:
            setattr(self, name, value)

    def copy(self) -> "AdapterParams":
        layers = [LayerParams(**{k: getattr(lp, k).copy()
                                 for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")})
                  for lp in self.layers]
        return AdapterParams(
            d_cond=self.d_cond, d_model=self.d_model, n_heads=self.n_heads,
            n_layers=self.n_layers, layers=layers,
            pre_w=None if self.pre_w is None else self.pre_w.copy(),
            pre_b=None if self.pre_b is None else self.pre_b.copy(),
            post_w=None if self.post_w is None else self.post_w.copy(),
            post_b=None if self.post_b is None else self.post_b.copy(),
            seed=self.seed, steps=self.steps)


def init_adapter(d_cond: int, d_model: Optional[int] = None, n_heads: int = 4,
                 n_layers: int = 10, seed: int = 0) -> AdapterParams:
    """Seeded scaled-uniform (Glorot) initialization; biases start at zero.

    Pre/post linear projections are created only when d_model differs
    from d_cond.
    """
    if d_model is None:
        d_model = d_cond
    if d_model % n_heads != 0:
        raise ValidationError("d_model must be divisible by n_heads")
    rng = np.random.Generator(np.random.Philox(seed))

    def glorot(fan_in, fan_out):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_in, fan_out))

    layers = [LayerParams(
        wq=glorot(d_model, d_model), bq=np.zeros(d_model),
        wk=glorot(d_model, d_model), bk=np.zeros(d_model),
        wv=glorot(d_model, d_model), bv=np.zeros(d_model),
        wo=glorot(d_model, d_model), bo=np.zeros(d_model),
    ) for _ in range(n_layers)]
    pre_w = pre_b = post_w = post_b = None
    if d_model != d_cond:
        pre_w, pre_b = glorot(d_cond, d_model), np.zeros(d_model)
        post_w, post_b = glorot(d_model, d_cond), np.zeros(d_cond)
    params = AdapterParams(d_cond=d_cond, d_model=d_model, n_heads=n_heads,
                           n_layers=n_layers, layers=layers,
                           pre_w=pre_w, pre_b=pre_b, post_w=post_w, post_b=post_b,
                           seed=seed)
    params.validate()
    return params


def zeros_like_params(params: AdapterParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.named_tensors()}


# ---------------------------------------------------------------------------
# Forward / backward over token matrices
# ---------------------------------------------------------------------------

@dataclass
class TokenSegment:
    """One key/value condition: label, preference intensity, raw tokens (T, d_cond)."""

    label: str
    preference: float
    tokens: np.ndarray


def _layer_norm(h: np.ndarray):
    mu = h.mean(axis=1, keepdims=True)
    var = ((h - mu) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (h - mu) * inv_std
    return xhat, inv_std


def _layer_norm_backward(d_xhat: np.ndarray, xhat: np.ndarray,
                         inv_std: np.ndarray) -> np.ndarray:
    m1 = d_xhat.mean(axis=1, keepdims=True)
    m2 = (d_xhat * xhat).mean(axis=1, keepdims=True)
    return inv_std * (d_xhat - m1 - xhat * m2)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    T, dm = x.shape
    return x.reshape(T, n_heads, dm // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    H, T, dh = x.shape
    return x.transpose(1, 0, 2).reshape(T, H * dh)


def _head_weights(score_mat: np.ndarray, seg_sizes: list[int],
                  seg_labels: list[str], seg_prefs: list[float],
                  gcfg: GuidanceConfig) -> np.ndarray:
    """Route one head's (Q, T_kv) score matrix through the guidance ops."""
    if not gcfg.enabled:
        segs, off = [], 0
        for size, label, pref in zip(seg_sizes, seg_labels, seg_prefs):
            segs.append(Segment(label=label, preference=pref,
                                scores=score_mat[:, off:off + size]))
            off += size
        return fused_weights(SegmentedScores(segments=segs))
    segs, off = [], 0
    for size, label, pref in zip(seg_sizes, seg_labels, seg_prefs):
        segs.append(Segment(label=label, preference=pref,
                            scores=score_mat[:, off:off + size]))
        off += size
    return guided_weights(SegmentedScores(segments=segs), gcfg)


def _segment_scales(seg_labels: list[str], seg_prefs: list[float],
                    gcfg: GuidanceConfig) -> Optional[list[float]]:
    """Constant mass scale per segment, or None for the fused (joint) path."""
    if not gcfg.enabled:
        return None
    alpha = gcfg.alpha
    p_total = sum(p for lab, p in zip(seg_labels, seg_prefs) if lab == REFERENCE)
    if alpha > 0.0 and p_total <= 0.0:
        raise DegenerateGuidanceError(
            "alpha > 0 requires at least one reference with positive preference")
    scales = []
    for lab, p in zip(seg_labels, seg_prefs):
        if lab == TARGET:
            scales.append(1.0 - alpha)
        else:
            scales.append(alpha * p / p_total if alpha > 0.0 else 0.0)
    return scales


def _weights_backward(d_w: np.ndarray, w: np.ndarray, seg_sizes: list[int],
                      scales: Optional[list[float]]) -> np.ndarray:
    """Gradient through the (possibly segment-scaled) softmax weighting.

    For a block w = c * softmax(s), ds = c * p * (g - sum(p * g)) with
    p = w / c; blocks with c = 0 carry no gradient. The fused path is
    the same formula over the whole row with c = 1.
    """
    if scales is None:
        dot = (d_w * w).sum(axis=1, keepdims=True)
        return w * (d_w - dot)
    d_s = np.zeros_like(w)
    off = 0
    for size, c in zip(seg_sizes, scales):
        blk = slice(off, off + size)
        if c != 0.0:
            p = w[:, blk] / c
            g = d_w[:, blk]
            dot = (p * g).sum(axis=1, keepdims=True)
            d_s[:, blk] = c * p * (g - dot)
        off += size
    return d_s


def forward_tokens(params: AdapterParams, queries: np.ndarray,
                   segments: list[TokenSegment], gcfg: GuidanceConfig,
                   cache: Optional[dict] = None) -> np.ndarray:
    """Run the full stack: (T_q, d_cond) queries -> (T_q, d_cond) output.

    ``segments`` supplies keys and values, references first and the
    target last. When ``cache`` is a dict it is filled with the
    intermediates ``backward_tokens`` consumes.
    """
    params.validate()
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != params.d_cond:
        raise ValidationError(f"queries shape {queries.shape} incompatible with d_cond={params.d_cond}")
    if not segments:
        raise ValidationError("at least one key/value segment required")
    for seg in segments:
        t = np.asarray(seg.tokens)
        if t.ndim != 2 or t.shape[1] != params.d_cond:
            raise ValidationError(f"segment tokens shape {t.shape} incompatible with d_cond={params.d_cond}")

    kv_raw = np.concatenate([np.asarray(s.tokens, dtype=np.float64) for s in segments], axis=0)
    seg_sizes = [s.tokens.shape[0] for s in segments]
    seg_labels = [s.label for s in segments]
    seg_prefs = [s.preference for s in segments]
    scales = _segment_scales(seg_labels, seg_prefs, gcfg)

    if params.has_projections:
        qp = queries @ params.pre_w + params.pre_b
        kvp = kv_raw @ params.pre_w + params.pre_b
    else:
        qp, kvp = queries, kv_raw

    H, dh = params.n_heads, params.head_dim
    inv_scale = 1.0 / np.sqrt(dh)
    h = qp
    layer_caches = []
    for lp in params.layers:
        xhat, inv_std = _layer_norm(h)
        q = _split_heads(xhat @ lp.wq + lp.bq, H)
        # The key bias shifts every score in a query row by the same
        # amount, which the row softmax cancels exactly; leaving it out
        # of the score path computes the identical function without the
        # spurious rounding noise of a mathematically inert term.
        k = _split_heads(kvp @ lp.wk, H)
        v = _split_heads(kvp @ lp.wv + lp.bv, H)
        weights = np.empty((H, queries.shape[0], kv_raw.shape[0]))
        for hd in range(H):
            scores = (q[hd] @ k[hd].T) * inv_scale
            weights[hd] = _head_weights(scores, seg_sizes, seg_labels, seg_prefs, gcfg)
        ctx = _merge_heads(weights @ v)
        out = ctx @ lp.wo + lp.bo
        if cache is not None:
            layer_caches.append(dict(h=h, xhat=xhat, inv_std=inv_std,
                                     q=q, k=k, v=v, weights=weights, ctx=ctx))
        h = h + out

    output = h @ params.post_w + params.post_b if params.has_projections else h
    if cache is not None:
        cache.update(queries=queries, kv_raw=kv_raw, qp=qp, kvp=kvp,
                     h_final=h, layers=layer_caches,
                     seg_sizes=seg_sizes, scales=scales)
    return output


def backward_tokens(params: AdapterParams, cache: dict,
                    d_output: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse pass for forward_tokens; returns gradients keyed by tensor name."""
    grads = zeros_like_params(params)
    seg_sizes, scales = cache["seg_sizes"], cache["scales"]
    H, dh = params.n_heads, params.head_dim
    inv_scale = 1.0 / np.sqrt(dh)

    if params.has_projections:
        grads["post_w"] += cache["h_final"].T @ d_output
        grads["post_b"] += d_output.sum(axis=0)
        d_h = d_output @ params.post_w.T
    else:
        d_h = d_output.copy()

    d_kvp = np.zeros_like(cache["kvp"])
    for i in reversed(range(params.n_layers)):
        lp, lc = params.layers[i], cache["layers"][i]
        # h_next = h + ctx @ wo + bo
        grads[f"layer{i}.wo"] += lc["ctx"].T @ d_h
        grads[f"layer{i}.bo"] += d_h.sum(axis=0)
        d_ctx = _split_heads(d_h @ lp.wo.T, H)

        d_q = np.empty_like(lc["q"])
        d_k = np.empty_like(lc["k"])
        d_v = np.empty_like(lc["v"])
        for hd in range(H):
            w = lc["weights"][hd]
            d_w = d_ctx[hd] @ lc["v"][hd].T
            d_v[hd] = w.T @ d_ctx[hd]
            d_s = _weights_backward(d_w, w, seg_sizes, scales)
            d_q[hd] = (d_s @ lc["k"][hd]) * inv_scale
            d_k[hd] = (d_s.T @ lc["q"][hd]) * inv_scale

        d_qm = _merge_heads(d_q)
        d_km = _merge_heads(d_k)
        d_vm = _merge_heads(d_v)
        grads[f"layer{i}.wq"] += lc["xhat"].T @ d_qm
        grads[f"layer{i}.bq"] += d_qm.sum(axis=0)
        grads[f"layer{i}.wk"] += cache["kvp"].T @ d_km
        # bk is inert under the row softmax; its gradient is exactly zero.
        grads[f"layer{i}.wv"] += cache["kvp"].T @ d_vm
        grads[f"layer{i}.bv"] += d_vm.sum(axis=0)
        d_kvp += d_km @ lp.wk.T + d_vm @ lp.wv.T
        d_xhat = d_qm @ lp.wq.T
        d_h = d_h + _layer_norm_backward(d_xhat, lc["xhat"], lc["inv_std"])

    if params.has_projections:
        grads["pre_w"] += cache["queries"].T @ d_h + cache["kv_raw"].T @ d_kvp
        grads["pre_b"] += d_h.sum(axis=0) + d_kvp.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# Personalization interface
# ---------------------------------------------------------------------------

@dataclass
class PersonalizationRequest:
    """Target prompt, optional reference prompts, guidance settings, query source."""

    target: PromptRecord
    references: list[PromptRecord]
    guidance: GuidanceConfig
    uncond: np.ndarray


@dataclass
class PersonalizationResult:
    condition: np.ndarray
    class_embedding: Optional[np.ndarray] = None


def forward(params: AdapterParams, req: PersonalizationRequest) -> PersonalizationResult:
    """Produce the personalized condition for one request.

    Keys/values are [references..., target]; queries come from the
    unconditional embedding. The class embedding, when the target has
    one, is blended with the guidance rule for one-token segments.
    """
    segments = [TokenSegment(REFERENCE, r.preference, np.asarray(r.condition, dtype=np.float64))
                for r in req.references]
    segments.append(TokenSegment(TARGET, req.target.preference,
                                 np.asarray(req.target.condition, dtype=np.float64)))
    condition = forward_tokens(params, req.uncond, segments, req.guidance)

    class_vec = None
    if req.target.class_embedding is not None:
        vecs = []
        for r in req.references:
            if r.class_embedding is None:
                raise ValidationError(f"reference {r.id!r} lacks a class embedding")
            vecs.append((REFERENCE, r.preference, r.class_embedding))
        vecs.append((TARGET, req.target.preference, req.target.class_embedding))
        class_vec = guide_class_embeddings(vecs, req.guidance)
    return PersonalizationResult(condition=condition, class_embedding=class_vec)


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------

def save_params(params: AdapterParams, path) -> None:
    """Write manifest.json + weights.bin (f32 little-endian, fixed tensor order)."""
    params.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "drum-adapter",
        "version": CHECKPOINT_VERSION,
        "d_cond": params.d_cond,
        "d_model": params.d_model,
        "n_heads": params.n_heads,
        "n_layers": params.n_layers,
        "seed": params.seed,
        "steps": params.steps,
    }
    (path / "manifest.json").write_bytes(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8"))
    blob = bytearray()
    for _, arr in params.named_tensors():
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    (path / "weights.bin").write_bytes(bytes(blob))


def load_params(path) -> AdapterParams:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusFormatError(f"unreadable checkpoint manifest: {exc}") from exc
    if manifest.get("format") != "drum-adapter" or manifest.get("version") != CHECKPOINT_VERSION:
        raise CorpusFormatError("not a recognized adapter checkpoint")
    d_cond, d_model = manifest["d_cond"], manifest["d_model"]
    params = init_adapter(d_cond=d_cond, d_model=d_model,
                          n_heads=manifest["n_heads"], n_layers=manifest["n_layers"],
                          seed=manifest.get("seed", 0))
    params.steps = manifest.get("steps", 0)
    data = (path / "weights.bin").read_bytes()
    pos = 0
    for name, arr in params.named_tensors():
        nbytes = 4 * arr.size
        if pos + nbytes > len(data):
            raise CorpusFormatError("checkpoint weights truncated")
        flat = np.frombuffer(data[pos:pos + nbytes], dtype="<f4").astype(np.float64)
        params.set_tensor(name, flat.reshape(arr.shape))
        pos += nbytes
    if pos != len(data):
        raise CorpusFormatError("trailing bytes in checkpoint weights")
    params.validate()
    return params
