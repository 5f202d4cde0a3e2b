"""Supported text encoders and the embedding extraction points.

Extraction points per family (the condition tokens the engine's adapter
consumes are taken "pre-normalization" where the architecture has a
final normalization before pooling):

* CLIP text towers (vit-l, vit-h, vit-bigg): condition = last encoder
  hidden state *before* the final layer norm (``hidden_states[-1]``);
  class embedding = pooled EOS state after the final layer norm;
  similarity embedding = the text projection of that pooled state.
* T5 encoders (t5-base): condition = encoder output after the stack's
  closing RMSNorm (T5 exposes no pre-norm final state and has no
  separate pooled output); similarity embedding = unit-normalized mean
  of the condition tokens; no class embedding.

When pretrained weights cannot be fetched the loader falls back to an
offline mode: the architecture is built from a static config with a
seeded deterministic initialization, and tokenization falls back to a
byte-level scheme. Offline corpora have valid shapes and reproducible
values but carry no semantics; the manifest records which mode produced
them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class EncoderInfo:
    key: str
    family: str  # "clip" or "t5"
    hub_id: str
    d_cond: int
    d_sim: int
    max_tokens: int
    n_layers: int
    n_heads: int
    d_ff: int
    extraction: str


ENCODERS = {
    "vit-l": EncoderInfo(
        key="vit-l", family="clip", hub_id="openai/clip-vit-large-patch14",
        d_cond=768, d_sim=768, max_tokens=77, n_layers=12, n_heads=12, d_ff=3072,
        extraction="last hidden state before final layer norm"),
    "vit-h": EncoderInfo(
        key="vit-h", family="clip",
        hub_id="laion/CLIP-ViT-H-14-laion2B-s32B-b79K",
        d_cond=1024, d_sim=1024, max_tokens=77, n_layers=24, n_heads=16, d_ff=4096,
        extraction="last hidden state before final layer norm"),
    "vit-bigg": EncoderInfo(
        key="vit-bigg", family="clip",
        hub_id="laion/CLIP-ViT-bigG-14-laion2B-39B-b160k",
        d_cond=1280, d_sim=1280, max_tokens=77, n_layers=32, n_heads=20, d_ff=5120,
        extraction="last hidden state before final layer norm"),
    "t5-base": EncoderInfo(
        key="t5-base", family="t5", hub_id="google-t5/t5-base",
        d_cond=768, d_sim=768, max_tokens=512, n_layers=12, n_heads=12, d_ff=3072,
        extraction="encoder output after closing RMSNorm"),
}

CLIP_VOCAB = 49408
CLIP_BOS = 49406
CLIP_EOS = 49407
T5_VOCAB = 32128
T5_EOS = 1


class ByteTokenizer:
    """Deterministic byte-level fallback when no hub tokenizer is available.

    Each UTF-8 byte maps to one id inside the model's vocabulary; BOS and
    EOS follow the family's conventions. Truncation keeps the EOS.
    """

    def __init__(self, bos: Optional[int], eos: int, offset: int, max_tokens: int):
        self.bos = bos
        self.eos = eos
        self.offset = offset
        self.max_tokens = max_tokens

    def encode(self, text: str) -> tuple[list[int], bool]:
        ids = [] if self.bos is None else [self.bos]
        ids += [self.offset + b for b in text.encode("utf-8")]
        ids.append(self.eos)
        truncated = len(ids) > self.max_tokens
        if truncated:
            ids = ids[:self.max_tokens - 1] + [self.eos]
        return ids, truncated


class HubTokenizer:
    def __init__(self, tokenizer, max_tokens: int):
        self.tokenizer = tokenizer
        self.max_tokens = max_tokens

    def encode(self, text: str) -> tuple[list[int], bool]:
        full = self.tokenizer(text)["input_ids"]
        truncated = len(full) > self.max_tokens
        if not truncated:
            return full, False
        ids = self.tokenizer(text, truncation=True,
                             max_length=self.max_tokens)["input_ids"]
        return ids, True


@dataclass
class LoadedEncoder:
    info: EncoderInfo
    tokenizer: object
    model: object
    pretrained: bool
    offline_seed: Optional[int]

    @property
    def weights_provenance(self) -> str:
        if self.pretrained:
            return self.info.hub_id
        return f"offline-init(seed={self.offline_seed})"


def _clip_config(info: EncoderInfo):
    from transformers import CLIPTextConfig
    return CLIPTextConfig(
        vocab_size=CLIP_VOCAB, hidden_size=info.d_cond,
        intermediate_size=info.d_ff, num_hidden_layers=info.n_layers,
        num_attention_heads=info.n_heads, max_position_embeddings=info.max_tokens,
        projection_dim=info.d_sim, bos_token_id=CLIP_BOS, eos_token_id=CLIP_EOS)


def _t5_config(info: EncoderInfo):
    from transformers import T5Config
    return T5Config(
        vocab_size=T5_VOCAB, d_model=info.d_cond, d_ff=info.d_ff,
        num_layers=info.n_layers, num_heads=info.n_heads,
        d_kv=info.d_cond // info.n_heads)


def load_encoder(key: str, offline_seed: int = 0,
                 max_tokens: Optional[int] = None,
                 info: Optional[EncoderInfo] = None) -> LoadedEncoder:
    """Load a supported encoder, preferring pretrained weights.

    ``info`` overrides the registry entry (used by tests to shrink the
    architecture); ``max_tokens`` caps the token budget below the
    encoder default.
    """
    import torch
    from transformers import AutoTokenizer, CLIPTextModelWithProjection, T5EncoderModel

    if info is None:
        if key not in ENCODERS:
            raise ValueError(f"unsupported encoder {key!r}; "
                             f"choose from {sorted(ENCODERS)}")
        info = ENCODERS[key]
    budget = min(max_tokens or info.max_tokens, info.max_tokens)
    model_cls = CLIPTextModelWithProjection if info.family == "clip" else T5EncoderModel

    try:
        model = model_cls.from_pretrained(info.hub_id)
        hub_tok = AutoTokenizer.from_pretrained(info.hub_id)
        tokenizer: object = HubTokenizer(hub_tok, budget)
        pretrained, seed = True, None
    except Exception:
        torch.manual_seed(offline_seed)
        config = _clip_config(info) if info.family == "clip" else _t5_config(info)
        model = model_cls(config)
        if info.family == "clip":
            tokenizer = ByteTokenizer(CLIP_BOS, CLIP_EOS, 1, budget)
        else:
            tokenizer = ByteTokenizer(None, T5_EOS, 3, budget)
        pretrained, seed = False, offline_seed
    model.eval()
    return LoadedEncoder(info=info, tokenizer=tokenizer, model=model,
                         pretrained=pretrained, offline_seed=seed)


def encode_prompt(enc: LoadedEncoder, text: str):
    """Return (condition, sim_embedding, class_embedding, truncated) as f32 arrays."""
    import torch

    ids, truncated = enc.tokenizer.encode(text)
    input_ids = torch.tensor([ids], dtype=torch.long)
    with torch.no_grad():
        if enc.info.family == "clip":
            out = enc.model.text_model(input_ids=input_ids, output_hidden_states=True)
            cond = out.hidden_states[-1][0]
            pooled = out.pooler_output
            sim = enc.model.text_projection(pooled)[0]
            cls = pooled[0]
        else:
            out = enc.model(input_ids=input_ids)
            cond = out.last_hidden_state[0]
            mean = cond.mean(dim=0)
            sim = mean / torch.linalg.vector_norm(mean)
            cls = None
    cond = cond.numpy().astype(np.float32)
    sim = sim.numpy().astype(np.float32)
    cls = None if cls is None else cls.numpy().astype(np.float32)
    return cond, sim, cls, truncated
