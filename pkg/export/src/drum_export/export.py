"""Export a prompt list to an embedding corpus directory."""
from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ._version import __version__
from .corpus_io import ExportRecord, write_corpus
from .encoders import ENCODERS, EncoderInfo, LoadedEncoder, encode_prompt, load_encoder


@dataclass
class ExportSpec:
    encoder: str
    prompts: Path
    out: Path
    max_tokens: Optional[int] = None
    device: str = "cpu"
    offline_seed: int = 0
    encoder_info: Optional[EncoderInfo] = None  # test hook for tiny architectures


def parse_prompts(path) -> list[tuple[str, float]]:
    """One prompt per line; an optional tab-separated trailing preference."""
    lines = Path(path).read_text("utf-8").splitlines()
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        text, _, pref_str = line.rpartition("\t")
        if text and pref_str:
            try:
                pref = float(pref_str)
            except ValueError:
                raise ValueError(f"line {lineno}: preference {pref_str!r} "
                                 "does not parse as a number")
            if not (np.isfinite(pref) and pref >= 0):
                raise ValueError(f"line {lineno}: preference must be a "
                                 "nonnegative real")
            out.append((text, pref))
        else:
            out.append((line, 1.0))
    if not out:
        raise ValueError("prompt file contains no prompts")
    return out


def export(spec: ExportSpec) -> Path:
    """Encode every prompt plus the empty (unconditional) prompt and write the corpus."""
    if spec.encoder_info is None and spec.encoder not in ENCODERS:
        raise ValueError(f"unsupported encoder {spec.encoder!r}; "
                         f"choose from {sorted(ENCODERS)}")
    prompts = parse_prompts(spec.prompts)
    enc: LoadedEncoder = load_encoder(spec.encoder, offline_seed=spec.offline_seed,
                                      max_tokens=spec.max_tokens,
                                      info=spec.encoder_info)
    records = []
    any_truncated = False
    for i, (text, pref) in enumerate(prompts):
        cond, sim, cls, truncated = encode_prompt(enc, text)
        if truncated:
            any_truncated = True
            print(f"warning: prompt {i} truncated to "
                  f"{enc.tokenizer.max_tokens} tokens", file=sys.stderr)
        records.append(ExportRecord(id=f"p{i:04d}", sim_embedding=sim,
                                    condition=cond, preference=pref,
                                    class_embedding=cls))
    uncond, _, _, _ = encode_prompt(enc, "")

    info = enc.info
    max_tokens = enc.tokenizer.max_tokens
    extras = {
        "tool": "drum-export",
        "tool_version": __version__,
        "weights": enc.weights_provenance,
        "extraction": info.extraction,
        "truncated": any_truncated,
    }
    write_corpus(spec.out, records, d_sim=info.d_sim, d_cond=info.d_cond,
                 max_tokens=max_tokens, uncond=uncond, encoder=info.key,
                 extras=extras)
    return Path(spec.out)
