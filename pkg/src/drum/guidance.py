"""Attention-weight guidance: decoupled per-condition softmax with intensity weighting.

Scores arrive grouped into segments, one per condition (several
references plus exactly one target). With guidance on, each segment is
softmaxed independently; the target block keeps mass 1 - alpha and the
reference blocks share mass alpha in proportion to their preference
intensities. With guidance off, a single joint softmax runs across the
concatenated token axis and both alpha and the intensities are ignored.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGuidanceError, ValidationError

TARGET = "target"
REFERENCE = "reference"


@dataclass
class Segment:
    """Raw scaled dot-product scores for one condition: (Q, T_seg)."""

    label: str
    scores: np.ndarray
    preference: float = 1.0


@dataclass
class SegmentedScores:
    """Per-segment score blocks for Q query tokens; exactly one target segment."""

    segments: list[Segment] = field(default_factory=list)

    def validate(self) -> None:
        n_target = sum(1 for s in self.segments if s.label == TARGET)
        if n_target != 1:
            raise ValidationError(f"expected exactly one target segment, got {n_target}")
        q_counts = set()
        for s in self.segments:
            if s.label not in (TARGET, REFERENCE):
                raise ValidationError(f"unknown segment label {s.label!r}")
            a = np.asarray(s.scores)
            if a.ndim != 2 or a.shape[1] < 1:
                raise ValidationError(f"segment scores must be (Q, T>=1), got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValidationError("non-finite attention scores")
            if s.label == REFERENCE and s.preference < 0:
                raise ValidationError("reference preference must be nonnegative")
            q_counts.add(a.shape[0])
        if len(q_counts) != 1:
            raise ValidationError(f"segments disagree on query count: {sorted(q_counts)}")

    @property
    def references(self) -> list[Segment]:
        return [s for s in self.segments if s.label == REFERENCE]

    @property
    def target(self) -> Segment:
        return next(s for s in self.segments if s.label == TARGET)


@dataclass(frozen=True)
class GuidanceConfig:
    """Personalization degree alpha in [0, 1] and the guidance on/off toggle."""

    alpha: float = 0.3
    enabled: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and 0.0 <= self.alpha <= 1.0):
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")


def _softmax_rows(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    z = a - a.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def guided_weights(scores: SegmentedScores, cfg: GuidanceConfig) -> np.ndarray:
    """Guided attention weights, concatenated in segment order: (Q, T_total).

    Target tokens get (1 - alpha) * softmax within the target block;
    reference block g gets alpha * softmax_g * p_g / sum_h p_h. Every
    row sums to 1.
    """
    scores.validate()
    alpha = cfg.alpha
    refs = scores.references
    p_total = sum(s.preference for s in refs)
    if alpha > 0.0 and p_total <= 0.0:
        raise DegenerateGuidanceError(
            "alpha > 0 requires at least one reference with positive preference")

    blocks = []
    for seg in scores.segments:
        w = _softmax_rows(seg.scores)
        if seg.label == TARGET:
            blocks.append((1.0 - alpha) * w)
        else:
            share = seg.preference / p_total if alpha > 0.0 else 0.0
            blocks.append(alpha * share * w)
    return np.concatenate(blocks, axis=1)


def fused_weights(scores: SegmentedScores) -> np.ndarray:
    """Single joint softmax across all tokens; alpha and preferences unused."""
    scores.validate()
    joint = np.concatenate([np.asarray(s.scores, dtype=np.float64)
                            for s in scores.segments], axis=1)
    return _softmax_rows(joint)


def guide_class_embeddings(class_vecs: list[tuple[str, float, np.ndarray]],
                           cfg: GuidanceConfig) -> np.ndarray:
    """Blend class embeddings as one-token segments under the guidance rule.

    A single-token softmax is identically 1, so the guided blend is
    (1 - alpha) * target + alpha * intensity-weighted mean of references.
    With guidance disabled the analog of the joint equal-score softmax
    is the plain mean over all vectors.
    """
    targets = [(p, np.asarray(v, dtype=np.float64)) for lab, p, v in class_vecs if lab == TARGET]
    refs = [(p, np.asarray(v, dtype=np.float64)) for lab, p, v in class_vecs if lab == REFERENCE]
    if len(targets) != 1:
        raise ValidationError(f"expected exactly one target class vector, got {len(targets)}")
    tgt = targets[0][1]
    dims = {v.shape for _, v in targets + refs}
    if len(dims) != 1 or tgt.ndim != 1:
        raise ValidationError(f"class embedding shapes inconsistent: {dims}")

    if not cfg.enabled:
        return np.mean([v for _, v in targets + refs], axis=0)

    alpha = cfg.alpha
    if alpha == 0.0 or not refs:
        if alpha > 0.0:
            raise DegenerateGuidanceError("alpha > 0 with no reference class vectors")
        return tgt.copy()
    p_total = sum(p for p, _ in refs)
    if p_total <= 0.0:
        raise DegenerateGuidanceError("alpha > 0 requires positive reference preference")
    blend = (1.0 - alpha) * tgt
    for p, v in refs:
        blend = blend + alpha * (p / p_total) * v
    return blend
