"""Evaluation harness: text-alignment metric, sampling sweeps, ablations, alpha sweeps.

Users are recovered from record id prefixes (``u0003_p0007`` belongs to
user ``u0003``). Within each user the last record is the evaluation
target and the remaining records are the history. The alignment metric
compares the personalized condition's class embedding against prompt
similarity embeddings under preference weighting, reported separately
for the target (singleton) and the history.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .adapter import AdapterParams, PersonalizationRequest, forward
from .coreset import CoresetConfig, coreset_sample_subset, sim_clip
from .corpus import EmbeddingCorpus, PromptRecord, user_ids, user_record_indices
from .errors import ValidationError
from .guidance import GuidanceConfig

METHODS = ("coreset", "random", "uniform")


def text_align(personalized_class: np.ndarray,
               refs: Sequence[tuple[np.ndarray, float]]) -> float:
    """Mean preference-weighted cosine between a class embedding and references."""
    if personalized_class is None:
        raise ValidationError("personalized condition has no class embedding")
    if len(refs) == 0:
        raise ValidationError("text_align requires at least one reference")
    return float(np.mean([sim_clip(personalized_class, e, p) for e, p in refs]))


def improvement_rate(score: float, baseline: float) -> float:
    """Percent improvement over a baseline score."""
    if baseline == 0.0:
        raise ValidationError("improvement rate undefined for zero baseline")
    return (score - baseline) / abs(baseline) * 100.0


@dataclass
class UserEval:
    user: str
    target_align: float
    history_align: float


@dataclass
class EvalReport:
    """Per-user and aggregate alignment scores for one configuration."""

    rows: list[UserEval]
    config: dict = field(default_factory=dict)

    @property
    def mean_target_align(self) -> float:
        return float(np.mean([r.target_align for r in self.rows]))

    @property
    def mean_history_align(self) -> float:
        return float(np.mean([r.history_align for r in self.rows]))

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "mean_target_align": self.mean_target_align,
            "mean_history_align": self.mean_history_align,
            "per_user": [
                {"user": r.user, "target_align": r.target_align,
                 "history_align": r.history_align}
                for r in self.rows
            ],
        }


def _child_seed(seed: int, index: int) -> int:
    # Stable per-user stream separation; plain arithmetic so any
    # implementation of the engine derives the same value.
    return (seed * 1_000_003 + index) % (2 ** 63)


def _select_profile(pool: list[int], corpus: EmbeddingCorpus, method: str,
                    ratio: float, seed: int, k: Optional[int],
                    use_preferences: bool) -> list[int]:
    if not 0.0 < ratio <= 1.0:
        raise ValidationError(f"sampling ratio must lie in (0, 1], got {ratio}")
    n = math.ceil(ratio * len(pool))
    if n == 0:
        raise ValidationError("sampling ratio selects zero records")
    if method == "coreset":
        cfg = CoresetConfig(n=n, k=min(k or len(pool), len(pool)), seed=seed,
                            use_preferences=use_preferences)
        return list(coreset_sample_subset(corpus, cfg, pool).indices)
    if method == "random":
        rng = np.random.Generator(np.random.Philox(seed))
        return [pool[i] for i in rng.permutation(len(pool))[:n]]
    if method == "uniform":
        step = max(1, math.floor(1.0 / ratio))
        return pool[::step][:n] if len(pool[::step]) >= n else pool[::step]
    raise ValidationError(f"unknown sampling method {method!r}")


def evaluate_corpus(corpus: EmbeddingCorpus, params: AdapterParams, *,
                    alpha: float = 0.3, method: str = "coreset",
                    ratio: float = 0.1, seed: int = 0,
                    guidance_enabled: bool = True, use_sampling: bool = True,
                    use_preferences: bool = True, k: Optional[int] = None,
                    history_window: Optional[int] = None) -> EvalReport:
    """Personalize every user's target and score it against target and history.

    ``use_sampling=False`` feeds the full history as references (the
    no-sampling ablation); ``guidance_enabled=False`` runs the joint
    softmax path. ``history_window`` limits the metric's reference set
    to the most recent entries; the profile always samples from the
    full history.
    """
    gcfg = GuidanceConfig(alpha=alpha, enabled=guidance_enabled)
    rows = []
    for u_idx, user in enumerate(sorted(user_ids(corpus))):
        indices = user_record_indices(corpus, user)
        if len(indices) < 2:
            raise ValidationError(f"user {user!r} needs at least 2 records")
        history, target_i = indices[:-1], indices[-1]
        target = corpus.records[target_i]
        if use_sampling:
            profile = _select_profile(history, corpus, method, ratio,
                                      _child_seed(seed, u_idx), k, use_preferences)
        else:
            profile = list(history)
        refs = [corpus.records[i] for i in profile]
        result = forward(params, PersonalizationRequest(
            target=target, references=refs, guidance=gcfg, uncond=corpus.uncond))

        metric_pool = history if history_window is None else history[-history_window:]
        hist_refs = [(corpus.records[i].sim_embedding, corpus.records[i].preference)
                     for i in metric_pool]
        rows.append(UserEval(
            user=user,
            target_align=text_align(result.class_embedding,
                                    [(target.sim_embedding, target.preference)]),
            history_align=text_align(result.class_embedding, hist_refs),
        ))
    config = {"alpha": alpha, "method": method, "ratio": ratio, "seed": seed,
              "guidance_enabled": guidance_enabled, "use_sampling": use_sampling,
              "use_preferences": use_preferences, "history_window": history_window}
    return EvalReport(rows=rows, config=config)


def run_sampling_sweep(corpus: EmbeddingCorpus, params: AdapterParams,
                       methods: Sequence[str] = METHODS,
                       ratios: Sequence[float] = (0.1, 0.25, 0.5, 1.0),
                       alpha: float = 0.3, seed: int = 0) -> list[EvalReport]:
    """One report per (method, ratio) pair, deterministic for a given seed."""
    reports = []
    for method in methods:
        if method not in METHODS:
            raise ValidationError(f"unknown sampling method {method!r}")
        for ratio in ratios:
            reports.append(evaluate_corpus(corpus, params, alpha=alpha,
                                           method=method, ratio=ratio, seed=seed))
    return reports


ABLATION_ROWS = ("full", "wo_S", "wo_G", "wo_SG")


def run_ablation(corpus: EmbeddingCorpus, params: AdapterParams,
                 alpha: float = 0.3, seed: int = 0,
                 ratio: float = 0.1) -> dict[str, EvalReport]:
    """Four-row ablation: full engine, no sampling, no guidance, neither."""
    out = {}
    for row in ABLATION_ROWS:
        rep = evaluate_corpus(
            corpus, params, alpha=alpha, ratio=ratio, seed=seed,
            use_sampling=row in ("full", "wo_G"),
            guidance_enabled=row in ("full", "wo_S"),
        )
        rep.config["ablation"] = row
        out[row] = rep
    return out


@dataclass
class AlphaSweepRow:
    alpha: float
    condition: np.ndarray
    class_embedding: Optional[np.ndarray]
    target_align: float
    reference_align: float


def run_alpha_sweep(target: PromptRecord, references: list[PromptRecord],
                    params: AdapterParams, alphas: Sequence[float],
                    uncond: np.ndarray) -> list[AlphaSweepRow]:
    """Personalize one target across a grid of personalization degrees."""
    rows = []
    for alpha in alphas:
        gcfg = GuidanceConfig(alpha=float(alpha), enabled=True)
        result = forward(params, PersonalizationRequest(
            target=target, references=references, guidance=gcfg, uncond=uncond))
        rows.append(AlphaSweepRow(
            alpha=float(alpha),
            condition=result.condition,
            class_embedding=result.class_embedding,
            target_align=text_align(result.class_embedding,
                                    [(target.sim_embedding, target.preference)]),
            reference_align=text_align(result.class_embedding,
                                       [(r.sim_embedding, r.preference)
                                        for r in references]),
        ))
    return rows


def reports_to_json(reports: Sequence[EvalReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2)


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    """One row per report: flattened config plus aggregate metrics."""
    keys: list[str] = []
    for rep in reports:
        for k in rep.config:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(keys + ["mean_target_align", "mean_history_align"])
    for rep in reports:
        writer.writerow([rep.config.get(k, "") for k in keys]
                        + [repr(rep.mean_target_align), repr(rep.mean_history_align)])
    return buf.getvalue()
