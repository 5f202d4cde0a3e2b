"""Reconstruction training for the adapter.

The adapter learns to reproduce each condition from the unconditional
query stream: keys/values are a single target condition, guidance is off
and no references are attached, and the objective is one minus the mean
per-token cosine similarity between the output and the condition.
Optimization is AdamW with a cosine-annealed learning rate.

``grad_check`` verifies the hand-written backward passes against central
finite differences; it is the independent oracle for the whole
attention/guidance/cosine gradient pipeline.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adapter import (AdapterParams, TokenSegment, backward_tokens,
                      forward_tokens, zeros_like_params)
from .corpus import EmbeddingCorpus
from .errors import DegenerateInputError, DrumError, ValidationError
from .guidance import TARGET, GuidanceConfig


@dataclass(frozen=True)
class TrainConfig:
    """Training recipe; defaults follow the production setup, tests shrink them."""

    batch_size: int = 256
    lr_init: float = 5e-4
    total_steps: int = 23000
    lr_floor: Optional[float] = None  # None -> lr_init / 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    grad_check: bool = False

    def validate(self) -> None:
        if min(self.batch_size, self.total_steps) < 1 or self.lr_init < 0:
            raise ValidationError("batch_size and total_steps must be positive, lr_init nonnegative")
        if not 0.0 <= self.weight_decay < 1.0:
            raise ValidationError("weight_decay must lie in [0, 1)")
        if self.lr_floor is not None and self.lr_floor < 0:
            raise ValidationError("lr_floor must be nonnegative")

    @property
    def floor(self) -> float:
        return self.lr_init / 100.0 if self.lr_floor is None else self.lr_floor


def toy_config(**overrides) -> TrainConfig:
    """Desk-scale settings used throughout the test suite."""
    base = dict(batch_size=16, total_steps=2000, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class TrainReport:
    loss_trace: list[float] = field(default_factory=list)
    final_train_cosine: float = 0.0
    final_holdout_cosine: Optional[float] = None
    wall_clock_s: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "loss_trace": self.loss_trace,
            "final_train_cosine": self.final_train_cosine,
            "final_holdout_cosine": self.final_holdout_cosine,
            "wall_clock_s": self.wall_clock_s,
            "seed": self.seed,
        }


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Cosine annealing from lr_init at step 0 to the floor at total_steps."""
    t = min(max(step, 0), cfg.total_steps) / cfg.total_steps
    return cfg.floor + 0.5 * (cfg.lr_init - cfg.floor) * (1.0 + math.cos(math.pi * t))


def recon_loss(output: np.ndarray, target: np.ndarray):
    """1 - mean per-token cosine, plus its gradient w.r.t. output.

    Ranges over [0, 2]; zero-norm token rows are rejected.
    """
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if output.shape != target.shape:
        raise ValidationError(f"shape mismatch: {output.shape} vs {target.shape}")
    no = np.linalg.norm(output, axis=1)
    nt = np.linalg.norm(target, axis=1)
    if np.any(no == 0.0) or np.any(nt == 0.0):
        raise DegenerateInputError("zero-norm token row in cosine objective")
    dots = (output * target).sum(axis=1)
    cos = dots / (no * nt)
    T = output.shape[0]
    loss = 1.0 - cos.mean()
    # d loss / d output_t = -(1/T) * (y_t/(|o||y|) - cos_t * o_t/|o|^2)
    d_out = -(target / (no * nt)[:, None] - (cos / no ** 2)[:, None] * output) / T
    return loss, d_out


def mean_token_cosine(output: np.ndarray, target: np.ndarray) -> float:
    loss, _ = recon_loss(output, target)
    return 1.0 - loss


def queries_for(uncond: np.ndarray, n_tokens: int) -> np.ndarray:
    """Unconditional matrix truncated or row-tiled to ``n_tokens`` rows."""
    reps = -(-n_tokens // uncond.shape[0])
    return np.concatenate([uncond] * reps, axis=0)[:n_tokens]


_RECON_GUIDANCE = GuidanceConfig(alpha=0.0, enabled=False)


def _recon_forward(params, uncond, condition, cache=None):
    queries = queries_for(uncond, condition.shape[0])
    seg = TokenSegment(TARGET, 1.0, np.asarray(condition, dtype=np.float64))
    return forward_tokens(params, queries, [seg], _RECON_GUIDANCE, cache=cache)


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay."""

    def __init__(self, params: AdapterParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)
        self.t = 0

    def step(self, params: AdapterParams, grads: dict[str, np.ndarray], lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        b1c = 1.0 - cfg.beta1 ** self.t
        b2c = 1.0 - cfg.beta2 ** self.t
        for name, arr in params.named_tensors():
            g = grads[name]
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[name] / b1c
            v_hat = self.v[name] / b2c
            arr -= lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * arr)


def train(corpus: EmbeddingCorpus, params_init: AdapterParams, cfg: TrainConfig,
          holdout: Optional[EmbeddingCorpus] = None) -> tuple[AdapterParams, TrainReport]:
    """Run the reconstruction loop; deterministic for a fixed seed.

    Batches are drawn by a seeded per-epoch shuffle with the last
    partial batch dropped (unless the corpus is smaller than one batch,
    in which case the whole corpus is one batch).
    """
    cfg.validate()
    if len(corpus) == 0:
        raise ValidationError("cannot train on an empty corpus")
    params = params_init.copy()
    params.validate()
    optimizer = AdamW(params, cfg)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    batch_size = min(cfg.batch_size, len(corpus))

    uncond = np.asarray(corpus.uncond, dtype=np.float64)
    conditions = [np.asarray(r.condition, dtype=np.float64) for r in corpus.records]

    started = time.monotonic()
    report = TrainReport(seed=cfg.seed)
    order: list[int] = []
    pos = 0
    for step in range(cfg.total_steps):
        if pos + batch_size > len(order):
            order = list(rng.permutation(len(corpus)))
            pos = 0
        batch = order[pos:pos + batch_size]
        pos += batch_size

        lr = cosine_lr(step, cfg)
        grads = zeros_like_params(params)
        batch_loss = 0.0
        for idx in batch:
            cache: dict = {}
            out = _recon_forward(params, uncond, conditions[idx], cache=cache)
            loss, d_out = recon_loss(out, conditions[idx])
            batch_loss += loss
            for name, g in backward_tokens(params, cache, d_out).items():
                grads[name] += g
        batch_loss /= len(batch)
        for name in grads:
            grads[name] /= len(batch)
        if not math.isfinite(batch_loss):
            ids = [corpus.records[i].id for i in batch]
            raise DrumError(f"non-finite loss at step {step} (batch ids: {ids})")
        report.loss_trace.append(float(batch_loss))
        optimizer.step(params, grads, lr)

    params.steps = params_init.steps + cfg.total_steps
    report.final_train_cosine = evaluate_reconstruction(params, corpus)
    if holdout is not None:
        report.final_holdout_cosine = evaluate_reconstruction(params, holdout)
    report.wall_clock_s = time.monotonic() - started
    return params, report


def evaluate_reconstruction(params: AdapterParams, corpus: EmbeddingCorpus) -> float:
    """Mean over records of mean per-token cosine(adapter output, condition)."""
    uncond = np.asarray(corpus.uncond, dtype=np.float64)
    scores = []
    for rec in corpus.records:
        out = _recon_forward(params, uncond, rec.condition)
        scores.append(mean_token_cosine(out, np.asarray(rec.condition, dtype=np.float64)))
    return float(np.mean(scores))


@dataclass
class GradCheckExample:
    """One forward problem for gradient verification."""

    queries: np.ndarray
    segments: list[TokenSegment]
    guidance: GuidanceConfig
    target: np.ndarray


def grad_check(params: AdapterParams, batch: list[GradCheckExample],
               epsilon: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is |a - f| / max(|a|, |f|, 1e-8), taken over every
    entry of every parameter tensor. Double precision throughout; meant
    for toy dimensions.
    """

    def batch_loss(p: AdapterParams) -> float:
        total = 0.0
        for ex in batch:
            out = forward_tokens(p, ex.queries, ex.segments, ex.guidance)
            loss, _ = recon_loss(out, ex.target)
            total += loss
        return total / len(batch)

    analytic = zeros_like_params(params)
    for ex in batch:
        cache: dict = {}
        out = forward_tokens(params, ex.queries, ex.segments, ex.guidance, cache=cache)
        _, d_out = recon_loss(out, ex.target)
        for name, g in backward_tokens(params, cache, d_out).items():
            analytic[name] += g / len(batch)

    work = params.copy()
    tensors = dict(work.named_tensors())
    max_err = 0.0
    for name, arr in tensors.items():
        flat = arr.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            up = batch_loss(work)
            flat[j] = orig - epsilon
            down = batch_loss(work)
            flat[j] = orig
            fd = (up - down) / (2.0 * epsilon)
            err = abs(a_flat[j] - fd) / max(abs(a_flat[j]), abs(fd), 1e-8)
            max_err = max(max_err, err)
    return max_err
