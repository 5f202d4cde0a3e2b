"""``drum`` command-line entry point.

Subcommands: gen-synthetic, inspect, sample, train, personalize,
evaluate, sweep. Machine-readable output goes to stdout or files;
progress lines go to stderr. Every file-producing run drops a
``run_manifest.json`` next to its outputs. Exit codes: 0 ok, 1 domain
error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .adapter import (PersonalizationRequest, forward, init_adapter,
                      load_params, save_params)
from .coreset import CoresetConfig, coreset_sample
from .corpus import (EmbeddingCorpus, PromptRecord, SyntheticSpec, gen_synthetic,
                     load_corpus, save_corpus, user_ids, user_record_indices)
from .errors import DrumError
from .evaluation import (METHODS, evaluate_corpus, reports_to_csv,
                         reports_to_json, run_ablation, run_alpha_sweep,
                         run_sampling_sweep)
from .guidance import GuidanceConfig
from .plotting import line_chart
from .trainer import TrainConfig, train


def _default_seed() -> int:
    return int(os.environ.get("DRUM_SEED", "0"))


def _write_run_manifest(out_dir: Path, subcommand: str, config: dict,
                        started: float) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "engine_version": __version__,
        "wall_clock_s": time.monotonic() - started,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", "utf-8")


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(n_users=args.n_users, history_len=args.history_len,
                         d_sim=args.d_sim, d_cond=args.d_cond,
                         max_tokens=args.max_tokens, archetypes=args.archetypes,
                         noise=args.noise, seed=args.seed)
    started = time.monotonic()
    corpus = gen_synthetic(spec)
    save_corpus(corpus, args.out)
    _write_run_manifest(Path(args.out), "gen-synthetic", vars(args) | {"func": None},
                        started)
    _progress(f"wrote {len(corpus)} records to {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    corpus = load_corpus(args.corpus)
    info = {
        "n_records": len(corpus),
        "d_sim": corpus.d_sim,
        "d_cond": corpus.d_cond,
        "max_tokens": corpus.max_tokens,
        "encoder": corpus.manifest.get("encoder", "unknown"),
        "n_users": len(user_ids(corpus)),
    }
    print(json.dumps(info, sort_keys=True, indent=2))
    return 0


def _cmd_sample(args) -> int:
    started = time.monotonic()
    corpus = load_corpus(args.corpus)
    n = math.ceil(args.ratio * len(corpus))
    k = args.k if args.k is not None else len(corpus)
    cfg = CoresetConfig(n=n, k=k, seed=args.seed,
                        use_preferences=not args.no_preferences)
    profile = coreset_sample(corpus, cfg)
    payload = json.dumps({
        "indices": list(profile.indices),
        "ids": list(profile.source_ids),
        "config": {"n": n, "k": k, "ratio": args.ratio, "seed": args.seed,
                   "use_preferences": not args.no_preferences},
    }, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(payload, "utf-8")
        _write_run_manifest(Path(args.out).parent, "sample",
                            vars(args) | {"func": None}, started)
        _progress(f"wrote profile of {n} indices to {args.out}")
    else:
        sys.stdout.write(payload)
    return 0


def _cmd_train(args) -> int:
    started = time.monotonic()
    corpus = load_corpus(args.corpus)
    overrides = {}
    if args.config:
        overrides.update(json.loads(Path(args.config).read_text("utf-8")))
    for key, flag in (("batch_size", args.batch_size), ("total_steps", args.steps),
                      ("lr_init", args.lr), ("seed", args.seed)):
        if flag is not None:
            overrides[key] = flag
    arch = {k: overrides.pop(k) for k in ("n_layers", "n_heads", "d_model")
            if k in overrides}
    cfg = TrainConfig(**overrides)
    params = init_adapter(
        d_cond=corpus.d_cond,
        d_model=arch.get("d_model", args.d_model),
        n_heads=arch.get("n_heads", args.heads),
        n_layers=arch.get("n_layers", args.layers),
        seed=cfg.seed,
    )
    _progress(f"training {params.n_layers}x{params.n_heads}-head adapter "
              f"for {cfg.total_steps} steps on {len(corpus)} records")
    trained, report = train(corpus, params, cfg)
    out = Path(args.out)
    save_params(trained, out)
    # timing lives in run_manifest.json; keeping it out of the report
    # makes repeated runs byte-identical
    report_dict = report.to_dict()
    report_dict.pop("wall_clock_s", None)
    (out / "train_report.json").write_text(
        json.dumps(report_dict, sort_keys=True, indent=2) + "\n", "utf-8")
    _write_run_manifest(out, "train", vars(args) | {"func": None}, started)
    _progress(f"final train cosine {report.final_train_cosine:.4f}")
    return 0


def _cmd_personalize(args) -> int:
    started = time.monotonic()
    corpus = load_corpus(args.corpus)
    params = load_params(args.params)
    profile = json.loads(Path(args.profile).read_text("utf-8"))
    target = corpus.record_by_id(args.target_id)
    refs = [corpus.records[i] for i in profile["indices"]
            if corpus.records[i].id != args.target_id]
    gcfg = GuidanceConfig(alpha=args.alpha, enabled=not args.no_guidance)
    result = forward(params, PersonalizationRequest(
        target=target, references=refs, guidance=gcfg, uncond=corpus.uncond))

    if result.class_embedding is not None:
        sim = result.class_embedding / np.linalg.norm(result.class_embedding)
    else:
        pooled = result.condition.mean(axis=0)
        sim = pooled / np.linalg.norm(pooled)
    if corpus.d_sim != corpus.d_cond:
        sim = np.zeros(corpus.d_sim)
        sim[0] = 1.0  # similarity space disjoint from condition space
    record = PromptRecord(
        id=f"{args.target_id}_personalized",
        sim_embedding=sim.astype(np.float32),
        condition=result.condition.astype(np.float32),
        class_embedding=None if result.class_embedding is None
        else result.class_embedding.astype(np.float32),
        preference=1.0,
    )
    out_corpus = EmbeddingCorpus(
        records=[record], d_sim=corpus.d_sim, d_cond=corpus.d_cond,
        max_tokens=max(corpus.max_tokens, record.condition.shape[0]),
        uncond=corpus.uncond,
        manifest={"encoder": corpus.manifest.get("encoder", "unknown"),
                  "personalized_from": args.target_id, "alpha": args.alpha})
    save_corpus(out_corpus, args.out)
    _write_run_manifest(Path(args.out), "personalize", vars(args) | {"func": None},
                        started)
    _progress(f"wrote personalized condition for {args.target_id} to {args.out}")
    return 0


def _emit_reports(reports, out, kind, args, started, plots=None) -> None:
    payload_json = reports_to_json(reports)
    payload_csv = reports_to_csv(reports)
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{kind}.json").write_text(payload_json + "\n", "utf-8")
        (out / f"{kind}.csv").write_text(payload_csv, "utf-8")
        if plots:
            for name, svg in plots.items():
                (out / name).write_text(svg, "utf-8")
        _write_run_manifest(out, kind, vars(args) | {"func": None}, started)
        _progress(f"wrote {len(reports)} report(s) to {out}")
    else:
        print(payload_json)


def _cmd_evaluate(args) -> int:
    started = time.monotonic()
    corpus = load_corpus(args.corpus)
    params = load_params(args.params)
    report = evaluate_corpus(corpus, params, alpha=args.alpha, method=args.method,
                             ratio=args.ratio, seed=args.seed,
                             history_window=args.history_window)
    _emit_reports([report], args.out, "evaluate", args, started)
    return 0


def _cmd_sweep(args) -> int:
    started = time.monotonic()
    corpus = load_corpus(args.corpus)
    params = load_params(args.params)
    plots = {}
    if args.kind == "sampling":
        ratios = [float(r) for r in args.ratios.split(",")]
        reports = run_sampling_sweep(corpus, params, methods=METHODS,
                                     ratios=ratios, alpha=args.alpha,
                                     seed=args.seed)
        if args.plot:
            series = {m: [] for m in METHODS}
            for rep in reports:
                series[rep.config["method"]].append(
                    (rep.config["ratio"], rep.mean_history_align))
            plots["sampling.svg"] = line_chart(series, "sampling ratio",
                                               "history align", "Sampling sweep")
    elif args.kind == "ablation":
        table = run_ablation(corpus, params, alpha=args.alpha, seed=args.seed,
                             ratio=args.ratio)
        reports = [table[row] for row in ("full", "wo_S", "wo_G", "wo_SG")]
    else:  # alpha
        alphas = [float(a) for a in args.alphas.split(",")]
        user = args.user or sorted(user_ids(corpus))[0]
        indices = user_record_indices(corpus, user)
        target = corpus.records[indices[-1]]
        refs = [corpus.records[i] for i in indices[:-1]]
        rows = run_alpha_sweep(target, refs, params, alphas, corpus.uncond)
        payload = [{"alpha": r.alpha, "target_align": r.target_align,
                    "reference_align": r.reference_align} for r in rows]
        if args.plot:
            plots["alpha.svg"] = line_chart(
                {"target": [(r.alpha, r.target_align) for r in rows],
                 "reference": [(r.alpha, r.reference_align) for r in rows]},
                "alpha", "align", "Personalization degree sweep")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "alpha.json").write_text(
                json.dumps(payload, sort_keys=True, indent=2) + "\n", "utf-8")
            for name, svg in plots.items():
                (out / name).write_text(svg, "utf-8")
            _write_run_manifest(out, "sweep-alpha", vars(args) | {"func": None},
                                started)
        else:
            print(json.dumps(payload, sort_keys=True, indent=2))
        return 0
    _emit_reports(reports, args.out, f"sweep-{args.kind}", args, started, plots)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drum",
        description="Personalized text-to-image conditioning engine.")
    parser.add_argument("--threads", type=int, default=1,
                        help="parallelism cap; 1 guarantees bitwise reproducibility "
                             "(the engine currently always computes sequentially)")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a deterministic synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-users", type=int, default=8)
    p.add_argument("--history-len", type=int, default=8)
    p.add_argument("--d-sim", type=int, default=16)
    p.add_argument("--d-cond", type=int, default=16)
    p.add_argument("--max-tokens", type=int, default=8)
    p.add_argument("--archetypes", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("inspect", help="print corpus metadata")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("sample", help="select a coreset profile over the whole corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ratio", type=float, default=0.10)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--no-preferences", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("train", help="train the adapter by reconstruction")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", default=None, help="JSON file; flags override it")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--layers", type=int, default=10)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-model", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("personalize", help="fuse a profile with a target condition")
    p.add_argument("--params", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--target-id", required=True)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--no-guidance", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_personalize)

    p = sub.add_parser("evaluate", help="per-user alignment report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--method", choices=METHODS, default="coreset")
    p.add_argument("--ratio", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--history-window", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="sampling / alpha / ablation sweeps")
    p.add_argument("--kind", choices=("sampling", "alpha", "ablation"), required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--ratio", type=float, default=0.10)
    p.add_argument("--ratios", default="0.1,0.25,0.5,1.0")
    p.add_argument("--alphas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--user", default=None)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--plot", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DrumError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
