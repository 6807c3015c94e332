"""
Debias-TLL - Main Entry Point

Usage:
    python main.py generate                              # synthetic train / in-scenario / cross-scenario sets
    python main.py analyze data/train.jsonl data/cross_test.jsonl
    python main.py train --data data/train.jsonl --out runs/debias.ckpt --mode debias
    python main.py eval --checkpoint runs/debias.ckpt --data data/cross_test.jsonl --mode full
    python main.py gradcheck
    python main.py sweep-alpha --train data/train.jsonl --test data/cross_test.jsonl
    python main.py compare --train data/train.jsonl --test data/cross_test.jsonl

Exit codes: 0 success, 1 runtime failure, 2 config/validation error, 3 checkpoint format error.
"""

import argparse
import copy
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from src.analyzer import print_bias_report, print_comparison, print_eval_table, print_gradcheck, summarize_runs
from src.config import ConfigError, ExperimentConfig, load_config
from src.debias_trainer import MODES, TrainResult, check_sample_gradients, train
from src.encoders import ClipFeatureSequence, ModelConfig, TokenSequence, init_params
from src.evaluation import EVAL_MODES, EvalReport, check_compatible, evaluate
from src.numerics import ContractError
from src.proposal_map import TemporalInterval
from src.storage import (
    Checkpoint,
    CheckpointFormatError,
    append_jsonl,
    get_output_path,
    load_checkpoint,
    load_samples_jsonl,
    save_checkpoint,
    save_frame_csv,
    save_json,
    save_samples_jsonl,
)
from src.synthbench import GroundingSample, bias_report, cross_pair

SWEEP_COLUMNS = ["alpha", "r1_iou0.7", "r5_iou0.7", "seed"]


def load_dataset(path: str) -> list[GroundingSample]:
    print(f"Loading data from {path}...")
    try:
        samples = load_samples_jsonl(Path(path))
    except ValueError as e:
        raise ContractError(str(e)) from e
    if not samples:
        raise ContractError(f"{path} contains no samples")
    print(f"  Loaded {len(samples)} samples")
    return samples


def checkpoint_config(cfg: ExperimentConfig, result_cfg) -> dict:
    """Config snapshot stored in the checkpoint, with the effective training settings."""
    snapshot = copy.deepcopy(cfg.raw)
    snapshot["train"].update(mode=result_cfg.mode, alpha=result_cfg.alpha, seed=result_cfg.seed)
    return snapshot


def run_training(cfg: ExperimentConfig, samples: list[GroundingSample], mode: str, alpha: float,
                 seed: int, quiet: bool, log_path: Path | None = None) -> tuple[TrainResult, dict]:
    check_compatible(cfg.model, samples)
    train_cfg = replace(cfg.train, mode=mode, alpha=alpha, seed=seed)

    def on_epoch(record: dict) -> None:
        if log_path is not None:
            append_jsonl(record, log_path)
        if not quiet:
            flag = f"  [{record['n_degenerate']} all-zero label maps]" if record["n_degenerate"] else ""
            print(f"  epoch {record['epoch']:>3}  L_v={record['l_v']:.4f}  L_vs={record['l_vs_raw']:.4f}  "
                  f"s={record['s']:.3f}  w={record['weight']:.3f}  L_t={record['l_total']:.4f}{flag}")

    result = train(samples, train_cfg, cfg.model, threads=cfg.threads, progress=not quiet, on_epoch=on_epoch)
    return result, checkpoint_config(cfg, train_cfg)


def evaluate_modes(params, model_cfg: ModelConfig, samples, modes, cfg: ExperimentConfig,
                   quiet: bool) -> list[EvalReport]:
    return [evaluate(params, model_cfg, samples, mode, cfg.eval, threads=cfg.threads, progress=not quiet)
            for mode in modes]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig, args) -> int:
    out_dir = Path(args.out or cfg.data.out_dir)
    datasets: dict[str, list[GroundingSample]] = {}
    for name, spec in cfg.cross_scenarios.items():
        print(f"\nGenerating scenario pair train -> {name}...")
        train_set, cross_set, in_set = cross_pair(
            cfg.train_scenario, spec, cfg.data.n_train, cfg.data.n_test, cfg.data.n_intest
        )
        datasets.setdefault("train", train_set)
        datasets.setdefault("in_test", in_set)
        datasets[f"{name}_test"] = cross_set

    for name, samples in datasets.items():
        save_samples_jsonl(samples, out_dir / f"{name}.jsonl")

    write_bias_reports(datasets, out_dir / "reports", cfg)
    return 0


def write_bias_reports(datasets: dict[str, list[GroundingSample]], report_dir: Path, cfg: ExperimentConfig) -> None:
    names = list(datasets)
    reference = datasets[names[0]]
    overlap_rows = []
    for name in names:
        other = reference if name != names[0] else None
        report = bias_report(datasets[name], other, grid_size=cfg.data.bias_grid, top_k=cfg.data.top_k)
        print_bias_report(name, report)
        save_json(report.to_dict(), get_output_path(report_dir, name, "bias", "json"))
        hist = pd.DataFrame(report.interval_hist.astype(int))
        hist.index.name = "start_bin"
        save_frame_csv(hist.reset_index(), get_output_path(report_dir, name, "interval_hist", "csv"))
        save_frame_csv(report.top_concepts, get_output_path(report_dir, name, "top_concepts", "csv"))
        save_frame_csv(report.top_intervals, get_output_path(report_dir, name, "top_intervals", "csv"))
        if other is not None:
            overlap_rows.append({"reference": names[0], "dataset": name,
                                 "overlap": report.overlap, "concept_overlap": report.concept_overlap})
    if overlap_rows:
        save_frame_csv(pd.DataFrame(overlap_rows), report_dir / "overlap.csv")


def cmd_analyze(cfg: ExperimentConfig, args) -> int:
    datasets = {Path(p).stem: load_dataset(p) for p in args.data}
    write_bias_reports(datasets, Path(args.out or Path(cfg.data.out_dir) / "reports"), cfg)
    return 0


def cmd_train(cfg: ExperimentConfig, args) -> int:
    samples = load_dataset(args.data)
    mode = args.mode or cfg.train.mode
    alpha = args.alpha if args.alpha is not None else cfg.train.alpha
    check_compatible(cfg.model, samples)
    out = Path(args.out)
    log_path = out.with_name(out.name + ".log.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path.unlink(missing_ok=True)

    print(f"\nTraining ({mode}, alpha={alpha}, seed={cfg.train.seed}, epochs={cfg.train.epochs})...")
    try:
        result, snapshot = run_training(cfg, samples, mode, alpha, cfg.train.seed, args.quiet, log_path)
        save_checkpoint(Checkpoint(result.params, snapshot, seed=cfg.train.seed, epochs=result.epochs), out)
    except BaseException:
        # no log without its checkpoint
        log_path.unlink(missing_ok=True)
        raise
    if log_path.exists():
        print(f"Saved training log to {log_path}")
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    ckpt = load_checkpoint(Path(args.checkpoint))
    try:
        model_cfg = ckpt.model_cfg
    except (KeyError, TypeError, ContractError) as e:
        raise CheckpointFormatError(f"{args.checkpoint}: unusable model config ({e})") from e
    samples = load_dataset(args.data)
    try:
        check_compatible(model_cfg, samples)
    except ContractError as e:
        raise CheckpointFormatError(f"checkpoint incompatible with {args.data}: {e}") from e

    modes = EVAL_MODES if args.mode == "all" else (args.mode,)
    reports = evaluate_modes(ckpt.params, model_cfg, samples, modes, cfg, args.quiet)
    print_eval_table(reports)

    prefix = Path(args.out) if args.out else Path(args.checkpoint).with_suffix("")
    for report in reports:
        stem = prefix.with_name(f"{prefix.name}_{Path(args.data).stem}_{report.mode}")
        save_json(report.to_dict(), stem.with_suffix(".json"))
        save_frame_csv(report.to_frame(), stem.with_suffix(".csv"))
    return 0


def tiny_instance(cfg: ExperimentConfig) -> tuple[GroundingSample, ModelConfig, object]:
    """Seeded random sample and parameters small enough for coordinate-wise differencing."""
    gc = cfg.gradcheck
    model_cfg = ModelConfig(n_clips=gc.n_clips, dim_v=gc.dim, dim_s=gc.dim, vocab_size=gc.vocab_size,
                            bm_samples=cfg.model.bm_samples, location_bias=cfg.model.location_bias)
    rng = np.random.default_rng(gc.seed)
    params = init_params(model_cfg, seed=gc.seed)
    for name in ("visual_head.cell_bias", "fusion_head.cell_bias"):
        if name in params:
            params[name] = 0.1 * rng.standard_normal(params[name].shape)

    start = rng.uniform(0.0, 0.4)
    sample = GroundingSample(
        video=ClipFeatureSequence(rng.standard_normal((gc.n_clips, gc.dim))),
        query=TokenSequence([int(t) for t in rng.integers(1, gc.vocab_size, size=gc.n_tokens)]),
        gt=TemporalInterval(start, start + rng.uniform(0.4, 0.6)),
    )
    return sample, model_cfg, params


def cmd_gradcheck(cfg: ExperimentConfig, args) -> int:
    gc = cfg.gradcheck
    sample, model_cfg, params = tiny_instance(cfg)
    fault = 0.1 if args.inject_fault else 0.0
    variants = {
        "debias (gradient through s)": replace(cfg.train, mode="debias", alpha=gc.alpha, detach_bias_weight=False,
                                               stop_encoder_grad_from_visual=False),
        "debias (s detached)": replace(cfg.train, mode="debias", alpha=gc.alpha, detach_bias_weight=True,
                                       stop_encoder_grad_from_visual=False),
        "debias (visual loss kept out of the encoder)": replace(cfg.train, mode="debias", alpha=gc.alpha,
                                                               detach_bias_weight=True,
                                                               stop_encoder_grad_from_visual=True),
        "tll": replace(cfg.train, mode="tll", stop_encoder_grad_from_visual=False),
    }
    results = {
        name: check_sample_gradients(sample, params, train_cfg, model_cfg, h=gc.h, fault=fault)
        for name, train_cfg in variants.items()
    }
    print_gradcheck(results, gc.tol)
    worst = max(r.max_rel_error for r in results.values())
    print(f"Max relative error: {worst:.3e} (tolerance {gc.tol:g})")
    return 0 if worst < gc.tol else 1


def train_and_score(cfg: ExperimentConfig, train_set, test_set, mode: str, alpha: float, seed: int,
                    eval_modes, quiet: bool) -> list[EvalReport]:
    result, _ = run_training(cfg, train_set, mode, alpha, seed, quiet=True)
    eval_cfg = replace(cfg.eval, seed=seed)
    return [evaluate(result.params, cfg.model, test_set, m, eval_cfg, threads=cfg.threads) for m in eval_modes]


def sweep_seeds(cfg: ExperimentConfig, args) -> tuple[int, ...]:
    return (args.seed,) if args.seed is not None else cfg.sweep.seeds


def cmd_sweep_alpha(cfg: ExperimentConfig, args) -> int:
    alphas = tuple(args.alphas) if args.alphas else cfg.sweep.alphas
    if not alphas or min(alphas) <= 0:
        raise ConfigError("need at least one positive alpha")
    train_set, test_set = load_dataset(args.train), load_dataset(args.test)

    rows = []
    for seed in sweep_seeds(cfg, args):
        for alpha in alphas:
            print(f"\n[seed {seed}] alpha = {alpha}")
            (report,) = train_and_score(cfg, train_set, test_set, "debias", alpha, seed, ("full",), args.quiet)
            rows.append({"alpha": alpha, "r1_iou0.7": report.recall(1, 0.7),
                         "r5_iou0.7": report.recall(5, 0.7), "seed": seed})
            print(f"  R1@0.7={rows[-1]['r1_iou0.7']:.2f}  R5@0.7={rows[-1]['r5_iou0.7']:.2f}")

    df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    print_comparison(summarize_runs(df, "alpha", ["r1_iou0.7", "r5_iou0.7"]))
    save_frame_csv(df, Path(args.out or Path(cfg.data.out_dir) / "alpha_sweep.csv"))
    return 0


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    train_set, test_set = load_dataset(args.train), load_dataset(args.test)
    rows = []
    for seed in sweep_seeds(cfg, args):
        for method in MODES:
            print(f"\n[seed {seed}] training {method}...")
            reports = train_and_score(cfg, train_set, test_set, method, cfg.train.alpha, seed,
                                      ("full", "video_only", "random"), args.quiet)
            for report in reports:
                label = method if report.mode == "full" else f"{method}/{report.mode}"
                rows.append({"seed": seed, "method": label, **report.metrics})
            print_eval_table(reports)

    df = pd.DataFrame(rows)
    metrics = [c for c in df.columns if c.startswith("R")]
    summary = summarize_runs(df, "method", metrics)
    print_comparison(summary)
    means = summary.assign(seed="mean")[["seed", "method", *metrics]]
    save_frame_csv(pd.concat([df, means], ignore_index=True),
                   Path(args.out or Path(cfg.data.out_dir) / "compare.csv"))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "sweep-alpha": cmd_sweep_alpha,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Debias-TLL: debiased temporal grounding on synthetic data")
    parser.add_argument("--config", type=str, help="Path to YAML settings (default: config/settings.yaml)")
    parser.add_argument("--seed", type=int, help="Override training/evaluation seeds")
    parser.add_argument("--threads", type=int, help="Worker threads for per-sample passes")
    parser.add_argument("--quiet", action="store_true", help="No progress bars or per-epoch lines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="Generate the synthetic scenario datasets and bias reports")
    p.add_argument("--out", type=str, help="Output directory (default: data.out_dir)")

    p = sub.add_parser("analyze", help="Bias report for existing dataset files")
    p.add_argument("data", nargs="+", help="JSONL dataset files; the first is the overlap reference")
    p.add_argument("--out", type=str, help="Report directory")

    p = sub.add_parser("train", help="Train TLL or Debias-TLL")
    p.add_argument("--data", required=True, help="Training JSONL file")
    p.add_argument("--out", required=True, help="Checkpoint path")
    p.add_argument("--mode", choices=MODES, help="tll: weight fixed to 1; debias: 1 - s^alpha")
    p.add_argument("--alpha", type=float, help="Override train.alpha")

    p = sub.add_parser("eval", help="Recall@N,IoU=theta of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=(*EVAL_MODES, "all"), default="full")
    p.add_argument("--out", type=str, help="Report path prefix")

    p = sub.add_parser("gradcheck", help="Finite-difference check of the training gradients")
    p.add_argument("--inject-fault", action="store_true", help="Corrupt one gradient coordinate by +0.1")

    for name, help_text in (("sweep-alpha", "Cross-scenario R@N,IoU=0.7 for each alpha"),
                            ("compare", "TLL vs Debias-TLL across seeds")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--train", required=True, help="Training JSONL file")
        p.add_argument("--test", required=True, help="Test JSONL file (usually a cross-scenario set)")
        p.add_argument("--out", type=str, help="CSV output path")
        if name == "sweep-alpha":
            p.add_argument("--alphas", type=float, nargs="+", help="Override sweep.alphas")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.threads is not None:
            cfg = replace(cfg, threads=max(1, args.threads))
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CheckpointFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
