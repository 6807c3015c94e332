"""Console summaries for bias reports, evaluation reports and gradient checks."""

import pandas as pd

from src.evaluation import EvalReport
from src.numerics import GradCheckResult
from src.synthbench import BiasReport, rank_frequency_slope


def print_bias_report(name: str, report: BiasReport) -> None:
    """Print formatted bias analysis results."""
    print("\n" + "=" * 60)
    print(f"VIDEO MOMENT BIAS ANALYSIS: {name}")
    print("=" * 60)

    print(f"\nSamples: {report.n_samples}")
    print(f"Concepts seen: {len(report.concept_freq)}")
    if len(report.concept_freq) >= 2:
        print(f"Rank-frequency slope (log-log): {rank_frequency_slope(report.concept_freq):.3f}")
    if report.independence_pvalue is not None:
        print(f"Concept/interval independence p-value: {report.independence_pvalue:.3g}")

    print("\n--- Most Frequent Concepts ---")
    for _, row in report.top_concepts.iterrows():
        share = row["count"] / report.n_samples * 100
        print(f"  concept {row['concept']:>3}: {row['count']:>6} ({share:.1f}%)")

    g = report.grid_size
    print(f"\n--- Most Frequent Intervals ({g}x{g} bins) ---")
    for _, row in report.top_intervals.iterrows():
        lo, hi = row["start_bin"] / g, (row["end_bin"] + 1) / g
        print(f"  start~[{lo:.2f}) end~({hi:.2f}]: {row['count']}")

    if report.overlap is not None:
        print(f"\nInterval histogram overlap vs reference: {report.overlap:.3f}")
        print(f"Per-concept interval overlap:            {report.concept_overlap:.3f}")

    print("\n" + "=" * 60)


def print_eval_table(reports: list[EvalReport]) -> None:
    """R@N x IoU table, one row per evaluation mode."""
    if not reports:
        return
    columns = list(reports[0].metrics)
    print("\n" + "=" * 60)
    print("EVALUATION (Recall@N, IoU=theta, %)")
    print("=" * 60)
    print(f"{'mode':<14}" + "".join(f"{c:>10}" for c in columns) + f"{'queries':>9}")
    print("-" * 60)
    for report in reports:
        cells = "".join(f"{report.metrics[c]:>10.2f}" for c in columns)
        print(f"{report.mode:<14}{cells}{report.n_queries:>9}")
    print("=" * 60)


def print_gradcheck(results: dict[str, GradCheckResult], tol: float) -> None:
    print("\n" + "=" * 60)
    print("GRADIENT CHECK (central differences)")
    print("=" * 60)
    for variant, result in results.items():
        status = "PASS" if result.passed(tol) else "FAIL"
        print(f"\n{variant}: max relative error {result.max_rel_error:.3e} [{status}]")
        for name, err in result.per_param.items():
            print(f"  {name:<20} {err:.3e}")
    print("\n" + "=" * 60)


def summarize_runs(df: pd.DataFrame, group: str, metrics: list[str]) -> pd.DataFrame:
    """Mean of each metric per group value, in first-seen group order."""
    return df.groupby(group, sort=False)[metrics].mean().reset_index()


def print_comparison(summary: pd.DataFrame) -> None:
    print("\n" + "=" * 60)
    print("CROSS-SCENARIO COMPARISON (mean over seeds)")
    print("=" * 60)
    print(summary.to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    print("=" * 60)
