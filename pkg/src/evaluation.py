"""Temporal NMS, Recall@N,IoU=theta and the four evaluation modes."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.encoders import ModelConfig, encode_pooled, encode_query, mask_query, pool_proposals
from src.localizers import visual_logits, vs_scores
from src.numerics import ContractError, ParamStore, sigmoid
from src.proposal_map import ProposalGrid, TemporalInterval, temporal_iou
from src.synthbench import GroundingSample

EVAL_MODES = ("full", "video_only", "query_masked", "random")


@dataclass(frozen=True)
class ScoredInterval:
    interval: TemporalInterval
    score: float
    index: int = 0  # grid (flatten) index, the final tie-break


@dataclass(frozen=True)
class EvalConfig:
    nms_thresh: float = 0.4
    top_n: tuple[int, ...] = (1, 5)
    thetas: tuple[float, ...] = (0.5, 0.7)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.nms_thresh <= 1.0):
            raise ContractError(f"nms_thresh must lie in (0, 1], got {self.nms_thresh}")
        if not self.top_n or min(self.top_n) < 1:
            raise ContractError("top_n needs values >= 1")
        if not self.thetas or any(not (0.0 < t <= 1.0) for t in self.thetas):
            raise ContractError("thetas must lie in (0, 1]")

    @property
    def keep(self) -> int:
        return max(self.top_n)


def metric_name(n: int, theta: float) -> str:
    return f"R{n}@{theta}"


@dataclass
class EvalReport:
    mode: str
    metrics: dict[str, float]
    n_queries: int
    seed: int
    grid: list[tuple[int, float]] = field(default_factory=list)

    def recall(self, n: int, theta: float) -> float:
        return self.metrics[metric_name(n, theta)]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "metrics": self.metrics, "n_queries": self.n_queries, "seed": self.seed}

    def to_frame(self) -> pd.DataFrame:
        """One flat row per (mode, N, theta)."""
        rows = [
            {"mode": self.mode, "n": n, "theta": theta, "recall": self.recall(n, theta),
             "n_queries": self.n_queries, "seed": self.seed}
            for n, theta in self.grid
        ]
        return pd.DataFrame(rows, columns=["mode", "n", "theta", "recall", "n_queries", "seed"])


# ---------------------------------------------------------------------------
# NMS and recall
# ---------------------------------------------------------------------------

def _rank_key(c: ScoredInterval):
    return (-c.score, c.interval.start, c.index)


def temporal_nms(candidates: list[ScoredInterval], thresh: float, keep: int) -> list[ScoredInterval]:
    """Greedy NMS: take the best remaining candidate, drop everything with IoU > thresh against it."""
    if not (0.0 < thresh <= 1.0):
        raise ContractError(f"NMS threshold must lie in (0, 1], got {thresh}")
    kept: list[ScoredInterval] = []
    for cand in sorted(candidates, key=_rank_key):
        if len(kept) >= keep:
            break
        if all(temporal_iou(cand.interval, k.interval) <= thresh for k in kept):
            kept.append(cand)
    return kept


def recall_hit(preds: list[ScoredInterval], gt: TemporalInterval, theta: float) -> int:
    return int(any(temporal_iou(p.interval, gt) >= theta for p in preds))


def candidates_from_scores(scores: np.ndarray, grid: ProposalGrid) -> list[ScoredInterval]:
    return [ScoredInterval(grid.interval(i), float(s), i) for i, s in enumerate(scores)]


def hits_for_scores(scores: np.ndarray, gt: TemporalInterval, grid: ProposalGrid, cfg: EvalConfig) -> dict[str, int]:
    kept = temporal_nms(candidates_from_scores(scores, grid), cfg.nms_thresh, cfg.keep)
    return {
        metric_name(n, theta): recall_hit(kept[:n], gt, theta)
        for n in cfg.top_n for theta in cfg.thetas
    }


def aggregate(hits: list[dict[str, int]], mode: str, cfg: EvalConfig) -> EvalReport:
    """Summed hit counters turned into percentages."""
    n = len(hits)
    metrics = {}
    for top in cfg.top_n:
        for theta in cfg.thetas:
            name = metric_name(top, theta)
            total = sum(h[name] for h in hits)
            metrics[name] = 100.0 * total / n if n else 0.0
    grid = [(top, theta) for top in cfg.top_n for theta in cfg.thetas]
    return EvalReport(mode=mode, metrics=metrics, n_queries=n, seed=cfg.seed, grid=grid)


def evaluate_score_maps(score_maps: list[np.ndarray], gts: list[TemporalInterval], grid: ProposalGrid,
                        mode: str, cfg: EvalConfig) -> EvalReport:
    """Metrics for precomputed score maps (grid order), one per query."""
    hits = [hits_for_scores(scores, gt, grid, cfg) for scores, gt in zip(score_maps, gts)]
    return aggregate(hits, mode, cfg)


# ---------------------------------------------------------------------------
# Model evaluation
# ---------------------------------------------------------------------------

def score_sample(sample: GroundingSample, params: ParamStore, model_cfg: ModelConfig, mode: str,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Score map of one sample in grid order for the given evaluation mode."""
    grid = ProposalGrid(sample.video.n_clips)
    if mode == "random":
        if rng is None:
            raise ContractError("random mode needs a generator")
        return rng.uniform(0.0, 1.0, size=grid.size)

    feats = encode_pooled(pool_proposals(sample.video, model_cfg.bm_samples), params)
    if mode == "video_only":
        return sigmoid(visual_logits(feats, params))
    tokens = mask_query(sample.query) if mode == "query_masked" else sample.query
    scores, _ = vs_scores(feats, encode_query(tokens, params), params)
    return scores


def check_compatible(model_cfg: ModelConfig, dataset: list[GroundingSample]) -> None:
    for sample in dataset:
        if sample.video.n_clips != model_cfg.n_clips or sample.video.dim != model_cfg.dim_v:
            raise ContractError(
                f"sample has {sample.video.n_clips}x{sample.video.dim} clips, "
                f"model expects {model_cfg.n_clips}x{model_cfg.dim_v}"
            )
        tokens = sample.query.tokens
        if not tokens:
            raise ContractError("sample has an empty query")
        if min(tokens) < 0 or max(tokens) >= model_cfg.vocab_size:
            raise ContractError(f"token ids {min(tokens)}..{max(tokens)} outside vocabulary of {model_cfg.vocab_size}")


def evaluate(params: ParamStore, model_cfg: ModelConfig, dataset: list[GroundingSample], mode: str,
             cfg: EvalConfig, threads: int = 1, progress: bool = False) -> EvalReport:
    """R@N,IoU=theta of `mode` on `dataset`; deterministic per (params, dataset, mode, cfg.seed)."""
    if mode not in EVAL_MODES:
        raise ContractError(f"mode must be one of {EVAL_MODES}, got {mode!r}")
    check_compatible(model_cfg, dataset)
    grid = model_cfg.grid

    if mode == "random":
        # drawn sequentially so the result does not depend on the thread count
        rng = np.random.default_rng(cfg.seed)
        score_maps = [score_sample(s, params, model_cfg, mode, rng) for s in dataset]
    else:
        def run(sample):
            return score_sample(sample, params, model_cfg, mode)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                score_maps = list(pool.map(run, dataset))
        else:
            score_maps = [run(s) for s in tqdm(dataset, desc=f"eval[{mode}]", disable=not progress)]

    return evaluate_score_maps(score_maps, [s.gt for s in dataset], grid, mode, cfg)
