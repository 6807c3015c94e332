"""Twin-localizer training with bias-similarity sample reweighing.

The visual localizer sees only the video. How well its score map agrees with
the soft labels (cosine similarity s) measures how much of a sample can be
explained by video moment bias alone; the visual-semantic loss of that sample
is scaled by 1 - s**alpha.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from tqdm import tqdm

from src.encoders import (
    ModelConfig,
    encode_pooled,
    encode_pooled_backward,
    encode_query,
    encode_query_backward,
    init_params,
    pool_proposals,
)
from src.localizers import visual_backward, visual_logits, vs_backward, vs_scores
from src.numerics import (
    AdamState,
    ContractError,
    GradCheckResult,
    NonFiniteError,
    ParamStore,
    adam_step,
    bce,
    grad_check,
    sigmoid,
)
from src.proposal_map import LabelConfig, ProposalGrid, ScoreMap, SoftLabelMap, build_label_map
from src.synthbench import GroundingSample

MODES = ("debias", "tll")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "debias"
    alpha: float = 1.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    epochs: int = 15
    seed: int = 0
    label_cfg: LabelConfig = field(default_factory=LabelConfig)
    detach_bias_weight: bool = True
    stop_encoder_grad_from_visual: bool = False
    bce_reduction: str = "mean"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha <= 0:
            raise ContractError(f"alpha must be > 0, got {self.alpha}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or self.lr < 0:
            raise ContractError("epochs and lr must be non-negative")
        if self.bce_reduction not in ("mean", "sum"):
            raise ContractError(f"bce_reduction must be 'mean' or 'sum', got {self.bce_reduction!r}")


@dataclass
class LossBreakdown:
    l_v: float
    l_vs_raw: float
    s: float
    weight: float
    l_vs_adjusted: float
    l_total: float
    degenerate: bool = False


@dataclass
class TrainResult:
    params: ParamStore
    adam: AdamState
    history: list[dict]
    epochs: int


# ---------------------------------------------------------------------------
# Loss pieces
# ---------------------------------------------------------------------------

def _check_same_grid(a, b) -> None:
    if a.grid != b.grid:
        raise ContractError(f"grid mismatch: {a.grid.n_clips} vs {b.grid.n_clips} clips")


def loss_visual(p_prime: ScoreMap, gt: SoftLabelMap, reduction: str = "mean") -> tuple[float, np.ndarray]:
    """BCE between the video-only score map and the soft labels; returns (loss, dL/dp')."""
    _check_same_grid(p_prime, gt)
    return bce(p_prime.scores, gt.labels, reduction=reduction)


def cosine_similarity(x: np.ndarray, y: np.ndarray) -> float:
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(np.clip(x @ y / (nx * ny), 0.0, 1.0))


def cosine_similarity_grad(x: np.ndarray, y: np.ndarray, s: float) -> np.ndarray:
    """ds/dx for s = cos(x, y)."""
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return np.zeros_like(x)
    return y / (nx * ny) - s * x / (nx * nx)


def bias_similarity(p_prime: ScoreMap, gt: SoftLabelMap) -> float:
    """Cosine similarity of the bias probe's map and the soft labels; 0 when gt is all zero."""
    _check_same_grid(p_prime, gt)
    return cosine_similarity(p_prime.scores, gt.labels)


def reweigh(l_vs: float, s: float, alpha: float) -> tuple[float, float]:
    """Returns (1 - s**alpha, (1 - s**alpha) * l_vs)."""
    if alpha <= 0:
        raise ContractError(f"alpha must be > 0, got {alpha}")
    if not (0.0 <= s <= 1.0):
        raise ContractError(f"bias similarity must lie in [0, 1], got {s}")
    weight = 1.0 - s ** alpha
    return weight, weight * l_vs


def _weight_slope(s: float, alpha: float) -> float:
    """d(1 - s**alpha)/ds, taken as 0 at s = 0."""
    return -alpha * s ** (alpha - 1.0) if s > 0.0 else 0.0


# ---------------------------------------------------------------------------
# Per-sample objective
# ---------------------------------------------------------------------------

def sample_loss(
    sample: GroundingSample,
    params: ParamStore,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    pooled: np.ndarray | None = None,
    fixed_weight: float | None = None,
    visual_feats: np.ndarray | None = None,
) -> tuple[LossBreakdown, ParamStore]:
    """Forward and backward pass of L_t = L_v + (1 - s**alpha) * L_vs for one sample.

    Args:
        pooled: cached pool_proposals output for this sample's video
        fixed_weight: use this weight instead of 1 - s**alpha (treated as a constant)
        visual_feats: constant proposal features for the visual head instead of
            the encoder output at `params`

    Returns:
        (LossBreakdown, gradients of L_t)
    """
    grid = ProposalGrid(sample.video.n_clips)
    if pooled is None:
        pooled = pool_proposals(sample.video, model_cfg.bm_samples)

    feats = encode_pooled(pooled, params)
    q = encode_query(sample.query, params)
    v_feats = feats if visual_feats is None else visual_feats
    p_v = sigmoid(visual_logits(v_feats, params))
    p, fused = vs_scores(feats, q, params)
    gt = build_label_map(sample.gt, grid, cfg.label_cfg).labels

    l_v, d_pv = bce(p_v, gt, reduction=cfg.bce_reduction)
    l_vs, d_p = bce(p, gt, reduction=cfg.bce_reduction)
    degenerate = not np.any(gt > 0)
    s = cosine_similarity(p_v, gt)

    if cfg.mode == "tll":
        weight = 1.0
    elif fixed_weight is not None:
        weight = float(fixed_weight)
    else:
        weight, _ = reweigh(l_vs, s, cfg.alpha)
    l_adj = weight * l_vs
    breakdown = LossBreakdown(l_v, l_vs, s, weight, l_adj, l_v + l_adj, degenerate)

    grads = params.zeros_like()
    d_feats_vs, dq = vs_backward(weight * d_p, p, fused, feats, q, params, grads)

    through_s = (cfg.mode == "debias" and fixed_weight is None
                 and not cfg.detach_bias_weight and not degenerate)
    if through_s:
        d_pv = d_pv + l_vs * _weight_slope(s, cfg.alpha) * cosine_similarity_grad(p_v, gt, s)
    d_feats_v = visual_backward(d_pv, p_v, v_feats, params, grads)

    d_feats = d_feats_vs if cfg.stop_encoder_grad_from_visual else d_feats_vs + d_feats_v
    encode_pooled_backward(d_feats, pooled, params, grads)
    encode_query_backward(dq, sample.query, params, grads)
    return breakdown, grads


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

EPOCH_KEYS = ("l_v", "l_vs_raw", "s", "weight", "l_total")


def _epoch_record(epoch: int, breakdowns: list[LossBreakdown]) -> dict:
    record = {"epoch": epoch}
    for key in EPOCH_KEYS:
        record[key] = float(np.mean([getattr(b, key) for b in breakdowns]))
    record["n_degenerate"] = int(sum(b.degenerate for b in breakdowns))
    return record


def train(
    dataset: list[GroundingSample],
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    params: ParamStore | None = None,
    threads: int = 1,
    progress: bool = False,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Seeded mini-batch Adam training; deterministic for a given (dataset, cfg, model_cfg).

    Per-sample gradients of a batch are computed independently (optionally on
    a thread pool) and reduced in batch order, so the thread count never
    changes the result.
    """
    if not dataset:
        raise ContractError("cannot train on an empty dataset")
    if params is None:
        params = init_params(model_cfg, seed=cfg.seed)
    adam = AdamState.for_params(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    pooled = [pool_proposals(s.video, model_cfg.bm_samples) for s in dataset]

    history = []
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in tqdm(range(1, cfg.epochs + 1), desc=f"train[{cfg.mode}]", disable=not progress):
            order = rng.permutation(len(dataset))
            breakdowns = []
            for start in range(0, len(order), cfg.batch_size):
                batch = [int(i) for i in order[start:start + cfg.batch_size]]

                def run(i, current=params):
                    return sample_loss(dataset[i], current, cfg, model_cfg, pooled=pooled[i])

                results = list(executor.map(run, batch)) if executor else [run(i) for i in batch]

                batch_grads = params.zeros_like()
                for i, (breakdown, grads) in zip(batch, results):
                    if not np.isfinite(breakdown.l_total):
                        raise NonFiniteError(f"non-finite loss at epoch {epoch}, sample {i}: {asdict(breakdown)}")
                    batch_grads.accumulate(grads, 1.0 / len(batch))
                    breakdowns.append(breakdown)
                params, adam = adam_step(params, batch_grads, adam)

            record = _epoch_record(epoch, breakdowns)
            history.append(record)
            if on_epoch:
                on_epoch(record)
    finally:
        if executor:
            executor.shutdown()

    return TrainResult(params=params, adam=adam, history=history, epochs=cfg.epochs)


def check_sample_gradients(
    sample: GroundingSample,
    params: ParamStore,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    h: float = 1e-5,
    fault: float = 0.0,
) -> GradCheckResult:
    """Finite-difference check of sample_loss gradients.

    With detach_bias_weight on, the analytic gradient treats the weight as a
    constant, so the numeric side freezes it at its value at `params`. With
    stop_encoder_grad_from_visual on, the visual head likewise reads encoder
    features frozen at `params`.
    `fault` is added to the first analytic gradient coordinate.
    """
    pooled = pool_proposals(sample.video, model_cfg.bm_samples)
    fixed = None
    if cfg.mode == "debias" and cfg.detach_bias_weight:
        fixed = sample_loss(sample, params, cfg, model_cfg, pooled=pooled)[0].weight
    frozen = encode_pooled(pooled, params) if cfg.stop_encoder_grad_from_visual else None

    def loss_and_grad(p: ParamStore):
        breakdown, grads = sample_loss(sample, p, cfg, model_cfg, pooled=pooled, fixed_weight=fixed,
                                       visual_feats=frozen)
        if fault:
            first = grads.names()[0]
            corrupted = grads[first].copy()
            corrupted.flat[0] += fault
            grads[first] = corrupted
        return breakdown.l_total, grads

    return grad_check(loss_and_grad, params, h=h)
