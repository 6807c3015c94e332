"""2D temporal proposal grid: interval geometry, IoU, soft labels and boundary-matching pooling."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from src.numerics import ContractError


@dataclass(frozen=True)
class TemporalInterval:
    """Normalized [start, end] span with 0 <= start < end <= 1."""

    start: float
    end: float

    def __post_init__(self):
        if not (0.0 <= self.start < self.end <= 1.0):
            raise ContractError(f"invalid interval [{self.start}, {self.end}]")

    @property
    def length(self) -> float:
        return self.end - self.start

    def as_list(self) -> list[float]:
        return [self.start, self.end]


@dataclass(frozen=True)
class LabelConfig:
    mu_min: float = 0.3
    mu_max: float = 0.7

    def __post_init__(self):
        if not (0.0 <= self.mu_min < self.mu_max <= 1.0):
            raise ContractError(f"need 0 <= mu_min < mu_max <= 1, got {self.mu_min}, {self.mu_max}")


@dataclass(frozen=True)
class ProposalGrid:
    """All valid proposals (a, b) with 0 <= a <= b <= N-1, a outer, b inner."""

    n_clips: int

    def __post_init__(self):
        if self.n_clips < 1:
            raise ContractError(f"n_clips must be >= 1, got {self.n_clips}")

    @property
    def size(self) -> int:
        return self.n_clips * (self.n_clips + 1) // 2

    @cached_property
    def cells(self) -> list[tuple[int, int]]:
        n = self.n_clips
        return [(a, b) for a in range(n) for b in range(a, n)]

    @cached_property
    def starts(self) -> np.ndarray:
        return np.array([a / self.n_clips for a, _ in self.cells])

    @cached_property
    def ends(self) -> np.ndarray:
        return np.array([(b + 1) / self.n_clips for _, b in self.cells])

    def index_of(self, a: int, b: int) -> int:
        n = self.n_clips
        if not (0 <= a <= b <= n - 1):
            raise ContractError(f"cell ({a}, {b}) outside grid of {n} clips")
        # rows 0..a-1 hold n, n-1, ..., n-a+1 cells
        return a * n - a * (a - 1) // 2 + (b - a)

    def interval(self, index: int) -> TemporalInterval:
        a, b = self.cells[index]
        return interval_of(a, b, self.n_clips)


@dataclass
class ScoreMap:
    grid: ProposalGrid
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (self.grid.size,):
            raise ContractError(f"score map needs {self.grid.size} values, got {self.scores.shape}")


@dataclass
class SoftLabelMap:
    grid: ProposalGrid
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.labels.shape != (self.grid.size,):
            raise ContractError(f"label map needs {self.grid.size} values, got {self.labels.shape}")


def interval_of(a: int, b: int, n_clips: int) -> TemporalInterval:
    """Proposal (a, b) covers [a/N, (b+1)/N], clip b inclusive."""
    if not (0 <= a <= b <= n_clips - 1):
        raise ContractError(f"cell ({a}, {b}) outside grid of {n_clips} clips")
    return TemporalInterval(a / n_clips, (b + 1) / n_clips)


def temporal_iou(x: TemporalInterval, y: TemporalInterval) -> float:
    inter = max(0.0, min(x.end, y.end) - max(x.start, y.start))
    union = max(x.end, y.end) - min(x.start, y.start)
    if inter == 0.0:
        return 0.0
    # overlapping intervals: hull length equals union length
    return inter / union


def iou_with_grid(gt: TemporalInterval, grid: ProposalGrid) -> np.ndarray:
    """Vectorized temporal_iou of every grid cell against gt, in grid order."""
    inter = np.clip(np.minimum(grid.ends, gt.end) - np.maximum(grid.starts, gt.start), 0.0, None)
    union = np.maximum(grid.ends, gt.end) - np.minimum(grid.starts, gt.start)
    return np.where(inter > 0.0, inter / union, 0.0)


def soft_label(iou, cfg: LabelConfig):
    """Piecewise-linear soft label: 0 below mu_min, 1 above mu_max."""
    scaled = (np.asarray(iou, dtype=np.float64) - cfg.mu_min) / (cfg.mu_max - cfg.mu_min)
    out = np.clip(scaled, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def build_label_map(gt: TemporalInterval, grid: ProposalGrid, cfg: LabelConfig) -> SoftLabelMap:
    return SoftLabelMap(grid, soft_label(iou_with_grid(gt, grid), cfg))


def flatten_valid(m: ScoreMap | SoftLabelMap) -> np.ndarray:
    return (m.scores if isinstance(m, ScoreMap) else m.labels).copy()


def to_dense(flat: np.ndarray, grid: ProposalGrid, fill: float = 0.0) -> np.ndarray:
    """Scatter a flat grid-order vector into an N x N matrix (lower triangle = fill)."""
    dense = np.full((grid.n_clips, grid.n_clips), fill, dtype=np.float64)
    rows, cols = zip(*grid.cells)
    dense[list(rows), list(cols)] = flat
    return dense


def unflatten(flat: np.ndarray, grid: ProposalGrid, kind: str = "score") -> ScoreMap | SoftLabelMap:
    """Inverse of flatten_valid."""
    flat = np.asarray(flat, dtype=np.float64).copy()
    if kind == "score":
        return ScoreMap(grid, flat)
    if kind == "label":
        return SoftLabelMap(grid, flat)
    raise ContractError(f"unknown map kind {kind!r}")


# ---------------------------------------------------------------------------
# Boundary-matching pooling
# ---------------------------------------------------------------------------

def bm_weights(n_clips: int, a: int, b: int, n_samples: int) -> np.ndarray:
    """Interpolation weights over clips for one proposal; pooled = weights @ clips.

    S positions sit at the midpoints of S equal bins over [a, b+1). Clip i is
    centred at i + 0.5; positions are clamped to the covered centres [a, b]
    and linearly interpolated between the two nearest clips.
    """
    if n_samples < 1:
        raise ContractError(f"sample count must be >= 1, got {n_samples}")
    if not (0 <= a <= b <= n_clips - 1):
        raise ContractError(f"cell ({a}, {b}) outside grid of {n_clips} clips")

    positions = a + (np.arange(n_samples) + 0.5) * (b + 1 - a) / n_samples
    u = np.clip(positions - 0.5, a, b)
    lo = np.floor(u).astype(int)
    hi = np.minimum(lo + 1, b)
    frac = u - lo

    weights = np.zeros(n_clips)
    np.add.at(weights, lo, 1.0 - frac)
    np.add.at(weights, hi, frac)
    return weights / n_samples


def bm_pool(clips: np.ndarray, a: int, b: int, n_samples: int) -> np.ndarray:
    clips = np.asarray(clips, dtype=np.float64)
    return bm_weights(clips.shape[0], a, b, n_samples) @ clips


def bm_matrix(grid: ProposalGrid, n_samples: int) -> np.ndarray:
    """Stacked bm_weights for every cell, shape (|C|, N)."""
    return np.stack([bm_weights(grid.n_clips, a, b, n_samples) for a, b in grid.cells])
