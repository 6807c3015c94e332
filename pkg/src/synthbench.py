"""Seeded synthetic grounding datasets with controllable video moment biases.

Two biases are planted:
  - visual content: concepts are queried with Zipf-distributed frequency
  - temporal interval: with probability rho a concept's ground truth comes
    from the prior component it is mapped to, otherwise from the full mixture
"""

from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import stats

from src.encoders import NULL_TOKEN, ClipFeatureSequence, TokenSequence
from src.numerics import ContractError
from src.proposal_map import TemporalInterval

MAX_REDRAWS = 100


@dataclass
class GroundingSample:
    video: ClipFeatureSequence
    query: TokenSequence
    gt: TemporalInterval
    concept: int | None = None

    def to_record(self) -> dict:
        return {
            "video": self.video.features.tolist(),
            "tokens": list(self.query.tokens),
            "gt": self.gt.as_list(),
            "concept": self.concept,
        }

    @classmethod
    def from_record(cls, record: dict) -> "GroundingSample":
        return cls(
            video=ClipFeatureSequence(np.asarray(record["video"], dtype=np.float64)),
            query=TokenSequence([int(t) for t in record["tokens"]]),
            gt=TemporalInterval(*record["gt"]),
            concept=record.get("concept"),
        )


@dataclass(frozen=True)
class IntervalComponent:
    center: float
    width: float
    jitter: float = 0.0
    weight: float = 1.0


@dataclass
class ScenarioSpec:
    name: str = "train"
    n_concepts: int = 20
    zipf_exponent: float = 1.0
    interval_prior: list[IntervalComponent] = field(default_factory=lambda: [IntervalComponent(0.5, 0.5)])
    bias_strength: float = 0.9
    concept_interval_map: list[int] = field(default_factory=list)
    noise_sigma: float = 0.5
    n_clips: int = 16
    dim: int = 32
    vocab_size: int = 64
    n_distractor_tokens: int = 2
    n_background_events: int = 0
    signature_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        self.interval_prior = [
            c if isinstance(c, IntervalComponent) else IntervalComponent(**c) for c in self.interval_prior
        ]
        if not self.concept_interval_map and self.interval_prior:
            self.concept_interval_map = [c % len(self.interval_prior) for c in range(self.n_concepts)]
        self.validate()

    def validate(self) -> None:
        if self.n_concepts < 1:
            raise ContractError("n_concepts must be >= 1")
        if self.zipf_exponent < 0:
            raise ContractError("zipf_exponent must be >= 0")
        if not self.interval_prior:
            raise ContractError("interval_prior needs at least one component")
        if any(c.weight <= 0 for c in self.interval_prior):
            raise ContractError("interval prior weights must be positive")
        if any(not (0.0 < c.width <= 1.0) or c.jitter < 0 for c in self.interval_prior):
            raise ContractError("interval components need 0 < width <= 1 and jitter >= 0")
        if not (0.0 <= self.bias_strength <= 1.0):
            raise ContractError(f"bias_strength must lie in [0, 1], got {self.bias_strength}")
        if len(self.concept_interval_map) != self.n_concepts:
            raise ContractError("concept_interval_map needs one entry per concept")
        if any(not (0 <= k < len(self.interval_prior)) for k in self.concept_interval_map):
            raise ContractError("concept_interval_map refers to a missing prior component")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be >= 0")
        if self.n_clips < 1 or self.dim < 1:
            raise ContractError("n_clips and dim must be positive")
        if self.vocab_size < self.n_concepts + 1 + (1 if self.n_distractor_tokens else 0):
            raise ContractError("vocab_size too small for the null token, concept tokens and distractors")
        if self.n_distractor_tokens < 0 or self.n_background_events < 0:
            raise ContractError("token and event counts must be >= 0")

    @property
    def prior_weights(self) -> np.ndarray:
        w = np.array([c.weight for c in self.interval_prior])
        return w / w.sum()

    @property
    def concept_probs(self) -> np.ndarray:
        ranks = np.arange(1, self.n_concepts + 1, dtype=np.float64)
        p = ranks ** (-self.zipf_exponent)
        return p / p.sum()

    def concept_token(self, concept: int) -> int:
        return NULL_TOKEN + 1 + concept

    @property
    def distractor_tokens(self) -> np.ndarray:
        return np.arange(self.n_concepts + 1, self.vocab_size)


def concept_signatures(spec: ScenarioSpec) -> np.ndarray:
    """One fixed random unit vector per concept, shape (n_concepts, dim)."""
    rng = np.random.default_rng(spec.signature_seed)
    sig = rng.standard_normal((spec.n_concepts, spec.dim))
    return sig / np.linalg.norm(sig, axis=1, keepdims=True)


def _sample_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


def draw_interval(spec: ScenarioSpec, component: int, rng: np.random.Generator) -> TemporalInterval:
    """Jittered component interval, clamped to [0, 1]; too-short draws are redrawn."""
    comp = spec.interval_prior[component]
    min_width = 1.0 / spec.n_clips
    for _ in range(MAX_REDRAWS):
        center = comp.center + comp.jitter * rng.standard_normal()
        width = comp.width + comp.jitter * rng.standard_normal()
        start = float(np.clip(center - width / 2, 0.0, 1.0))
        end = float(np.clip(center + width / 2, 0.0, 1.0))
        if end - start >= min_width:
            return TemporalInterval(start, end)
    # fall back to the un-jittered component, widened to one clip
    half = max(comp.width, min_width) / 2
    start = float(np.clip(comp.center - half, 0.0, 1.0 - min_width))
    return TemporalInterval(start, min(1.0, max(start + 2 * half, start + min_width)))


def _clips_inside(interval: TemporalInterval, n_clips: int) -> np.ndarray:
    centers = (np.arange(n_clips) + 0.5) / n_clips
    return (centers >= interval.start) & (centers <= interval.end)


def generate_sample(spec: ScenarioSpec, index: int, stream: int = 0,
                    signatures: np.ndarray | None = None) -> GroundingSample:
    """Sample `index` of `spec`, drawn from its own derived seed."""
    if signatures is None:
        signatures = concept_signatures(spec)
    rng = _sample_rng(spec.seed, stream, index)
    n_comp = len(spec.interval_prior)

    concept = int(rng.choice(spec.n_concepts, p=spec.concept_probs))
    if rng.random() < spec.bias_strength:
        component = spec.concept_interval_map[concept]
    else:
        component = int(rng.choice(n_comp, p=spec.prior_weights))
    gt = draw_interval(spec, component, rng)

    features = np.zeros((spec.n_clips, spec.dim))
    inside_gt = _clips_inside(gt, spec.n_clips)
    for _ in range(spec.n_background_events):
        if spec.n_concepts < 2:
            break
        other = int(rng.choice([c for c in range(spec.n_concepts) if c != concept]))
        event = draw_interval(spec, int(rng.choice(n_comp, p=spec.prior_weights)), rng)
        features[_clips_inside(event, spec.n_clips) & ~inside_gt] = signatures[other]
    features[inside_gt] = signatures[concept]
    if spec.noise_sigma > 0:
        features = features + spec.noise_sigma * rng.standard_normal(features.shape)

    tokens = [spec.concept_token(concept)]
    if spec.n_distractor_tokens:
        tokens += [int(t) for t in rng.choice(spec.distractor_tokens, size=spec.n_distractor_tokens)]

    return GroundingSample(ClipFeatureSequence(features), TokenSequence(tokens), gt, concept)


def generate(spec: ScenarioSpec, n: int, stream: int = 0) -> list[GroundingSample]:
    """n samples; sample i depends only on (spec, stream, i)."""
    if n < 1:
        raise ContractError(f"need n >= 1 samples, got {n}")
    spec.validate()
    signatures = concept_signatures(spec)
    return [generate_sample(spec, i, stream, signatures) for i in range(n)]


def cross_pair(spec_train: ScenarioSpec, spec_test: ScenarioSpec, n_train: int, n_test: int,
               n_intest: int) -> tuple[list[GroundingSample], list[GroundingSample], list[GroundingSample]]:
    """(train, cross-test, in-scenario test); train and in-test use disjoint seed streams."""
    for attr in ("n_clips", "dim", "vocab_size", "n_concepts", "signature_seed"):
        if getattr(spec_train, attr) != getattr(spec_test, attr):
            raise ContractError(f"scenarios disagree on {attr}")
    train = generate(spec_train, n_train, stream=0)
    in_test = generate(spec_train, n_intest, stream=1)
    cross_test = generate(spec_test, n_test, stream=2)
    return train, cross_test, in_test


# ---------------------------------------------------------------------------
# Bias analysis
# ---------------------------------------------------------------------------

@dataclass
class BiasReport:
    concept_freq: pd.Series
    interval_hist: np.ndarray
    top_concepts: pd.DataFrame
    top_intervals: pd.DataFrame
    overlap: float | None = None
    concept_overlap: float | None = None
    independence_pvalue: float | None = None
    grid_size: int = 10
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "grid_size": self.grid_size,
            "concept_freq": {int(k): int(v) for k, v in self.concept_freq.items()},
            "interval_hist": self.interval_hist.astype(int).tolist(),
            "top_concepts": self.top_concepts.to_dict("records"),
            "top_intervals": self.top_intervals.to_dict("records"),
            "overlap": self.overlap,
            "concept_overlap": self.concept_overlap,
            "independence_pvalue": self.independence_pvalue,
        }


def sample_concept(sample: GroundingSample) -> int:
    """Generator metadata when present, otherwise the first query token."""
    return sample.concept if sample.concept is not None else sample.query.tokens[0]


def interval_bin(gt: TemporalInterval, grid_size: int) -> tuple[int, int]:
    i = min(int(np.floor(gt.start * grid_size)), grid_size - 1)
    j = min(int(np.ceil(gt.end * grid_size)) - 1, grid_size - 1)
    return i, max(i, j)


def interval_histogram(ds: list[GroundingSample], grid_size: int) -> np.ndarray:
    hist = np.zeros((grid_size, grid_size))
    for sample in ds:
        hist[interval_bin(sample.gt, grid_size)] += 1
    return hist


def histogram_intersection(h1: np.ndarray, h2: np.ndarray) -> float:
    """Sum of elementwise minima of the two normalized histograms."""
    t1, t2 = h1.sum(), h2.sum()
    if t1 == 0 or t2 == 0:
        return 0.0
    return float(np.minimum(h1 / t1, h2 / t2).sum())


def _per_concept_histograms(ds: list[GroundingSample], grid_size: int) -> dict[int, np.ndarray]:
    hists: dict[int, np.ndarray] = {}
    for sample in ds:
        c = sample_concept(sample)
        hists.setdefault(c, np.zeros((grid_size, grid_size)))[interval_bin(sample.gt, grid_size)] += 1
    return hists


def concept_conditioned_overlap(ds: list[GroundingSample], other: list[GroundingSample], grid_size: int) -> float:
    """Mass-weighted mean over shared concepts of the per-concept interval overlap."""
    mine = _per_concept_histograms(ds, grid_size)
    theirs = _per_concept_histograms(other, grid_size)
    shared = sorted(set(mine) & set(theirs))
    if not shared:
        return 0.0
    mass = np.array([mine[c].sum() for c in shared])
    overlaps = np.array([histogram_intersection(mine[c], theirs[c]) for c in shared])
    return float((mass * overlaps).sum() / mass.sum())


def independence_test(ds: list[GroundingSample], grid_size: int) -> float | None:
    """p-value of a chi-squared test that concept and interval bin are independent."""
    cells = [(sample_concept(s), interval_bin(s.gt, grid_size)) for s in ds]
    table = pd.crosstab(pd.Series([c for c, _ in cells]), pd.Series([str(b) for _, b in cells]))
    if table.shape[0] < 2 or table.shape[1] < 2:
        return None
    _, pvalue, _, _ = stats.chi2_contingency(table.to_numpy())
    return float(pvalue)


def bias_report(ds: list[GroundingSample], other: list[GroundingSample] | None = None,
                grid_size: int = 10, top_k: int = 10) -> BiasReport:
    if grid_size < 2:
        raise ContractError(f"grid size must be >= 2, got {grid_size}")

    counts = Counter(sample_concept(s) for s in ds)
    concept_freq = pd.Series(dict(sorted(counts.items())), dtype=int)
    top_concepts = pd.DataFrame(counts.most_common(top_k), columns=["concept", "count"])

    hist = interval_histogram(ds, grid_size)
    rows = [
        {"start_bin": i, "end_bin": j, "count": int(hist[i, j])}
        for i in range(grid_size) for j in range(i, grid_size) if hist[i, j] > 0
    ]
    top_intervals = (
        pd.DataFrame(rows, columns=["start_bin", "end_bin", "count"])
        .sort_values(["count", "start_bin", "end_bin"], ascending=[False, True, True], kind="mergesort")
        .head(top_k)
        .reset_index(drop=True)
    )

    report = BiasReport(
        concept_freq=concept_freq,
        interval_hist=hist,
        top_concepts=top_concepts,
        top_intervals=top_intervals,
        grid_size=grid_size,
        n_samples=len(ds),
        independence_pvalue=independence_test(ds, grid_size),
    )
    if other is not None:
        report.overlap = histogram_intersection(hist, interval_histogram(other, grid_size))
        report.concept_overlap = concept_conditioned_overlap(ds, other, grid_size)
    return report


def rank_frequency_slope(concept_freq: pd.Series) -> float:
    """Least-squares slope of log(frequency) against log(rank)."""
    freq = np.sort(concept_freq[concept_freq > 0].to_numpy())[::-1]
    ranks = np.arange(1, freq.size + 1)
    slope, _ = np.polyfit(np.log(ranks), np.log(freq), 1)
    return float(slope)


def with_seed(spec: ScenarioSpec, seed: int) -> ScenarioSpec:
    return replace(spec, seed=seed)
