"""Video and query encoders producing the proposal feature map and the sentence feature."""

from dataclasses import dataclass

import numpy as np

from src.numerics import ContractError, ParamStore, affine, affine_backward, as_matrix
from src.proposal_map import ProposalGrid, bm_matrix

NULL_TOKEN = 0


@dataclass(frozen=True)
class ModelConfig:
    n_clips: int = 16
    dim_v: int = 32
    dim_s: int = 32
    vocab_size: int = 64
    bm_samples: int = 8
    location_bias: bool = True

    def __post_init__(self):
        if self.n_clips < 1 or self.dim_v < 1 or self.dim_s < 1:
            raise ContractError("n_clips, dim_v and dim_s must be positive")
        if self.vocab_size < 2:
            raise ContractError("vocab_size must leave room for the null token")
        if self.bm_samples < 1:
            raise ContractError("bm_samples must be >= 1")

    @property
    def grid(self) -> ProposalGrid:
        return ProposalGrid(self.n_clips)


@dataclass
class ClipFeatureSequence:
    features: np.ndarray

    def __post_init__(self):
        self.features = as_matrix(self.features, "clip features")

    @property
    def n_clips(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class TokenSequence:
    tokens: list[int]

    def __post_init__(self):
        self.tokens = [int(t) for t in self.tokens]
        if not self.tokens:
            raise ContractError("query has no tokens")
        if min(self.tokens) < 0:
            raise ContractError(f"token ids must be >= 0, got {min(self.tokens)}")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class ProposalFeatureMap:
    grid: ProposalGrid
    features: np.ndarray  # (|C|, d_v)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization of every parameter.

    The embedding table is a lookup of one-hot rows, so its fan-in is 1. The
    null token row and the per-cell head biases start at zero.
    """
    rng = np.random.default_rng(seed)
    dv, ds = cfg.dim_v, cfg.dim_s
    embed = _uniform(rng, 1, (cfg.vocab_size, ds))
    embed[NULL_TOKEN] = 0.0

    params = ParamStore()
    params.add("video.proj.W", _uniform(rng, dv, (dv, dv)))
    params.add("video.proj.b", _uniform(rng, dv, (dv,)))
    params.add("query.embed", embed)
    params.add("query.proj.W", _uniform(rng, ds, (ds, ds)))
    params.add("query.proj.b", _uniform(rng, ds, (ds,)))
    params.add("visual_head.W", _uniform(rng, dv, (dv, 1)))
    params.add("visual_head.b", _uniform(rng, dv, (1,)))
    if cfg.location_bias:
        params.add("visual_head.cell_bias", np.zeros(cfg.grid.size))
    params.add("fusion_head.W", _uniform(rng, dv, (dv, 1)))
    params.add("fusion_head.b", _uniform(rng, dv, (1,)))
    if cfg.location_bias:
        params.add("fusion_head.cell_bias", np.zeros(cfg.grid.size))
    return params


# ---------------------------------------------------------------------------
# Video side
# ---------------------------------------------------------------------------

def pool_proposals(clips: ClipFeatureSequence, n_samples: int) -> np.ndarray:
    """bm_pool of every grid cell, shape (|C|, d_v). Parameter free, so cacheable per video."""
    grid = ProposalGrid(clips.n_clips)
    return bm_matrix(grid, n_samples) @ clips.features


def encode_pooled(pooled: np.ndarray, params: ParamStore) -> np.ndarray:
    W, b = params["video.proj.W"], params["video.proj.b"]
    if pooled.shape[1] != W.shape[0]:
        raise ContractError(f"clip dim {pooled.shape[1]} does not match encoder dim {W.shape[0]}")
    return affine(pooled, W, b)


def encode_pooled_backward(d_feats: np.ndarray, pooled: np.ndarray, params: ParamStore, grads: ParamStore) -> None:
    _, dW, db = affine_backward(d_feats, pooled, params["video.proj.W"])
    grads["video.proj.W"] = grads["video.proj.W"] + dW
    grads["video.proj.b"] = grads["video.proj.b"] + db


def encode_proposals(clips: ClipFeatureSequence, n_samples: int, params: ParamStore) -> ProposalFeatureMap:
    """f_ab = affine(bm_pool(clips, a, b, S)) for every cell."""
    pooled = pool_proposals(clips, n_samples)
    return ProposalFeatureMap(ProposalGrid(clips.n_clips), encode_pooled(pooled, params))


# ---------------------------------------------------------------------------
# Query side
# ---------------------------------------------------------------------------

def mask_query(tokens: TokenSequence) -> TokenSequence:
    return TokenSequence([NULL_TOKEN])


def _check_tokens(tokens: TokenSequence, vocab_size: int) -> np.ndarray:
    ids = np.asarray(tokens.tokens, dtype=int)
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise ContractError(f"token ids must lie in [0, {vocab_size}), got {ids.min()}..{ids.max()}")
    return ids


def encode_query(tokens: TokenSequence, params: ParamStore) -> np.ndarray:
    """Mean of token embeddings followed by an affine layer; the null token embeds to zero."""
    embed = params["query.embed"]
    ids = _check_tokens(tokens, embed.shape[0])
    rows = np.where((ids == NULL_TOKEN)[:, None], 0.0, embed[ids])
    mean = rows.mean(axis=0, keepdims=True)
    return affine(mean, params["query.proj.W"], params["query.proj.b"])[0]


def encode_query_backward(dq: np.ndarray, tokens: TokenSequence, params: ParamStore, grads: ParamStore) -> None:
    embed = params["query.embed"]
    ids = _check_tokens(tokens, embed.shape[0])
    rows = np.where((ids == NULL_TOKEN)[:, None], 0.0, embed[ids])
    mean = rows.mean(axis=0, keepdims=True)

    d_mean, dW, db = affine_backward(dq.reshape(1, -1), mean, params["query.proj.W"])
    grads["query.proj.W"] = grads["query.proj.W"] + dW
    grads["query.proj.b"] = grads["query.proj.b"] + db

    d_embed = np.zeros_like(embed)
    np.add.at(d_embed, ids, np.repeat(d_mean / ids.size, ids.size, axis=0))
    d_embed[NULL_TOKEN] = 0.0
    grads["query.embed"] = grads["query.embed"] + d_embed
