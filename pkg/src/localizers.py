"""Visual (video-only) and visual-semantic localizer heads."""

import numpy as np

from src.encoders import ProposalFeatureMap
from src.numerics import ContractError, ParamStore, affine, affine_backward, sigmoid, sigmoid_backward
from src.proposal_map import ScoreMap

FUSE_EPS = 1e-8


def _with_cell_bias(logits: np.ndarray, params: ParamStore, head: str) -> np.ndarray:
    name = f"{head}.cell_bias"
    if name not in params:
        return logits
    bias = params[name]
    if bias.shape != logits.shape:
        raise ContractError(f"{name} covers {bias.size} cells, score map has {logits.size}")
    return logits + bias


def fuse(f_v: np.ndarray, f_s: np.ndarray, eps: float = FUSE_EPS) -> np.ndarray:
    """Hadamard product then L2 normalization; works row-wise when f_v is a matrix."""
    f_v = np.asarray(f_v, dtype=np.float64)
    f_s = np.asarray(f_s, dtype=np.float64)
    if f_v.shape[-1] != f_s.shape[-1]:
        raise ContractError(f"fuse: video dim {f_v.shape[-1]} != query dim {f_s.shape[-1]}")
    m_hat = f_v * f_s
    norm = np.linalg.norm(m_hat, axis=-1, keepdims=True)
    return m_hat / np.maximum(norm, eps)


def fuse_backward(dm: np.ndarray, f_v: np.ndarray, f_s: np.ndarray, eps: float = FUSE_EPS):
    """Returns (d f_v, d f_s) for row-wise fuse with f_v of shape (n, d) and f_s of shape (d,)."""
    m_hat = f_v * f_s
    norm = np.linalg.norm(m_hat, axis=1, keepdims=True)
    scaled = norm > eps
    m = m_hat / np.maximum(norm, eps)
    # d(x/|x|) = (I - m m^T) / |x|; below eps the denominator is constant
    proj = dm - m * np.sum(m * dm, axis=1, keepdims=True)
    d_m_hat = np.where(scaled, proj / np.maximum(norm, eps), dm / eps)
    return d_m_hat * f_s, np.sum(d_m_hat * f_v, axis=0)


def visual_logits(feats: np.ndarray, params: ParamStore) -> np.ndarray:
    """Per-cell logits of the video-only head, location bias included."""
    logits = affine(feats, params["visual_head.W"], params["visual_head.b"])[:, 0]
    return _with_cell_bias(logits, params, "visual_head")


def visual_score_map(feats: ProposalFeatureMap, params: ParamStore) -> ScoreMap:
    """p'_ab = sigmoid(FC(f_ab) + beta'_ab), the video-only bias probe."""
    return ScoreMap(feats.grid, sigmoid(visual_logits(feats.features, params)))


def visual_backward(dp: np.ndarray, p: np.ndarray, feats: np.ndarray, params: ParamStore, grads: ParamStore) -> np.ndarray:
    """Backprop dL/dp' into the visual head; returns dL/d feats."""
    dz = sigmoid_backward(dp, p).reshape(-1, 1)
    d_feats, dW, db = affine_backward(dz, feats, params["visual_head.W"])
    grads["visual_head.W"] = grads["visual_head.W"] + dW
    grads["visual_head.b"] = grads["visual_head.b"] + db
    if "visual_head.cell_bias" in params:
        grads["visual_head.cell_bias"] = grads["visual_head.cell_bias"] + dz[:, 0]
    return d_feats


def vs_scores(feats: np.ndarray, q: np.ndarray, params: ParamStore) -> tuple[np.ndarray, np.ndarray]:
    """Returns (scores, fused features) so the backward pass can reuse the fusion."""
    if feats.shape[1] != q.shape[0]:
        raise ContractError(f"visual-semantic head needs d_v == d_s, got {feats.shape[1]} and {q.shape[0]}")
    fused = fuse(feats, q)
    logits = affine(fused, params["fusion_head.W"], params["fusion_head.b"])[:, 0]
    logits = _with_cell_bias(logits, params, "fusion_head")
    return sigmoid(logits), fused


def vs_score_map(feats: ProposalFeatureMap, q: np.ndarray, params: ParamStore) -> ScoreMap:
    """p_ab = sigmoid(FC(normalize(f_ab * f_S)) + beta_ab)."""
    scores, _ = vs_scores(feats.features, np.asarray(q, dtype=np.float64), params)
    return ScoreMap(feats.grid, scores)


def vs_backward(dp: np.ndarray, p: np.ndarray, fused: np.ndarray, feats: np.ndarray, q: np.ndarray,
                params: ParamStore, grads: ParamStore) -> tuple[np.ndarray, np.ndarray]:
    """Backprop dL/dp into the fusion head; returns (dL/d feats, dL/dq)."""
    dz = sigmoid_backward(dp, p).reshape(-1, 1)
    d_fused, dW, db = affine_backward(dz, fused, params["fusion_head.W"])
    grads["fusion_head.W"] = grads["fusion_head.W"] + dW
    grads["fusion_head.b"] = grads["fusion_head.b"] + db
    if "fusion_head.cell_bias" in params:
        grads["fusion_head.cell_bias"] = grads["fusion_head.cell_bias"] + dz[:, 0]
    return fuse_backward(d_fused, feats, q)


def argmax_cell(score_map: ScoreMap) -> tuple[int, int]:
    """Highest-scoring cell; np.argmax returns the first maximum, i.e. the smallest grid index."""
    if score_map.scores.size == 0:
        raise ContractError("argmax of an empty score map")
    return score_map.grid.cells[int(np.argmax(score_map.scores))]
