"""Forward-only numeric reference for the fusion attention blocks.

Single-head, projection-free scaled dot-product attention (the one BEV
input projection aside), exposed so tests can pin down row normalization,
convexity, permutation invariance, and the residual injection identity.
All functions are pure and operate on 2-D float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "softmax_rows",
    "attention_weights",
    "cross_attention",
    "mv_qformer",
    "BevGrid",
    "inst_bev_qformer",
    "inject",
]


def _as_matrix(name: str, array: np.ndarray) -> np.ndarray:
    out = np.asarray(array, dtype=float)
    if out.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} must contain only finite entries")
    return out


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for numeric stability."""
    logits = _as_matrix("logits", logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def attention_weights(queries: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention weights, one distribution per query row."""
    queries = _as_matrix("queries", queries)
    keys = _as_matrix("keys", keys)
    if queries.shape[1] != keys.shape[1]:
        raise ValueError(
            f"queries have dim {queries.shape[1]} but keys have dim {keys.shape[1]}"
        )
    if keys.shape[0] < 1:
        raise ValueError("attention needs at least one key")
    scale = 1.0 / np.sqrt(queries.shape[1])
    return softmax_rows(queries @ keys.T * scale)


def cross_attention(
    queries: np.ndarray, keys: np.ndarray, values: np.ndarray
) -> np.ndarray:
    """softmax(Q Kᵀ / √d) V for one attention head without projections."""
    values = _as_matrix("values", values)
    weights = attention_weights(queries, keys)
    if values.shape[0] != weights.shape[1]:
        raise ValueError(
            f"got {weights.shape[1]} keys but {values.shape[0]} value rows"
        )
    return weights @ values


def mv_qformer(mv_queries: np.ndarray, mv_tokens: np.ndarray) -> np.ndarray:
    """Compress multi-view tokens into the query slots by cross-attention."""
    return cross_attention(mv_queries, mv_tokens, mv_tokens)


@dataclass(frozen=True)
class BevGrid:
    """Top-down feature grid; cells are opaque feature vectors."""

    width: int
    height: int
    dim: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("grid width and height must be at least 1")
        if self.dim < 1:
            raise ValueError("grid feature dim must be at least 1")
        data = np.asarray(self.data, dtype=float)
        if data.shape != (self.width, self.height, self.dim):
            raise ValueError(
                f"grid data has shape {data.shape}, expected "
                f"({self.width}, {self.height}, {self.dim})"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("grid data must contain only finite entries")
        object.__setattr__(self, "data", data)

    def flattened(self) -> np.ndarray:
        """Cells unrolled row-major into a (width*height, dim) matrix."""
        return self.data.reshape(self.width * self.height, self.dim)


def inst_bev_qformer(
    bev_queries: np.ndarray,
    inst_tokens: np.ndarray,
    bev: BevGrid,
    projection: np.ndarray,
) -> np.ndarray:
    """Attend grid cells with the learned queries and instruction tokens.

    The grid is flattened, linearly projected into the query feature
    space, and used as both keys and values; the stacked queries keep
    their order, so the output has one row per query then per token.
    """
    bev_queries = _as_matrix("bev_queries", bev_queries)
    inst_tokens = _as_matrix("inst_tokens", inst_tokens)
    projection = _as_matrix("projection", projection)
    if bev_queries.shape[1] != inst_tokens.shape[1]:
        raise ValueError(
            f"bev_queries dim {bev_queries.shape[1]} differs from "
            f"inst_tokens dim {inst_tokens.shape[1]}"
        )
    if projection.shape[0] != bev.dim:
        raise ValueError(
            f"projection expects {projection.shape[0]} input features "
            f"but the grid provides {bev.dim}"
        )
    if projection.shape[1] != bev_queries.shape[1]:
        raise ValueError(
            f"projection maps to dim {projection.shape[1]} but queries "
            f"have dim {bev_queries.shape[1]}"
        )
    keys = bev.flattened() @ projection
    queries = np.vstack([bev_queries, inst_tokens])
    return cross_attention(queries, keys, keys)


def inject(mv_tokens: np.ndarray, inst_bev_tokens: np.ndarray) -> np.ndarray:
    """Residual fusion: tokens plus what they attend to in the other stream."""
    mv_tokens = _as_matrix("mv_tokens", mv_tokens)
    return mv_tokens + cross_attention(mv_tokens, inst_bev_tokens, inst_bev_tokens)
