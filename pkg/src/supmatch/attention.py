"""Permutation-invariant bag pooling via attention.

Both mechanisms produce convex weights over the bag dimension; the pooled
representation is the weighted average of the element embeddings, which is
invariant to permutation and to duplication of the whole bag.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class GatedAttention(nn.Module):
    """Gated attention scoring: w^T (tanh(V e) * sigmoid(U e))."""

    def __init__(self, in_dim: int, embed_dim: int):
        super().__init__()
        self.value_proj = nn.Linear(in_dim, embed_dim)
        self.gate_proj = nn.Linear(in_dim, embed_dim)
        self.score = nn.Linear(embed_dim, 1)

    def forward(self, bag: torch.Tensor) -> torch.Tensor:
        # bag: (..., n, d) -> weights (..., n) summing to 1 over n
        gated = torch.tanh(self.value_proj(bag)) * torch.sigmoid(self.gate_proj(bag))
        scores = self.score(gated).squeeze(-1)
        return F.softmax(scores, dim=-1)


class ScaledDotProductAttention(nn.Module):
    """Single-query attention with the query set to the bag mean."""

    def __init__(self, in_dim: int):
        super().__init__()
        self.scale = 1.0 / math.sqrt(in_dim)

    def forward(self, bag: torch.Tensor) -> torch.Tensor:
        query = bag.mean(dim=-2, keepdim=True)
        scores = (bag * query).sum(dim=-1) * self.scale
        return F.softmax(scores, dim=-1)


ATTENTION_KINDS = ("gated", "scaled_dot_product")


def make_attention(kind: str, in_dim: int, embed_dim: int) -> nn.Module:
    if kind == "gated":
        return GatedAttention(in_dim, embed_dim)
    if kind == "scaled_dot_product":
        return ScaledDotProductAttention(in_dim)
    raise ValueError(f"unknown attention kind {kind!r}; expected one of {ATTENTION_KINDS}")


def attention_pool(weights: torch.Tensor, bag: torch.Tensor) -> torch.Tensor:
    """Weighted average over the bag dimension."""
    return (weights.unsqueeze(-1) * bag).sum(dim=-2)
