"""Multi-head self-attention and the pre-norm transformer encoder."""

from __future__ import annotations

import torch
import torch.nn as nn


class MultiHeadSelfAttention(nn.Module):
    """softmax(QK^T / sqrt(d_k)) V per head, heads concatenated and projected.

    Projections carry no bias, so zeroing the Q/K weights yields exactly
    uniform attention.  Accepts [N, d] or [B, N, d].
    """

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads:
            raise ValueError(f"dim {dim} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.scale = self.head_dim**-0.5
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim, bias=False)

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        b, n, d = x.shape
        q, k, v = self.to_q(x), self.to_k(x), self.to_v(x)
        q = q.view(b, n, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, n, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, n, self.n_heads, self.head_dim).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-1, -2) * self.scale, dim=-1)  # [b, h, n, n]
        y = (attn @ v).transpose(1, 2).reshape(b, n, d)
        y = self.to_out(y)
        if squeeze:
            y, attn = y.squeeze(0), attn.squeeze(0)
        return (y, attn) if return_attention else y


class EncoderBlock(nn.Module):
    """Pre-norm block: x + MHSA(LN(x)), then + MLP(LN(.)) with GELU."""

    def __init__(self, dim: int, n_heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim),
            nn.GELU(),
            nn.Linear(mlp_ratio * dim, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TransformerEncoder(nn.Module):
    """A stack of encoder blocks; positional embedding is added once at input."""

    def __init__(self, dim: int, n_heads: int, n_layers: int):
        super().__init__()
        self.blocks = nn.ModuleList(EncoderBlock(dim, n_heads) for _ in range(n_layers))

    def forward(self, x: torch.Tensor, pos: torch.Tensor | None = None) -> torch.Tensor:
        if pos is not None:
            x = x + pos
        for block in self.blocks:
            x = block(x)
        return x
