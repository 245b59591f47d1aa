"""Patch-integrated feature extraction.

Pooled patch tokens are concatenated with the class token, layer-normalized,
projected from 2C down to C and passed through GELU, yielding one
multi-granularity feature per modality.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import POOLING_MODES
from .errors import ConfigurationError, InputError

GEM_CLAMP = 1e-6


@dataclass
class FusedFeature:
    """(B, C) fused feature for one modality."""

    values: torch.Tensor
    modality_tag: str


def pool_patches(patch_tokens, mode="average", p=3.0):
    """Pool (..., N_p, C) patch tokens down to (..., C).

    gem: (mean of clamp(|x|, 1e-6)^p)^(1/p); reduces to the mean at p=1 for
    inputs above the clamp.
    """
    if mode not in POOLING_MODES:
        raise ConfigurationError(f"unknown pooling mode {mode!r}")
    if patch_tokens.shape[-2] < 1:
        raise InputError("cannot pool an empty token set")
    if mode == "average":
        return patch_tokens.mean(dim=-2)
    if mode == "max":
        return patch_tokens.max(dim=-2).values
    if isinstance(p, torch.Tensor):
        p = p.clamp(min=GEM_CLAMP)
    elif p <= 0:
        raise ConfigurationError("gem_p must be positive")
    powed = patch_tokens.abs().clamp(min=GEM_CLAMP).pow(p)
    return powed.mean(dim=-2).pow(1.0 / p)


class Pife(nn.Module):
    """One modality's patch-integrated extractor: LN over 2C, 2C->C projection, GELU."""

    def __init__(self, embed_dim, pooling_mode="average", gem_p=3.0):
        super().__init__()
        if pooling_mode not in POOLING_MODES:
            raise ConfigurationError(f"unknown pooling mode {pooling_mode!r}")
        self.pooling_mode = pooling_mode
        self.embed_dim = embed_dim
        self.norm = nn.LayerNorm(2 * embed_dim)
        self.proj = nn.Linear(2 * embed_dim, embed_dim)
        self.act = nn.GELU()
        if pooling_mode == "gem":
            self.gem_p = nn.Parameter(torch.tensor(float(gem_p)))
        else:
            self.gem_p = None
        nn.init.trunc_normal_(self.proj.weight, std=0.02)
        nn.init.zeros_(self.proj.bias)

    def fuse(self, class_token, pooled):
        if class_token.shape[-1] != self.embed_dim or pooled.shape[-1] != self.embed_dim:
            raise ConfigurationError(
                f"fuse expects C={self.embed_dim} vectors, got "
                f"{class_token.shape[-1]} and {pooled.shape[-1]}"
            )
        joint = torch.cat([class_token, pooled], dim=-1)  # order: [class, pooled]
        return self.act(self.proj(self.norm(joint)))

    def forward(self, token_set) -> FusedFeature:
        pooled = pool_patches(
            token_set.patch_tokens,
            self.pooling_mode,
            self.gem_p if self.gem_p is not None else 3.0,
        )
        return FusedFeature(
            values=self.fuse(token_set.class_token, pooled),
            modality_tag=token_set.modality_tag,
        )
