"""Small trainable vision-transformer encoder.

Each modality image batch is mapped to N_p patch tokens plus one class
token. Three modality streams either share one encoder or carry separate
weights (EncoderConfig.share_across_modalities).
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import MODALITIES, EncoderConfig
from .errors import InputError


@dataclass
class TokenSet:
    """Per-modality encoder output for a batch: (B, N_p, C) patches + (B, C) class token."""

    patch_tokens: torch.Tensor
    class_token: torch.Tensor
    modality_tag: str

    @property
    def num_patches(self):
        return self.patch_tokens.shape[-2]


def init_transformer_weights(module):
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, mean=0.0, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Conv2d):
        nn.init.trunc_normal_(module.weight, mean=0.0, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class EncoderBlock(nn.Module):
    """Pre-LN transformer block: self-attention + MLP, both residual."""

    def __init__(self, dim, num_heads, mlp_ratio=4.0):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def _attend(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * self.head_dim**-0.5
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)

    def forward(self, x):
        x = x + self._attend(self.norm1(x))
        x = x + self.fc2(self.act(self.fc1(self.norm2(x))))
        return x


class VisionEncoder(nn.Module):
    """ViT-style encoder emitting (patch_tokens, class_token)."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        c = config.embed_dim
        self.patch_embed = nn.Conv2d(3, c, kernel_size=config.patch_size, stride=config.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, c))
        self.pos_embed = nn.Parameter(torch.zeros(1, config.num_patches + 1, c))
        self.blocks = nn.ModuleList(
            [EncoderBlock(c, config.num_heads) for _ in range(config.depth)]
        )
        self.norm = nn.LayerNorm(c)
        self.apply(init_transformer_weights)
        nn.init.trunc_normal_(self.cls_token, mean=0.0, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, mean=0.0, std=0.02)

    def forward(self, images):
        cfg = self.config
        if images.ndim != 4 or images.shape[1] != 3:
            raise InputError(f"expected images of shape (B, 3, H, W), got {tuple(images.shape)}")
        if images.shape[2] != cfg.image_height or images.shape[3] != cfg.image_width:
            raise InputError(
                f"image size {images.shape[2]}x{images.shape[3]} does not match "
                f"configured {cfg.image_height}x{cfg.image_width}"
            )
        if not torch.isfinite(images).all():
            raise InputError("non-finite pixel values in encoder input")
        x = self.patch_embed(images)  # (B, C, H/ps, W/ps)
        x = x.flatten(2).transpose(1, 2)  # (B, N_p, C)
        cls = self.cls_token.expand(x.shape[0], -1, -1).to(x.dtype)
        x = torch.cat([cls, x], dim=1) + self.pos_embed.to(x.dtype)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x[:, 1:, :], x[:, 0, :]


class TriModalEncoder(nn.Module):
    """Three modality streams over one shared or three separate VisionEncoders."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        if config.share_across_modalities:
            self.shared = VisionEncoder(config)
        else:
            self.streams = nn.ModuleDict({m: VisionEncoder(config) for m in MODALITIES})

    def stream(self, modality) -> VisionEncoder:
        if modality not in MODALITIES:
            raise InputError(f"unknown modality {modality!r}")
        if self.config.share_across_modalities:
            return self.shared
        return self.streams[modality]

    def forward(self, images, modality) -> TokenSet:
        patch, cls = self.stream(modality)(images)
        return TokenSet(patch_tokens=patch, class_token=cls, modality_tag=modality)


def encode(images, encoder, modality="R") -> TokenSet:
    """Run one modality batch through its encoder stream."""
    if isinstance(encoder, TriModalEncoder):
        return encoder(images, modality)
    patch, cls = encoder(images)
    return TokenSet(patch_tokens=patch, class_token=cls, modality_tag=modality)
