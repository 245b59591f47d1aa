"""Hierarchical decoupling of multi-modal features.

Seven learnable query tokens cross-attend to modality token pools:
three unimodal-specific queries (keys = one modality), three
bimodal-shared queries (keys = two modalities) and one trimodal-shared
query (keys = all three). Keys concatenate the fused feature and the
patch tokens of each constituent modality.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import DECOUPLED_SLOTS, MODALITIES, NUM_SLOTS
from .errors import ConfigurationError, InputError, StateError


@dataclass
class DecoupledSet:
    """(B, 7, C) decoupled features in canonical slot order R,N,T,RN,NT,TR,RNT."""

    values: torch.Tensor

    def __post_init__(self):
        if self.values.shape[-2] != NUM_SLOTS:
            raise InputError(f"decoupled set must have {NUM_SLOTS} slots, got {self.values.shape[-2]}")

    def slot(self, name):
        return self.values[..., DECOUPLED_SLOTS.index(name), :]

    @property
    def embed_dim(self):
        return self.values.shape[-1]


def slot_modalities(slot: str):
    """Constituent modalities of a decoupled slot, in key order (RN -> R, N)."""
    if slot not in DECOUPLED_SLOTS:
        raise InputError(f"unknown decoupled slot {slot!r}")
    return tuple(slot)


def _check_tags(slot, fused_by_mod, tokens_by_mod):
    for m in slot_modalities(slot):
        if m not in fused_by_mod or m not in tokens_by_mod:
            raise InputError(f"slot {slot} needs modality {m}, which is absent")
        if fused_by_mod[m].modality_tag != m or tokens_by_mod[m].modality_tag != m:
            raise InputError(
                f"modality tag mismatch for {m}: fused={fused_by_mod[m].modality_tag}, "
                f"tokens={tokens_by_mod[m].modality_tag}"
            )


def build_keys(slot, fused_by_mod, tokens_by_mod, include_fused=True):
    """Key matrix for one slot: per modality [fused, patches], concatenated in slot order.

    Row counts: N_p+1 (unimodal), 2N_p+2 (bimodal), 3N_p+3 (trimodal); one
    fewer fused row per modality when include_fused is False.
    """
    _check_tags(slot, fused_by_mod, tokens_by_mod)
    parts = []
    for m in slot_modalities(slot):
        if include_fused:
            parts.append(fused_by_mod[m].values.unsqueeze(-2))
        parts.append(tokens_by_mod[m].patch_tokens)
    return torch.cat(parts, dim=-2)


def build_keys_unimodal(fused, tokens):
    """(N_p+1) x C keys for one modality: fused feature first, then patch tokens."""
    m = fused.modality_tag
    if m not in MODALITIES:
        raise InputError(f"unknown modality {m!r}")
    return build_keys(m, {m: fused}, {m: tokens})


def build_keys_bimodal(pair, fused_by_mod, tokens_by_mod):
    """(2N_p+2) x C keys for a modality pair in {RN, NT, TR}."""
    if pair not in ("RN", "NT", "TR"):
        raise InputError(f"unknown modality pair {pair!r}")
    return build_keys(pair, fused_by_mod, tokens_by_mod)


def build_keys_trimodal(fused_by_mod, tokens_by_mod):
    """(3N_p+3) x C keys over all three modalities in order R, N, T."""
    return build_keys("RNT", fused_by_mod, tokens_by_mod)


class CrossAttention(nn.Module):
    """Multi-head cross-attention of a single query vector over a key set."""

    def __init__(self, dim, num_heads):
        super().__init__()
        if dim % num_heads:
            raise ConfigurationError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        for lin in (self.q_proj, self.k_proj, self.v_proj, self.out_proj):
            nn.init.trunc_normal_(lin.weight, std=0.02)
            nn.init.zeros_(lin.bias)

    def forward(self, query, keys, return_attention=False):
        """query: (C,) or (B, C); keys: (B, K, C). Returns (B, C) [, (B, H, K)]."""
        if keys.ndim != 3 or keys.shape[-2] < 1:
            raise InputError("keys must be a non-empty (B, K, C) tensor")
        b, k, _ = keys.shape
        if query.ndim == 1:
            query = query.unsqueeze(0).expand(b, -1)
        q = self.q_proj(query).view(b, self.num_heads, self.head_dim)
        kk = self.k_proj(keys).view(b, k, self.num_heads, self.head_dim).transpose(1, 2)
        vv = self.v_proj(keys).view(b, k, self.num_heads, self.head_dim).transpose(1, 2)
        logits = torch.einsum("bhc,bhkc->bhk", q, kk) / math.sqrt(self.head_dim)
        attn = logits.softmax(dim=-1)
        mixed = torch.einsum("bhk,bhkc->bhc", attn, vv).reshape(b, self.dim)
        out = self.out_proj(mixed)
        if return_attention:
            return out, attn
        return out


class CrossAttentionBlock(nn.Module):
    """Full transformer block around the cross-attention (interaction ablation D)."""

    def __init__(self, dim, num_heads, mlp_ratio=4.0):
        super().__init__()
        self.attn = CrossAttention(dim, num_heads)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)
        for lin in (self.fc1, self.fc2):
            nn.init.trunc_normal_(lin.weight, std=0.02)
            nn.init.zeros_(lin.bias)

    def forward(self, query, keys, return_attention=False):
        if query.ndim == 1:
            query = query.unsqueeze(0).expand(keys.shape[0], -1)
        if return_attention:
            attended, attn = self.attn(query, keys, return_attention=True)
        else:
            attended, attn = self.attn(query, keys), None
        x = self.norm1(query + attended)
        x = self.norm2(x + self.fc2(self.act(self.fc1(x))))
        if return_attention:
            return x, attn
        return x


class HierarchicalDecoupler(nn.Module):
    """Seven learnable queries decoupling unimodal, bimodal and trimodal information.

    interaction:
      cross_attention           keys = [f_m, F_m] per modality (default)
      cross_attention_no_fused  keys = patch tokens only
      no_interaction            linear reduction of the concatenated fused features
      transformer_block         cross-attention inside a full transformer block
    """

    def __init__(self, embed_dim, num_heads, interaction="cross_attention"):
        super().__init__()
        self.embed_dim = embed_dim
        self.interaction = interaction
        self.retain_attention = False
        self.last_attention = None
        if interaction == "no_interaction":
            self.reducers = nn.ModuleDict(
                {slot: nn.Linear(len(slot) * embed_dim, embed_dim) for slot in DECOUPLED_SLOTS}
            )
            for lin in self.reducers.values():
                nn.init.trunc_normal_(lin.weight, std=0.02)
                nn.init.zeros_(lin.bias)
            return
        if interaction not in ("cross_attention", "cross_attention_no_fused", "transformer_block"):
            raise ConfigurationError(f"unknown hdm interaction {interaction!r}")
        self.queries = nn.ParameterDict(
            {slot: nn.Parameter(torch.empty(embed_dim)) for slot in DECOUPLED_SLOTS}
        )
        for q in self.queries.values():
            nn.init.trunc_normal_(q, mean=0.0, std=0.02)
        attn_cls = CrossAttentionBlock if interaction == "transformer_block" else CrossAttention
        # one attention per hierarchy level; the level's queries share it
        self.attend = nn.ModuleDict(
            {
                "uni": attn_cls(embed_dim, num_heads),
                "bi": attn_cls(embed_dim, num_heads),
                "tri": attn_cls(embed_dim, num_heads),
            }
        )

    @staticmethod
    def level(slot):
        return {1: "uni", 2: "bi", 3: "tri"}[len(slot)]

    @property
    def include_fused(self):
        return self.interaction != "cross_attention_no_fused"

    def forward(self, fused_by_mod, tokens_by_mod) -> DecoupledSet:
        present = [m for m in MODALITIES if m in fused_by_mod]
        if not present:
            raise InputError("decoupling requires at least one modality")
        if len(present) != 3:
            raise InputError(
                "decoupling expects all three modality streams; mask missing "
                f"modalities as zero images instead (got {present})"
            )
        if self.interaction == "no_interaction":
            outs = []
            for slot in DECOUPLED_SLOTS:
                joint = torch.cat([fused_by_mod[m].values for m in slot_modalities(slot)], dim=-1)
                outs.append(self.reducers[slot](joint))
            self.last_attention = None
            return DecoupledSet(torch.stack(outs, dim=-2))
        outs = []
        retained = {}
        for slot in DECOUPLED_SLOTS:
            keys = build_keys(slot, fused_by_mod, tokens_by_mod, include_fused=self.include_fused)
            attend = self.attend[self.level(slot)]
            if self.retain_attention:
                out, attn = attend(self.queries[slot], keys, return_attention=True)
                retained[slot] = attn.detach()
            else:
                out = attend(self.queries[slot], keys)
            outs.append(out)
        self.last_attention = retained if self.retain_attention else None
        return DecoupledSet(torch.stack(outs, dim=-2))

    def patch_attention_grids(self, num_patches, grid_hw):
        """Per (slot, modality) head-averaged attention over that modality's patch tokens.

        Returns {(slot, modality): (B, H_patches, W_patches)} grids; each grid sums
        to the total attention mass the slot's query puts on that modality's patches.
        Requires retain_attention to have been set before the forward pass.
        """
        if self.last_attention is None:
            raise StateError("attention retention is disabled; set retain_attention=True first")
        gh, gw = grid_hw
        if gh * gw != num_patches:
            raise InputError(f"grid {gh}x{gw} does not match N_p={num_patches}")
        stride = num_patches + (1 if self.include_fused else 0)
        offset = 1 if self.include_fused else 0
        grids = {}
        for slot, attn in self.last_attention.items():
            mean_attn = attn.mean(dim=1)  # (B, K)
            for j, m in enumerate(slot_modalities(slot)):
                start = j * stride + offset
                grids[(slot, m)] = mean_attn[:, start : start + num_patches].reshape(-1, gh, gw)
        return grids
