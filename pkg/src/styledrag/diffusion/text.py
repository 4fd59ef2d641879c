"""Fixed small vocabulary and the trainable prompt encoder.

The vocabulary covers the toy caption grammar used throughout the
package ("a red disk in cartoon style", attribute words, etc.) plus
special tokens: padding, two reserved rare rows for token-pair
initialization, and the two personalization placeholders <s1>/<s2>.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from ..errors import ShapeError

__all__ = ["Vocabulary", "VOCAB", "TextEncoder", "CONTEXT_LEN", "CONTEXT_DIM"]

CONTEXT_LEN = 8
CONTEXT_DIM = 64

_WORDS = [
    "<pad>", "<unk>", "<rare1>", "<rare2>", "<s1>", "<s2>",
    "a", "in", "on", "style", "the", "and", "with",
    # colors
    "red", "green", "blue", "yellow", "magenta", "cyan", "orange",
    "purple", "white", "black", "gray", "teal", "pink", "brown",
    # subject class nouns
    "disk", "square", "triangle", "star", "ring", "blob",
    # style domains
    "photo", "cartoon",
    # attribute / edit words
    "bright", "dark", "small", "large", "striped", "plain",
    "ground", "sky", "background", "floor", "shadow",
]


class Vocabulary:
    def __init__(self, words=_WORDS):
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        self.pad_id = self.index["<pad>"]
        self.unk_id = self.index["<unk>"]
        self.rare_ids = (self.index["<rare1>"], self.index["<rare2>"])
        self.placeholder_ids = (self.index["<s1>"], self.index["<s2>"])

    def __len__(self):
        return len(self.words)

    def encode(self, text: str, length: int = CONTEXT_LEN) -> torch.Tensor:
        """Whitespace tokenization, padded/truncated to a fixed length.

        "<s1><s2>" written without spaces splits into the two
        placeholder tokens.
        """
        toks = []
        for raw in text.lower().split():
            if raw == "<s1><s2>":
                toks.extend(["<s1>", "<s2>"])
            else:
                toks.append(raw)
        ids = [self.index.get(t, self.unk_id) for t in toks][:length]
        ids += [self.pad_id] * (length - len(ids))
        return torch.tensor(ids, dtype=torch.long)


VOCAB = Vocabulary()


class TextEncoder(nn.Module):
    """One-block transformer mapping token ids to a conditioning context.

    Output shape is (L, d_ctx); the two placeholder positions can be
    overridden with externally learned embeddings so a token pair can be
    optimized without touching the vocabulary table.
    """

    def __init__(self, vocab: Vocabulary = VOCAB, dim: int = CONTEXT_DIM,
                 length: int = CONTEXT_LEN, num_heads: int = 4, seed: int = 0):
        super().__init__()
        self.vocab = vocab
        self.dim = dim
        self.length = length
        gen = torch.Generator().manual_seed(seed)
        self.token_table = nn.Parameter(torch.randn(len(vocab), dim, generator=gen) * 0.02)
        self.pos_table = nn.Parameter(torch.randn(length, dim, generator=gen) * 0.02)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 2), nn.SiLU(), nn.Linear(dim * 2, dim))
        with torch.no_grad():
            for p in list(self.attn.parameters()) + list(self.mlp.parameters()):
                if p.ndim >= 2:
                    nn.init.xavier_uniform_(p, gain=0.5)
                else:
                    p.zero_()

    def forward(self, ids: torch.Tensor, token_pair: torch.Tensor | None = None) -> torch.Tensor:
        """ids: (L,) or (B, L) -> context (B, L, dim); token_pair: (2, dim)."""
        squeeze = ids.ndim == 1
        if squeeze:
            ids = ids[None]
        if ids.shape[1] != self.length:
            raise ShapeError(f"expected token length {self.length}, got {ids.shape[1]}")
        x = self.token_table[ids]
        if token_pair is not None:
            if token_pair.shape != (2, self.dim):
                raise ShapeError(f"token pair must be (2, {self.dim}), got {tuple(token_pair.shape)}")
            s1, s2 = self.vocab.placeholder_ids
            x = torch.where((ids == s1)[..., None], token_pair[0].to(x.dtype), x)
            x = torch.where((ids == s2)[..., None], token_pair[1].to(x.dtype), x)
        x = x + self.pos_table[None, :, :]
        h = self.norm1(x)
        attn_out, _ = self.attn(h, h, h, need_weights=False)
        x = x + attn_out
        x = x + self.mlp(self.norm2(x))
        return x[0] if squeeze else x

    def encode_prompt(self, text: str, token_pair: torch.Tensor | None = None) -> torch.Tensor:
        return self.forward(self.vocab.encode(text, self.length), token_pair)

    def null_context(self) -> torch.Tensor:
        """Learned unconditional context: the empty-prompt encoding."""
        return self.encode_prompt("")
