"""Minimal trainable transformers: a hybrid-mask tagger/decoder for content
planning, an encoder-decoder for mask-and-fill generation, and a causal LM
for fluency scoring.

All three share the same pre-norm block.  Position embeddings are learned
absolute embeddings; the encoder-decoder optionally resets position ids per
input segment (supplied by the caller) so that template slots align with
decoder steps.
"""

import math
from dataclasses import dataclass, field, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

KINDS = ("bidir_causal_hybrid", "encoder_decoder", "causal_lm")

NEG_INF = float("-inf")


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    ffn_dim: int = 512
    max_len: int = 256
    dropout: float = 0.1
    kind: str = "encoder_decoder"
    uses_segment_embeddings: bool = False
    n_segments: int = 3
    n_position_classes: int = 128  # planner positioning head output size

    def validate(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.vocab_size < 8:
            raise ValueError("vocab_size must cover the 8 reserved tokens")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind: {self.kind}")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ForwardTrace:
    hidden_states: list  # one (B, L, d) tensor per layer; last entry is H^L
    logits: torch.Tensor
    position_logits: torch.Tensor = None


class Attention(nn.Module):
    def __init__(self, d_model, n_heads, dropout):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.scale = 1.0 / math.sqrt(self.head_dim)
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)

    def _split(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, x_q, x_kv, allowed):
        """allowed: bool (Lq, Lk) or (B, Lq, Lk); True = may attend."""
        q = self._split(self.q(x_q))
        k = self._split(self.k(x_kv))
        v = self._split(self.v(x_kv))
        scores = (q @ k.transpose(-1, -2)) * self.scale
        if allowed.dim() == 2:
            allowed = allowed.unsqueeze(0)
        scores = scores.masked_fill(~allowed.unsqueeze(1), NEG_INF)
        att = self.drop(torch.softmax(scores, dim=-1))
        y = (att @ v).transpose(1, 2).reshape(x_q.shape)
        return self.out(y)


class Block(nn.Module):
    def __init__(self, cfg, cross=False):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = Attention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.cross = None
        if cross:
            self.ln_x = nn.LayerNorm(cfg.d_model)
            self.cross = Attention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.ffn_dim),
            nn.GELU(),
            nn.Linear(cfg.ffn_dim, cfg.d_model),
        )
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, allowed, memory=None, mem_allowed=None):
        x = x + self.drop(self.attn(self.ln1(x), self.ln1(x), allowed))
        if self.cross is not None:
            x = x + self.drop(self.cross(self.ln_x(x), memory, mem_allowed))
        x = x + self.drop(self.ffn(self.ln2(x)))
        return x


class Embedder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.tok = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos = nn.Embedding(cfg.max_len, cfg.d_model)
        self.seg = nn.Embedding(cfg.n_segments, cfg.d_model) if cfg.uses_segment_embeddings else None
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, ids, segments=None, position_ids=None):
        if ids.size(-1) > self.cfg.max_len:
            raise ValueError("sequence too long")
        if (segments is not None) != (self.seg is not None):
            raise ValueError("segment ids must be supplied iff the model uses them")
        if position_ids is None:
            position_ids = torch.arange(ids.size(-1), device=ids.device).expand_as(ids)
        x = self.tok(ids) + self.pos(position_ids)
        if self.seg is not None:
            x = x + self.seg(segments)
        return self.drop(x)


def _init_weights(module):
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, std=0.02)


class PlannerNet(nn.Module):
    """Single stack with a caller-supplied attention mask (hybrid at use
    sites), a vocabulary head, and a positioning head over the hidden states.
    """

    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        if cfg.kind != "bidir_causal_hybrid":
            raise ValueError("PlannerNet requires kind=bidir_causal_hybrid")
        self.cfg = cfg
        self.embed = Embedder(cfg)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.lm_head = nn.Linear(cfg.d_model, cfg.vocab_size)
        self.position_head = nn.Linear(cfg.d_model, cfg.n_position_classes, bias=False)
        _init_weights(self)

    def forward(self, ids, allowed, segments=None):
        x = self.embed(ids, segments)
        hidden = []
        for blk in self.blocks:
            x = blk(x, allowed)
            hidden.append(x)
        h = self.ln_f(x)
        return ForwardTrace(hidden, self.lm_head(h), self.position_head(h))


class Seq2SeqNet(nn.Module):
    """Bidirectional encoder plus causal decoder with cross-attention."""

    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        if cfg.kind != "encoder_decoder":
            raise ValueError("Seq2SeqNet requires kind=encoder_decoder")
        self.cfg = cfg
        self.embed = Embedder(cfg)
        self.enc_blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.enc_ln = nn.LayerNorm(cfg.d_model)
        self.dec_embed_pos = nn.Embedding(cfg.max_len, cfg.d_model)
        self.dec_blocks = nn.ModuleList(Block(cfg, cross=True) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.lm_head = nn.Linear(cfg.d_model, cfg.vocab_size)
        _init_weights(self)

    def encode(self, enc_ids, enc_attend, segments=None, position_ids=None):
        """enc_attend: (B, Le) bool marking real tokens."""
        allowed = enc_attend.unsqueeze(1).expand(-1, enc_ids.size(1), -1)
        x = self.embed(enc_ids, segments, position_ids)
        for blk in self.enc_blocks:
            x = blk(x, allowed)
        return self.enc_ln(x)

    def _dec_embed(self, ids, position_ids=None):
        if ids.size(-1) > self.cfg.max_len:
            raise ValueError("sequence too long")
        if position_ids is None:
            position_ids = torch.arange(ids.size(-1), device=ids.device).expand_as(ids)
        x = self.embed.tok(ids) + self.dec_embed_pos(position_ids)
        return self.embed.drop(x)

    def decode(self, dec_ids, memory, enc_attend):
        """Teacher-forced decode over right-padded dec_ids."""
        from .masks import build_causal_mask

        x = self._dec_embed(dec_ids)
        causal = build_causal_mask(dec_ids.size(1)).to(dec_ids.device)
        mem_allowed = enc_attend.unsqueeze(1).expand(-1, dec_ids.size(1), -1)
        hidden = []
        for blk in self.dec_blocks:
            x = blk(x, causal, memory, mem_allowed)
            hidden.append(x)
        h = self.ln_f(x)
        return ForwardTrace(hidden, self.lm_head(h))

    def forward(self, enc_ids, enc_attend, dec_ids, segments=None, position_ids=None):
        memory = self.encode(enc_ids, enc_attend, segments, position_ids)
        return self.decode(dec_ids, memory, enc_attend)

    # -- incremental decoding ------------------------------------------------

    def start_decode(self, memory, enc_attend, batch):
        """Precompute cross-attention keys/values; allocate self-attn caches."""
        if memory.size(0) == 1 and batch > 1:
            memory = memory.expand(batch, -1, -1)
            enc_attend = enc_attend.expand(batch, -1)
        state = {
            "t": 0,
            "enc_attend": enc_attend,
            "mem_kv": [],
            "self_k": [],
            "self_v": [],
        }
        d = self.cfg.d_model
        for blk in self.dec_blocks:
            state["mem_kv"].append(
                (blk.cross._split(blk.cross.k(memory)), blk.cross._split(blk.cross.v(memory)))
            )
            state["self_k"].append(
                torch.zeros(batch, blk.attn.n_heads, self.cfg.max_len, blk.attn.head_dim)
            )
            state["self_v"].append(
                torch.zeros(batch, blk.attn.n_heads, self.cfg.max_len, blk.attn.head_dim)
            )
        return state

    def step(self, token_ids, state):
        """One decode step for a batch of streams; returns (B, V) logits."""
        t = state["t"]
        if t >= self.cfg.max_len:
            raise ValueError("sequence too long")
        pos = torch.full_like(token_ids, t)
        x = self.embed.tok(token_ids.unsqueeze(1)) + self.dec_embed_pos(pos.unsqueeze(1))
        for i, blk in enumerate(self.dec_blocks):
            hq = blk.ln1(x)
            q = blk.attn._split(blk.attn.q(hq))
            state["self_k"][i][:, :, t : t + 1] = blk.attn._split(blk.attn.k(hq))
            state["self_v"][i][:, :, t : t + 1] = blk.attn._split(blk.attn.v(hq))
            ks = state["self_k"][i][:, :, : t + 1]
            vs = state["self_v"][i][:, :, : t + 1]
            att = torch.softmax((q @ ks.transpose(-1, -2)) * blk.attn.scale, dim=-1)
            x = x + blk.attn.out((att @ vs).transpose(1, 2).reshape(x.shape))
            mk, mv = state["mem_kv"][i]
            q = blk.cross._split(blk.cross.q(blk.ln_x(x)))
            scores = (q @ mk.transpose(-1, -2)) * blk.cross.scale
            scores = scores.masked_fill(
                ~state["enc_attend"].unsqueeze(1).unsqueeze(2), NEG_INF
            )
            att = torch.softmax(scores, dim=-1)
            x = x + blk.cross.out((att @ mv).transpose(1, 2).reshape(x.shape))
            x = x + blk.ffn(blk.ln2(x))
        state["t"] = t + 1
        return self.lm_head(self.ln_f(x)).squeeze(1)


class CausalLMNet(nn.Module):
    """Decoder-only causal LM used for perplexity-based candidate selection."""

    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        if cfg.kind != "causal_lm":
            raise ValueError("CausalLMNet requires kind=causal_lm")
        self.cfg = cfg
        self.embed = Embedder(cfg)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.lm_head = nn.Linear(cfg.d_model, cfg.vocab_size)
        _init_weights(self)

    def forward(self, ids):
        from .masks import build_causal_mask

        x = self.embed(ids)
        allowed = build_causal_mask(ids.size(-1)).to(ids.device)
        hidden = []
        for blk in self.blocks:
            x = blk(x, allowed)
            hidden.append(x)
        h = self.ln_f(x)
        return ForwardTrace(hidden, self.lm_head(h))

    @torch.no_grad()
    def token_logprobs(self, tokens, bos_id=2):
        """Log-probability of each token given its prefix (BOS-started)."""
        if not tokens:
            raise ValueError("empty input")
        self.eval()
        ids = torch.tensor([[bos_id] + list(tokens[:-1])])
        logits = self.forward(ids).logits[0]
        logp = F.log_softmax(logits.double(), dim=-1)
        tgt = torch.tensor(list(tokens))
        return logp[torch.arange(len(tokens)), tgt].tolist()


def build_model(cfg):
    cfg.validate()
    if cfg.kind == "bidir_causal_hybrid":
        return PlannerNet(cfg)
    if cfg.kind == "encoder_decoder":
        return Seq2SeqNet(cfg)
    return CausalLMNet(cfg)
