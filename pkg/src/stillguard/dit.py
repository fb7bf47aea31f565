"""Spatio-temporal transformer denoiser with joint text/video-token attention.

Text and video tokens share every self-attention layer; the "cross" view used
by the restricted attack is the sub-block of attention weights where video
tokens attend to text tokens. Attention weights and attention outputs can be
captured per layer, with gradients attached, for the suppression losses.
"""

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, UsageError

CAPTION_TABLE_SIZE = 4096
_CAPTION_TABLE_SEED = 1315423911  # fixed: caption embeddings never train


def _word_index(word):
    digest = hashlib.sha256(word.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % (CAPTION_TABLE_SIZE - 1) + 1


@lru_cache(maxsize=4)
def caption_table(d_model):
    rng = np.random.default_rng(_CAPTION_TABLE_SEED)
    table = rng.standard_normal((CAPTION_TABLE_SIZE, d_model))
    table.setflags(write=False)
    return table


def embed_caption(caption, n_text, d_model):
    """Hashed bag-of-words embedding, padded/truncated to n_text rows.

    Row 0 of the table is the reserved null token; empty captions and padding
    both map to it. Purely deterministic across runs and platforms.
    """
    if n_text < 1:
        raise UsageError(f"n_text must be >= 1, got {n_text}")
    table = caption_table(d_model)
    rows = np.tile(table[0], (n_text, 1))
    for i, word in enumerate(caption.split()[:n_text]):
        rows[i] = table[_word_index(word)]
    return rows


def sinusoid_rows(positions, d_model):
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    half = d_model // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = positions * freqs
    out = np.zeros((positions.shape[0], d_model))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles[:, : d_model - half])
    return out


@dataclass
class AttentionRecord:
    """Captured per-layer attention weights [heads, N, N] and merged
    attention outputs [N, d_model], both still differentiable."""

    weights: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    n_text: int = 0
    n_video: int = 0

    @property
    def layer_count(self):
        return len(self.weights)


def attention(tokens, wq, wk, wv, heads, record=False):
    """Multi-head self-attention core: returns the merged A @ V output and,
    when recording, the (weights, merged output) pair."""
    n, d = tokens.shape
    if d % heads:
        raise ConfigError(f"d_model {d} not divisible by head count {heads}")
    dk = d // heads
    q = ad.matmul(tokens, wq)
    k = ad.matmul(tokens, wk)
    v = ad.matmul(tokens, wv)
    split = lambda x: ad.transpose(ad.reshape(x, (n, heads, dk)), (1, 0, 2))
    qh, kh, vh = split(q), split(k), split(v)
    scores = ad.mul(ad.matmul(qh, ad.transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(dk))
    weights = ad.softmax_lastdim(scores)
    per_head = ad.matmul(weights, vh)
    merged = ad.reshape(ad.transpose(per_head, (1, 0, 2)), (n, d))
    if not record:
        return merged, None
    check = (weights.data @ vh.data).transpose(1, 0, 2).reshape(n, d)
    err = np.abs(check - merged.data).max()
    if err > 1e-10:
        raise AssertionError(f"captured attention output drifted from A @ V by {err:.3e}")
    return merged, (weights, merged)


def cross_block_mask(record):
    """Differentiable views of each layer's video-attends-to-text sub-block
    [heads, n_video, n_text]. The full weight tensors are left untouched."""
    if record.n_text < 1 or record.n_video < 1:
        raise UsageError("attention record is missing its text/video token layout")
    sel = (slice(None), slice(record.n_text, None), slice(None, record.n_text))
    return [a[sel] for a in record.weights]


def _linear_param(rng, d_in, d_out):
    w = rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)
    return Tensor(w, requires_grad=True), Tensor(np.zeros(d_out), requires_grad=True)


class Denoiser:
    """Noise-prediction transformer over patchified latent tokens.

    The conditioning latent is channel-concatenated with the noisy latent
    before patchification. The output head starts zero-initialized, so an
    untrained model predicts exactly zero noise.
    """

    PATCH = 2

    def __init__(self, d_model=64, layers=3, heads=2, n_text=4,
                 latent_channels=4, t_max=50, seed=0):
        if d_model % heads:
            raise ConfigError(f"d_model {d_model} not divisible by heads {heads}")
        self.d_model = d_model
        self.layers = layers
        self.heads = heads
        self.n_text = n_text
        self.latent_channels = latent_channels
        self.t_max = t_max
        rng = np.random.default_rng(seed)
        patch_dim = 2 * latent_channels * self.PATCH * self.PATCH
        out_dim = latent_channels * self.PATCH * self.PATCH
        p = {}
        p["embed_w"], p["embed_b"] = _linear_param(rng, patch_dim, d_model)
        p["time_w1"], p["time_b1"] = _linear_param(rng, d_model, d_model)
        p["time_w2"], p["time_b2"] = _linear_param(rng, d_model, d_model)
        for i in range(layers):
            p[f"blk{i}_ln1_g"] = Tensor(np.ones(d_model), requires_grad=True)
            p[f"blk{i}_ln1_b"] = Tensor(np.zeros(d_model), requires_grad=True)
            p[f"blk{i}_wq"], _ = _linear_param(rng, d_model, d_model)
            p[f"blk{i}_wk"], _ = _linear_param(rng, d_model, d_model)
            p[f"blk{i}_wv"], _ = _linear_param(rng, d_model, d_model)
            p[f"blk{i}_wo"], p[f"blk{i}_bo"] = _linear_param(rng, d_model, d_model)
            p[f"blk{i}_ln2_g"] = Tensor(np.ones(d_model), requires_grad=True)
            p[f"blk{i}_ln2_b"] = Tensor(np.zeros(d_model), requires_grad=True)
            p[f"blk{i}_mlp_w1"], p[f"blk{i}_mlp_b1"] = _linear_param(rng, d_model, 4 * d_model)
            p[f"blk{i}_mlp_w2"], p[f"blk{i}_mlp_b2"] = _linear_param(rng, 4 * d_model, d_model)
        p["final_ln_g"] = Tensor(np.ones(d_model), requires_grad=True)
        p["final_ln_b"] = Tensor(np.zeros(d_model), requires_grad=True)
        p["head_w"] = Tensor(np.zeros((d_model, out_dim)), requires_grad=True)
        p["head_b"] = Tensor(np.zeros(out_dim), requires_grad=True)
        self.params = p

    def parameters(self):
        return list(self.params.values())

    def _patchify(self, latent):
        tp, c, hp, wp = latent.shape
        s = self.PATCH
        x = ad.reshape(latent, (tp, c, hp // s, s, wp // s, s))
        x = ad.transpose(x, (0, 2, 4, 1, 3, 5))
        return ad.reshape(x, (tp * (hp // s) * (wp // s), c * s * s))

    def _unpatchify(self, tokens, tp, c, hp, wp):
        s = self.PATCH
        x = ad.reshape(tokens, (tp, hp // s, wp // s, c, s, s))
        x = ad.transpose(x, (0, 3, 1, 4, 2, 5))
        return ad.reshape(x, (tp, c, hp, wp))

    def run_blocks(self, tokens, record=None):
        """The transformer trunk; permutation-equivariant over token rows."""
        p = self.params
        for i in range(self.layers):
            h = ad.layer_norm(tokens, p[f"blk{i}_ln1_g"], p[f"blk{i}_ln1_b"])
            merged, captured = attention(h, p[f"blk{i}_wq"], p[f"blk{i}_wk"],
                                         p[f"blk{i}_wv"], self.heads,
                                         record=record is not None)
            if record is not None:
                record.weights.append(captured[0])
                record.outputs.append(captured[1])
            tokens = tokens + (ad.matmul(merged, p[f"blk{i}_wo"]) + p[f"blk{i}_bo"])
            m = ad.layer_norm(tokens, p[f"blk{i}_ln2_g"], p[f"blk{i}_ln2_b"])
            inner = ad.silu(ad.matmul(m, p[f"blk{i}_mlp_w1"]) + p[f"blk{i}_mlp_b1"])
            tokens = tokens + (ad.matmul(inner, p[f"blk{i}_mlp_w2"]) + p[f"blk{i}_mlp_b2"])
        return tokens

    def forward(self, noisy_latent, cond_latent, caption_emb, t, record=False):
        """Predict the noise in `noisy_latent` given the conditioning latent,
        caption embedding, and timestep. Returns (prediction, record)."""
        noisy = noisy_latent if isinstance(noisy_latent, Tensor) else Tensor(noisy_latent)
        cond = cond_latent if isinstance(cond_latent, Tensor) else Tensor(cond_latent)
        if noisy.shape != cond.shape:
            raise DimensionError(
                f"noisy/conditioning latent shapes differ: {noisy.shape} vs {cond.shape}")
        tp, c, hp, wp = noisy.shape
        if c != self.latent_channels:
            raise DimensionError(f"latent has {c} channels, model expects {self.latent_channels}")
        if hp % self.PATCH or wp % self.PATCH:
            raise ConfigError(f"latent extents must be divisible by patch {self.PATCH}, "
                              f"got {hp}x{wp}")
        if not 1 <= t <= self.t_max:
            raise UsageError(f"timestep {t} outside schedule range [1, {self.t_max}]")
        caption_emb = np.asarray(caption_emb)
        if caption_emb.shape != (self.n_text, self.d_model):
            raise DimensionError(f"caption embedding shape {caption_emb.shape} != "
                                 f"({self.n_text}, {self.d_model})")

        p = self.params
        video_tokens = ad.matmul(self._patchify(ad.concat([noisy, cond], axis=1)),
                                 p["embed_w"]) + p["embed_b"]
        tokens = ad.concat([Tensor(caption_emb), video_tokens], axis=0)
        n = tokens.shape[0]
        tokens = tokens + Tensor(sinusoid_rows(np.arange(n), self.d_model))

        temb = Tensor(sinusoid_rows([float(t)], self.d_model))
        temb = ad.silu(ad.matmul(temb, p["time_w1"]) + p["time_b1"])
        temb = ad.matmul(temb, p["time_w2"]) + p["time_b2"]
        tokens = tokens + ad.reshape(temb, (self.d_model,))

        rec = AttentionRecord(n_text=self.n_text, n_video=n - self.n_text) if record else None
        tokens = self.run_blocks(tokens, record=rec)

        final = ad.layer_norm(tokens, p["final_ln_g"], p["final_ln_b"])
        video_out = ad.matmul(final[self.n_text:], p["head_w"]) + p["head_b"]
        return self._unpatchify(video_out, tp, c, hp, wp), rec

    def state_dict(self):
        d = {name: t.data for name, t in self.params.items()}
        d["t_max"] = np.asarray([float(self.t_max)])
        return d

    def load_state_dict(self, d):
        for name, t in self.params.items():
            arr = np.asarray(d[name])
            if arr.shape != t.shape:
                raise UsageError(f"checkpoint tensor {name!r} has shape {arr.shape}, "
                                 f"expected {t.shape}")
            t.data = np.ascontiguousarray(arr, dtype=np.float64)
        self.t_max = int(np.asarray(d["t_max"]).reshape(-1)[0])
