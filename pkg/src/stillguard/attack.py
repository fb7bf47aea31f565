"""Immunization losses and the projected-gradient attack.

All five loss variants are minimized: driving the encoder latent, attention
weights, attention outputs, or predicted noise toward zero degrades the
model's ability to synthesize motion from the perturbed image. The PGD loop
takes signed gradient steps on the pixel perturbation, projects onto the
L-infinity ball of eps/255, and keeps the perturbed image inside [0, 1].
"""

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import conditioning_latent, encode_latent, q_sample
from .dit import cross_block_mask, embed_caption
from .errors import ConfigError, NumericError, UsageError
from .vae import SPATIAL_FACTOR, TEMPORAL_FACTOR, replicate_image

LOSS_KINDS = ("enc", "hs", "diff", "attn_full", "attn_cross")


@dataclass
class AttackConfig:
    loss_kind: str
    eps_pixels: int = 16
    iterations: int = 300
    step_size: float = 0.0  # 0 means the default eps/(255*10)
    caption: str = ""
    mc_samples: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}; "
                              f"expected one of {LOSS_KINDS}")
        if self.eps_pixels < 1:
            raise ConfigError(f"eps_pixels must be >= 1, got {self.eps_pixels}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.step_size < 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if self.mc_samples < 1:
            raise ConfigError(f"mc_samples must be >= 1, got {self.mc_samples}")

    @property
    def effective_step(self):
        return self.step_size if self.step_size > 0 else self.eps_pixels / (255.0 * 10.0)


@dataclass
class ImmunizedImage:
    original: np.ndarray
    delta: np.ndarray
    adversarial: np.ndarray
    loss_log: list = field(default_factory=list)
    delta_inf_log: list = field(default_factory=list)


def loss_enc(image_plus_delta, vae, frames):
    """Norm of the encoder latent of the static video built from the image."""
    video = replicate_image(image_plus_delta, frames)
    return ad.frobenius_norm(vae.encode(video))


def draw_samples(rng, count, sched, latent_shape):
    """Fresh (timestep, forward-noise) Monte Carlo pairs."""
    return [(int(rng.integers(1, sched.t_train + 1)), rng.standard_normal(latent_shape))
            for _ in range(count)]


def _noised_forward(image_plus_delta, model, vae, caption_emb, sched, t, noise, frames,
                    record):
    video = replicate_image(image_plus_delta, frames)
    z0 = encode_latent(vae, video)
    x_t = q_sample(z0, t, noise, sched)
    cond = conditioning_latent(vae, image_plus_delta, z0.shape[0])
    return model.forward(x_t, cond, caption_emb, t, record=record)


def _mean_of(norms):
    acc = norms[0]
    for n in norms[1:]:
        acc = acc + n
    return ad.mul(acc, 1.0 / len(norms))


def loss_attn(image_plus_delta, model, vae, caption, sched, t_draws, frames, mode="full"):
    """Layer-averaged Frobenius norm of the attention weights, averaged over
    the Monte Carlo draws; mode "cross" restricts to the video-to-text block."""
    if not t_draws:
        raise UsageError("t_draws must contain at least one (t, noise) sample")
    if mode not in ("full", "cross"):
        raise UsageError(f"mode must be 'full' or 'cross', got {mode!r}")
    cap = embed_caption(caption, model.n_text, model.d_model)
    per_draw = []
    for t, noise in t_draws:
        _, rec = _noised_forward(image_plus_delta, model, vae, cap, sched, t, noise,
                                 frames, record=True)
        blocks = rec.weights if mode == "full" else cross_block_mask(rec)
        per_draw.append(_mean_of([ad.frobenius_norm(b) for b in blocks]))
    return _mean_of(per_draw)


def loss_hs(image_plus_delta, model, vae, caption, sched, t_draws, frames):
    """Layer-averaged Frobenius norm of the attention outputs."""
    if not t_draws:
        raise UsageError("t_draws must contain at least one (t, noise) sample")
    cap = embed_caption(caption, model.n_text, model.d_model)
    per_draw = []
    for t, noise in t_draws:
        _, rec = _noised_forward(image_plus_delta, model, vae, cap, sched, t, noise,
                                 frames, record=True)
        per_draw.append(_mean_of([ad.frobenius_norm(h) for h in rec.outputs]))
    return _mean_of(per_draw)


def loss_diff(image_plus_delta, model, vae, caption, sched, t_draws, frames):
    """Frobenius norm of the predicted noise, averaged over draws."""
    if not t_draws:
        raise UsageError("t_draws must contain at least one (t, noise) sample")
    cap = embed_caption(caption, model.n_text, model.d_model)
    per_draw = []
    for t, noise in t_draws:
        eps_hat, _ = _noised_forward(image_plus_delta, model, vae, cap, sched, t, noise,
                                     frames, record=False)
        per_draw.append(ad.frobenius_norm(eps_hat))
    return _mean_of(per_draw)


@contextmanager
def frozen(*models):
    """Temporarily stop gradient flow into model parameters (the attack only
    needs the pixel gradient)."""
    params = [p for m in models for p in m.parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


def quantize_pixels(image):
    return np.rint(np.asarray(image, dtype=np.float64) * 255.0) / 255.0


def pgd(image, config, model, vae, sched, frames):
    """Optimize the perturbation with signed-gradient PGD under the pixel
    budget, then quantize the result onto the 1/255 grid.

    The input image is snapped onto the 1/255 grid first (it represents an
    8-bit file), which makes the quantized output exactly serializable.
    """
    if not getattr(vae, "fitted", False):
        raise UsageError("the autoencoder must be trained before attacking")
    x = quantize_pixels(np.clip(image, 0.0, 1.0))
    c, h, w = x.shape
    if h % SPATIAL_FACTOR or w % SPATIAL_FACTOR:
        raise ConfigError(f"image extents must be divisible by {SPATIAL_FACTOR}, got {h}x{w}")
    eps = config.eps_pixels / 255.0
    alpha = config.effective_step
    latent_shape = (math.ceil(frames / TEMPORAL_FACTOR), model.latent_channels,
                    h // SPATIAL_FACTOR, w // SPATIAL_FACTOR)
    rng = np.random.default_rng(config.seed)
    delta = np.zeros_like(x)
    loss_log, inf_log = [], []
    with frozen(model, vae):
        for it in range(1, config.iterations + 1):
            d = Tensor(delta, requires_grad=True)
            adv = d + x
            if config.loss_kind == "enc":
                loss = loss_enc(adv, vae, frames)
            else:
                draws = draw_samples(rng, config.mc_samples, sched, latent_shape)
                if config.loss_kind == "attn_full":
                    loss = loss_attn(adv, model, vae, config.caption, sched, draws,
                                     frames, mode="full")
                elif config.loss_kind == "attn_cross":
                    loss = loss_attn(adv, model, vae, config.caption, sched, draws,
                                     frames, mode="cross")
                elif config.loss_kind == "hs":
                    loss = loss_hs(adv, model, vae, config.caption, sched, draws, frames)
                else:
                    loss = loss_diff(adv, model, vae, config.caption, sched, draws, frames)
            value = loss.item()
            ad.backward(loss)
            if not (np.isfinite(value) and np.isfinite(d.grad).all()):
                raise NumericError(f"non-finite loss or gradient at iteration {it} "
                                   f"(loss={value!r})")
            delta = delta - alpha * np.sign(d.grad)
            delta = np.clip(delta, -eps, eps)
            delta = np.clip(x + delta, 0.0, 1.0) - x
            worst = float(np.abs(delta).max())
            if worst > eps + 1e-12:
                raise AssertionError(f"budget violated at iteration {it}: {worst} > {eps}")
            loss_log.append(value)
            inf_log.append(worst)
    adv_q = quantize_pixels(x + delta)
    delta = np.clip(adv_q - x, -eps, eps)
    adversarial = x + delta
    return ImmunizedImage(original=x, delta=delta, adversarial=adversarial,
                          loss_log=loss_log, delta_inf_log=inf_log)
