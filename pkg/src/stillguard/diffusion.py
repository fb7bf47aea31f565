"""Noise schedule, forward noising, sprite data, denoiser training, and
deterministic image-to-video sampling.

Training data is synthetic: a single solid sprite translating at a constant
integer velocity, captioned with its color, shape, and direction. The sampler
is DDIM-style with zero stochasticity so that generated motion depends only
on the seed of the initial latent and the conditioning.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dit import embed_caption
from .errors import ConfigError, UsageError
from .optim import Adam
from .vae import TEMPORAL_FACTOR, validate_video


@dataclass
class NoiseSchedule:
    t_train: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t):
        if not 1 <= t <= self.t_train:
            raise UsageError(f"timestep {t} outside schedule range [1, {self.t_train}]")
        return float(self.alpha_bars[t - 1])


def make_schedule(t_train, beta_min=1e-4, beta_max=0.09):
    if t_train < 2:
        raise ConfigError(f"schedule needs t_train >= 2, got {t_train}")
    if not 0.0 < beta_min < beta_max < 1.0:
        raise ConfigError(f"need 0 < beta_min < beta_max < 1, got ({beta_min}, {beta_max})")
    betas = np.linspace(beta_min, beta_max, t_train)
    alphas = 1.0 - betas
    return NoiseSchedule(t_train, betas, alphas, np.cumprod(alphas))


def q_sample(x0, t, noise, sched):
    """Noise a clean latent to timestep t: sqrt(a_bar)*x0 + sqrt(1-a_bar)*noise.

    Differentiable in x0 when it is a Tensor."""
    ab = sched.alpha_bar(t)
    noise_arr = noise.data if isinstance(noise, Tensor) else np.asarray(noise)
    x0_shape = x0.shape if isinstance(x0, Tensor) else np.asarray(x0).shape
    if noise_arr.shape != tuple(x0_shape):
        raise UsageError(f"noise shape {noise_arr.shape} != latent shape {tuple(x0_shape)}")
    scaled = ad.mul(x0 if isinstance(x0, Tensor) else Tensor(x0), math.sqrt(ab))
    return scaled + math.sqrt(1.0 - ab) * noise_arr


def encode_latent(vae, video):
    """Encode into the unit-RMS diffusion latent space (differentiable)."""
    return ad.mul(vae.encode(video), vae.latent_scale)


def decode_latent(vae, latent, frames=None):
    z = latent if isinstance(latent, Tensor) else Tensor(latent)
    return vae.decode(ad.mul(z, 1.0 / vae.latent_scale), frames=frames)


PALETTE = {
    "red": (0.90, 0.12, 0.12),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.15, 0.25, 0.90),
    "yellow": (0.92, 0.88, 0.14),
    "magenta": (0.88, 0.16, 0.85),
    "cyan": (0.14, 0.85, 0.88),
    "orange": (0.95, 0.55, 0.10),
    "white": (0.95, 0.95, 0.95),
}
BACKGROUND = 0.12
SHAPES = ("square", "disc")


def direction_word(vy, vx):
    vert = "up" if vy < 0 else "down" if vy > 0 else ""
    horiz = "left" if vx < 0 else "right" if vx > 0 else ""
    if vert and horiz:
        return f"{vert}-{horiz}"
    return vert or horiz


def render_sprite_video(shape, color, size, start, velocity, frames, height, width):
    """Draw a solid sprite translating at integer `velocity` (vy, vx) px/frame."""
    rgb = np.asarray(PALETTE[color])
    video = np.full((frames, 3, height, width), BACKGROUND)
    yy, xx = np.mgrid[0:height, 0:width]
    y0, x0 = start
    vy, vx = velocity
    for t in range(frames):
        cy, cx = y0 + t * vy, x0 + t * vx
        if shape == "square":
            mask = (yy >= cy) & (yy < cy + size) & (xx >= cx) & (xx < cx + size)
        else:
            r = size / 2.0
            mask = (yy + 0.5 - (cy + r)) ** 2 + (xx + 0.5 - (cx + r)) ** 2 <= r * r
        video[t, :, mask] = rgb  # mask indexing yields (n, 3); rgb broadcasts per row
    return video


@dataclass
class SpriteDataset:
    videos: list
    captions: list
    velocities: list
    shapes: list
    colors: list


def make_sprite_dataset(n, frames, height, width, seed=0):
    """Deterministic dataset of single-sprite translation videos."""
    if n < 1:
        raise UsageError(f"dataset size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    vel_choices = [(vy, vx) for vy in range(-2, 3) for vx in range(-2, 3) if (vy, vx) != (0, 0)]
    color_names = list(PALETTE)
    lo = max(4, (3 * min(height, width)) // 8)
    hi = min(height, width) // 2
    videos, captions, velocities, shapes, colors = [], [], [], [], []
    for _ in range(n):
        vy, vx = vel_choices[rng.integers(len(vel_choices))]
        shape = SHAPES[rng.integers(len(SHAPES))]
        color = color_names[rng.integers(len(color_names))]
        size = int(rng.integers(lo, hi + 1))
        travel_y, travel_x = vy * (frames - 1), vx * (frames - 1)
        y_lo, y_hi = max(0, -travel_y), min(height - size, height - size - travel_y)
        x_lo, x_hi = max(0, -travel_x), min(width - size, width - size - travel_x)
        if y_hi < y_lo or x_hi < x_lo:
            raise ConfigError(f"sprite of size {size} cannot stay in a {height}x{width} "
                              f"frame over {frames} frames at velocity {(vy, vx)}")
        start = (int(rng.integers(y_lo, y_hi + 1)), int(rng.integers(x_lo, x_hi + 1)))
        videos.append(render_sprite_video(shape, color, size, start, (vy, vx),
                                          frames, height, width))
        captions.append(f"{color} {shape} moving {direction_word(vy, vx)}")
        velocities.append((vy, vx))
        shapes.append(shape)
        colors.append(color)
    return SpriteDataset(videos, captions, velocities, shapes, colors)


def conditioning_latent(vae, image, t_latent):
    """Encode the first frame and replicate it across latent time positions."""
    from .vae import replicate_image

    single = replicate_image(image, 1)
    cond = encode_latent(vae, single)
    if t_latent == 1:
        return cond
    return ad.concat([cond] * t_latent, axis=0)


def train_denoiser(model, vae, dataset, sched, epochs, lr, seed=0):
    """Noise-prediction MSE training with frozen VAE latents."""
    if not getattr(vae, "fitted", False):
        raise UsageError("the autoencoder must be trained before the denoiser "
                         "(no fitted latent scale found)")
    if lr <= 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    if not dataset.videos:
        raise UsageError("training dataset is empty")
    rng = np.random.default_rng(seed)
    with ad.no_grad():
        latents, conds, caps = [], [], []
        for video, caption in zip(dataset.videos, dataset.captions):
            validate_video(video)
            z = encode_latent(vae, Tensor(video)).data
            latents.append(z)
            conds.append(np.repeat(encode_latent(vae, Tensor(video[:1])).data,
                                   z.shape[0], axis=0))
            caps.append(embed_caption(caption, model.n_text, model.d_model))
    opt = Adam(model.parameters(), lr=lr)
    log = []
    for _ in range(epochs):
        for idx in rng.permutation(len(latents)):
            z0 = latents[idx]
            t = int(rng.integers(1, sched.t_train + 1))
            noise = rng.standard_normal(z0.shape)
            x_t = q_sample(z0, t, noise, sched)
            eps_hat, _ = model.forward(x_t, Tensor(conds[idx]), caps[idx], t)
            diff = eps_hat - Tensor(noise)
            loss = (diff * diff).mean()
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            log.append(loss.item())
    return log


def sampling_timesteps(t_train, steps):
    """Strided descending sub-schedule; every entry stays within [1, t_train]."""
    if steps < 1:
        raise UsageError(f"steps must be >= 1, got {steps}")
    ts = np.unique(np.rint(np.linspace(t_train, 1, num=steps)).astype(int))[::-1]
    return [int(t) for t in ts]


def sample(model, vae, image, caption, sched, steps, frames, seed=0):
    """Deterministic DDIM (eta = 0) image-to-video generation.

    The seed drives only the initial Gaussian latent; everything after is a
    pure function of the trained models and the inputs."""
    if not getattr(vae, "fitted", False):
        raise UsageError("the autoencoder must be trained before sampling")
    image = np.asarray(image, dtype=np.float64)
    c, h, w = image.shape
    t_latent = math.ceil(frames / TEMPORAL_FACTOR)
    with ad.no_grad():
        cond = conditioning_latent(vae, image, t_latent).data
        cap = embed_caption(caption, model.n_text, model.d_model)
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((t_latent, model.latent_channels, h // 4, w // 4))
        ts = sampling_timesteps(sched.t_train, steps)
        for i, t in enumerate(ts):
            ab = sched.alpha_bar(t)
            eps = model.forward(Tensor(x), Tensor(cond), cap, t)[0].data
            x0 = (x - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
            ab_prev = sched.alpha_bar(ts[i + 1]) if i + 1 < len(ts) else 1.0
            x = math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps
        video = decode_latent(vae, x, frames=frames).data
    return video
