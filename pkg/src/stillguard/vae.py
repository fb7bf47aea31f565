"""Causal 3D convolutional video autoencoder.

The encoder compresses a [T, 3, H, W] video to a [ceil(T/2), 4, H/4, W/4]
latent through three causal conv layers (widths 8 -> 16 -> 4). Temporal
convolutions only see past frames, so frame t can influence latent positions
floor(t/2) onward but never earlier ones. The decoder mirrors the encoder
with nearest-neighbour upsampling and squashes its output into [0, 1] with a
sigmoid. Deliberately non-variational: attacks need a deterministic,
everywhere-smooth encoder.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DomainError, UsageError
from .optim import Adam

LATENT_CHANNELS = 4
SPATIAL_FACTOR = 4
TEMPORAL_FACTOR = 2

RANGE_TOL = 1e-12


def validate_video(frames):
    """Check the [T, C, H, W] layout and the unit pixel range."""
    arr = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
    if arr.ndim != 4:
        raise UsageError(f"video must be [T, C, H, W], got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise UsageError("video needs at least one frame")
    if arr.min() < -RANGE_TOL or arr.max() > 1.0 + RANGE_TOL:
        raise DomainError(
            f"pixel values outside [0, 1]: min {arr.min():.6g}, max {arr.max():.6g}")
    return arr


def replicate_image(image, frame_count):
    """Tile one [C, H, W] image into a static [T, C, H, W] video.

    Differentiable when `image` is a Tensor: each frame's gradient flows back
    to the single source image.
    """
    if frame_count < 1:
        raise UsageError(f"frame_count must be >= 1, got {frame_count}")
    img = image if isinstance(image, Tensor) else Tensor(image)
    arr = img.data
    if arr.ndim != 3:
        raise UsageError(f"image must be [C, H, W], got shape {arr.shape}")
    if arr.min() < -RANGE_TOL or arr.max() > 1.0 + RANGE_TOL:
        raise DomainError(
            f"pixel values outside [0, 1]: min {arr.min():.6g}, max {arr.max():.6g}")
    frame = ad.reshape(img, (1,) + arr.shape)
    if frame_count == 1:
        return frame
    return ad.concat([frame] * frame_count, axis=0)


def _conv_param(rng, c_out, c_in, k):
    fan_in = c_in * k[0] * k[1] * k[2]
    w = rng.standard_normal((c_out, c_in) + k) / np.sqrt(fan_in)
    return Tensor(w, requires_grad=True), Tensor(np.zeros(c_out), requires_grad=True)


class VideoAutoencoder:
    """Fully convolutional, so one instance handles any H, W divisible by 4."""

    def __init__(self, seed=0):
        rng = np.random.default_rng(seed)
        k = (3, 3, 3)
        p = {}
        p["enc1_w"], p["enc1_b"] = _conv_param(rng, 8, 3, k)
        p["enc2_w"], p["enc2_b"] = _conv_param(rng, 16, 8, k)
        p["enc3_w"], p["enc3_b"] = _conv_param(rng, LATENT_CHANNELS, 16, k)
        p["dec1_w"], p["dec1_b"] = _conv_param(rng, 16, LATENT_CHANNELS, k)
        p["dec2_w"], p["dec2_b"] = _conv_param(rng, 8, 16, k)
        p["dec3_w"], p["dec3_b"] = _conv_param(rng, 3, 8, k)
        self.params = p
        self.latent_scale = 1.0
        self.fitted = False

    def parameters(self):
        return list(self.params.values())

    def encode(self, video):
        """[T, C, H, W] video -> [ceil(T/2), 4, H/4, W/4] latent."""
        v = video if isinstance(video, Tensor) else Tensor(video)
        T, C, H, W = v.shape
        if H % SPATIAL_FACTOR or W % SPATIAL_FACTOR:
            raise ConfigError(f"frame extents must be divisible by {SPATIAL_FACTOR}, "
                              f"got H={H}, W={W}")
        p = self.params
        x = ad.transpose(v, (1, 0, 2, 3))
        x = ad.silu(ad.conv3d_causal(x, p["enc1_w"], p["enc1_b"], (1, 2, 2)))
        x = ad.silu(ad.conv3d_causal(x, p["enc2_w"], p["enc2_b"], (2, 2, 2)))
        x = ad.conv3d_causal(x, p["enc3_w"], p["enc3_b"], (1, 1, 1))
        return ad.transpose(x, (1, 0, 2, 3))

    def decode(self, latent, frames=None):
        """Invert the compression; output frames are squashed into [0, 1].

        A latent with T' temporal positions decodes to 2*T' frames; pass
        `frames` to crop trailing frames (needed when the source length was
        odd).
        """
        z = latent if isinstance(latent, Tensor) else Tensor(latent)
        if z.ndim != 4 or z.shape[1] != LATENT_CHANNELS:
            raise UsageError(f"latent must be [T', {LATENT_CHANNELS}, H', W'], got {z.shape}")
        p = self.params
        x = ad.transpose(z, (1, 0, 2, 3))
        x = ad.silu(ad.conv3d_causal(x, p["dec1_w"], p["dec1_b"], (1, 1, 1)))
        x = ad.upsample_repeat(x, (2, 2, 2))
        x = ad.silu(ad.conv3d_causal(x, p["dec2_w"], p["dec2_b"], (1, 1, 1)))
        x = ad.upsample_repeat(x, (1, 2, 2))
        x = ad.sigmoid(ad.conv3d_causal(x, p["dec3_w"], p["dec3_b"], (1, 1, 1)))
        video = ad.transpose(x, (1, 0, 2, 3))
        if frames is not None:
            if not 1 <= frames <= video.shape[0]:
                raise UsageError(f"cannot crop to {frames} frames from {video.shape[0]}")
            video = video[:frames]
        return video

    def state_dict(self):
        d = {name: t.data for name, t in self.params.items()}
        d["latent_scale"] = np.asarray([self.latent_scale])
        return d

    def load_state_dict(self, d):
        for name, t in self.params.items():
            arr = np.asarray(d[name])
            if arr.shape != t.shape:
                raise UsageError(f"checkpoint tensor {name!r} has shape {arr.shape}, "
                                 f"expected {t.shape}")
            t.data = np.ascontiguousarray(arr, dtype=np.float64)
        self.latent_scale = float(np.asarray(d["latent_scale"]).reshape(-1)[0])
        self.fitted = True


def train_autoencoder(vae, dataset, epochs, lr, seed=0):
    """Minimize mean squared reconstruction error over the dataset.

    Returns the per-step loss log. Also fits `vae.latent_scale` so that
    encoded latents have unit RMS over the training set.
    """
    if not dataset:
        raise UsageError("training dataset is empty")
    if lr <= 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    rng = np.random.default_rng(seed)
    opt = Adam(vae.parameters(), lr=lr)
    log = []
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        for idx in order:
            video = Tensor(validate_video(dataset[idx]))
            recon = vae.decode(vae.encode(video), frames=video.shape[0])
            diff = recon - video
            loss = (diff * diff).mean()
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            log.append(loss.item())
    sq_sum, count = 0.0, 0
    with ad.no_grad():
        for video in dataset:
            z = vae.encode(Tensor(validate_video(video))).data
            sq_sum += float(np.sum(z * z))
            count += z.size
    rms = np.sqrt(sq_sum / count) if count else 1.0
    vae.latent_scale = float(1.0 / rms) if rms > 0 else 1.0
    vae.fitted = True
    return log
