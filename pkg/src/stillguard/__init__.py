"""Image immunization against image-to-video generation.

A small trainable I2V stack (causal 3D video autoencoder + transformer
denoiser), adversarial losses that suppress its internals, projected gradient
descent under a pixel budget, and motion metrics that quantify how frozen the
generated videos are.
"""

from .attack import AttackConfig, ImmunizedImage, loss_attn, loss_diff, loss_enc, loss_hs, pgd
from .autodiff import Tensor, backward, grad_check, no_grad
from .diffusion import (SpriteDataset, make_schedule, make_sprite_dataset, q_sample,
                        sample, train_denoiser)
from .dit import AttentionRecord, Denoiser, cross_block_mask, embed_caption
from .metrics import (MetricsReport, flow_magnitude, motion_report, optical_flow,
                      perturbation_visibility, ssim, temporal_ssim)
from .vae import VideoAutoencoder, replicate_image, train_autoencoder

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttentionRecord", "Denoiser", "ImmunizedImage", "MetricsReport",
    "SpriteDataset", "Tensor", "VideoAutoencoder", "backward", "cross_block_mask",
    "embed_caption", "flow_magnitude", "grad_check", "loss_attn", "loss_diff",
    "loss_enc", "loss_hs", "make_schedule", "make_sprite_dataset", "motion_report",
    "no_grad", "optical_flow", "perturbation_visibility", "pgd", "q_sample",
    "replicate_image", "sample", "ssim", "temporal_ssim", "train_autoencoder",
    "train_denoiser",
]
