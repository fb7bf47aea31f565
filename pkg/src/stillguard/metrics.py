"""Motion and visibility metrics: windowed SSIM, inter-frame SSIM difference,
dense block-matching optical flow, and perturbation visibility measures.

All functions are pure; identical inputs give bitwise-identical outputs.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import DimensionError, UsageError
from .vae import replicate_image

SSIM_WINDOW = 8
SSIM_STRIDE = 4
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

PATCH_RADIUS = 2
SEARCH_RADIUS = 3

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class MetricsReport:
    temporal_ssim: float
    flow_magnitude: float
    linf_delta: float = 0.0
    l2_delta: float = 0.0
    latent_distance: float = 0.0
    ssim_per_pair: list = field(default_factory=list)
    flow_per_pair: list = field(default_factory=list)


def _windows(channel):
    view = np.lib.stride_tricks.sliding_window_view(channel, (SSIM_WINDOW, SSIM_WINDOW))
    return view[::SSIM_STRIDE, ::SSIM_STRIDE]


def ssim(a, b):
    """SSIM with uniform 8x8 windows at stride 4, averaged over windows and
    channels; unit dynamic range constants."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"ssim frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise UsageError(f"ssim expects [C, H, W] frames, got {a.shape}")
    if a.shape[1] < SSIM_WINDOW or a.shape[2] < SSIM_WINDOW:
        raise UsageError(f"frames must be at least {SSIM_WINDOW}px, got {a.shape}")
    total = 0.0
    count = 0
    for c in range(a.shape[0]):
        wa, wb = _windows(a[c]), _windows(b[c])
        mu_a = wa.mean(axis=(-1, -2))
        mu_b = wb.mean(axis=(-1, -2))
        var_a = (wa * wa).mean(axis=(-1, -2)) - mu_a * mu_a
        var_b = (wb * wb).mean(axis=(-1, -2)) - mu_b * mu_b
        cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
        smap = num / den
        total += smap.sum()
        count += smap.size
    return float(total / count)


def temporal_ssim(video):
    """Mean of (1 - ssim) over consecutive frame pairs; 0 for a static video."""
    video = np.asarray(video, dtype=np.float64)
    if video.shape[0] < 2:
        raise UsageError(f"temporal_ssim needs at least 2 frames, got {video.shape[0]}")
    vals = [1.0 - ssim(video[t], video[t + 1]) for t in range(video.shape[0] - 1)]
    return float(np.mean(vals))


def _candidate_order():
    cands = [(dy, dx) for dy in range(-SEARCH_RADIUS, SEARCH_RADIUS + 1)
             for dx in range(-SEARCH_RADIUS, SEARCH_RADIUS + 1)]
    cands.sort(key=lambda c: (c[0] * c[0] + c[1] * c[1],
                              (c[0] + SEARCH_RADIUS) * (2 * SEARCH_RADIUS + 1)
                              + c[1] + SEARCH_RADIUS))
    dy = np.array([c[0] for c in cands], dtype=np.int64)
    dx = np.array([c[1] for c in cands], dtype=np.int64)
    return dy, dx


_CAND_DY, _CAND_DX = _candidate_order()


def to_gray(frame):
    return np.tensordot(LUMA, np.asarray(frame, dtype=np.float64), axes=([0], [0]))


def optical_flow(a, b):
    """Dense integer displacement field from frame a to frame b.

    Exhaustive 5x5-patch SAD search within radius 3; ties prefer the smallest
    displacement magnitude, then row-major candidate order."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"flow frame shapes differ: {a.shape} vs {b.shape}")
    ga = np.ascontiguousarray(to_gray(a))
    gb = np.ascontiguousarray(to_gray(b))
    return kernels.block_match(ga, gb, _CAND_DY, _CAND_DX, PATCH_RADIUS)


def flow_magnitude(video):
    """Mean per-pixel displacement length, averaged over consecutive pairs."""
    video = np.asarray(video, dtype=np.float64)
    if video.shape[0] < 2:
        raise UsageError(f"flow_magnitude needs at least 2 frames, got {video.shape[0]}")
    mags = []
    for t in range(video.shape[0] - 1):
        flow = optical_flow(video[t], video[t + 1]).astype(np.float64)
        mags.append(float(np.sqrt((flow * flow).sum(axis=-1)).mean()))
    return float(np.mean(mags))


def perturbation_visibility(x, x_adv, vae, frames):
    """(L-inf on the 0-255 scale, RMS pixel difference, normalized encoder
    latent distance) between an image and its immunized version."""
    x, x_adv = np.asarray(x, dtype=np.float64), np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise DimensionError(f"image shapes differ: {x.shape} vs {x_adv.shape}")
    diff = x - x_adv
    linf = float(np.abs(diff).max() * 255.0)
    l2 = float(np.sqrt((diff * diff).mean()))
    with ad.no_grad():
        za = vae.encode(replicate_image(x, frames)).data
        zb = vae.encode(replicate_image(x_adv, frames)).data
    base = float(np.sqrt((za * za).sum()))
    dist = float(np.sqrt(((za - zb) * (za - zb)).sum()))
    latent = dist / base if base > 0 else 0.0
    return linf, l2, latent


def motion_report(video):
    """Per-video motion metrics plus the per-pair breakdowns."""
    video = np.asarray(video, dtype=np.float64)
    if video.shape[0] < 2:
        raise UsageError(f"motion metrics need at least 2 frames, got {video.shape[0]}")
    ssim_pairs, flow_pairs = [], []
    for t in range(video.shape[0] - 1):
        ssim_pairs.append(1.0 - ssim(video[t], video[t + 1]))
        flow = optical_flow(video[t], video[t + 1]).astype(np.float64)
        flow_pairs.append(float(np.sqrt((flow * flow).sum(axis=-1)).mean()))
    return MetricsReport(temporal_ssim=float(np.mean(ssim_pairs)),
                         flow_magnitude=float(np.mean(flow_pairs)),
                         ssim_per_pair=ssim_pairs, flow_per_pair=flow_pairs)
