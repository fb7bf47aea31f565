"""Experiment orchestration: training, the method-comparison table, the
perturbation-budget sweep, and the two ablations.

Artifacts land under {output_dir}/{run_id}/ with deterministic names:
checkpoints/, table.csv|json, sweep.csv|json|svg, ablate_*.csv|json, and one
{image_id}/{method}/eps{N}/ directory per evaluated cell. All numeric content
except the wall-clock column is reproducible from the config seed.
"""

import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import diffusion, metrics, ppm
from .attack import AttackConfig, pgd
from .checkpoint import load_checkpoint, save_checkpoint
from .diffusion import make_schedule, make_sprite_dataset, sample
from .dit import Denoiser
from .errors import MissingCheckpointError, UsageError
from .vae import VideoAutoencoder, train_autoencoder

UNPROTECTED = "unprotected"


@dataclass
class ReportRow:
    image_id: str
    method: str
    eps: int
    temporal_ssim: float
    flow_magnitude: float
    linf_delta: float
    l2_delta: float
    latent_distance: float
    seconds: float


REPORT_FIELDS = [f.name for f in fields(ReportRow)]


def run_root(config):
    return Path(config.output_dir) / config.run_id


def checkpoint_paths(config):
    root = run_root(config) / "checkpoints"
    return root / "vae.ckpt", root / "denoiser.ckpt"


def sampling_seed_for(image_index, config):
    # independent of attack method/epsilon so arms stay comparable
    return config.seed + 100 + image_index


def attack_seed_for(image_index, method, config):
    from .attack import LOSS_KINDS

    return config.seed + 1000 + image_index * len(LOSS_KINDS) + LOSS_KINDS.index(method)


def build_models(config):
    vae = VideoAutoencoder(seed=config.seed + 1)
    model = Denoiser(d_model=config.d_model, layers=config.layers, heads=config.heads,
                     n_text=config.n_text, t_max=config.t_train, seed=config.seed + 2)
    sched = make_schedule(config.t_train, config.beta_min, config.beta_max)
    return vae, model, sched


def dataset_for(config):
    return make_sprite_dataset(config.dataset_size, config.frames, config.height,
                               config.width, seed=config.seed)


def train_stack(config):
    """Train VAE then denoiser on the sprite dataset; persist checkpoints."""
    vae, model, sched = build_models(config)
    dataset = dataset_for(config)
    vae_log = train_autoencoder(vae, dataset.videos, epochs=config.vae_epochs,
                                lr=config.vae_lr, seed=config.seed + 1)
    den_log = diffusion.train_denoiser(model, vae, dataset, sched,
                                       epochs=config.denoiser_epochs,
                                       lr=config.denoiser_lr, seed=config.seed + 2)
    vae_path, den_path = checkpoint_paths(config)
    vae_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(vae.state_dict(), vae_path)
    save_checkpoint(model.state_dict(), den_path)
    logs = {"vae_loss": vae_log, "denoiser_loss": den_log}
    with open(run_root(config) / "training_log.json", "w") as fh:
        json.dump(logs, fh)
    return vae, model, sched, dataset


def load_stack(config):
    """Load trained models; raises MissingCheckpointError when absent."""
    vae_path, den_path = checkpoint_paths(config)
    for p in (vae_path, den_path):
        if not p.exists():
            raise MissingCheckpointError(
                f"missing checkpoint {p}; run the 'train' subcommand first")
    vae, model, sched = build_models(config)
    vae.load_state_dict(load_checkpoint(vae_path))
    model.load_state_dict(load_checkpoint(den_path))
    return vae, model, sched


def eval_images(config, dataset):
    """First frames of the leading dataset videos, with their captions."""
    out = []
    for i in range(config.images):
        out.append((f"img{i:02d}", dataset.videos[i][0], dataset.captions[i]))
    return out


def save_video_frames(video, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(video):
        ppm.save_image(frame, directory / f"frame_{t:03d}.ppm")
    ppm.save_image(np.concatenate(list(video), axis=2), directory / "montage.ppm")


def load_video_frames(directory):
    paths = sorted(Path(directory).glob("frame_*.ppm"))
    if not paths:
        raise UsageError(f"no frame_*.ppm files found in {directory}")
    return np.stack([ppm.load_image(p) for p in paths])


def _cell_dir(config, image_id, method, eps):
    return run_root(config) / image_id / method / f"eps{eps}"


def _evaluate_cell(config, vae, model, sched, image_id, image, caption, method, eps,
                   attack_caption=None, method_label=None):
    """Run one (image, method, eps) cell: attack if needed, regenerate, measure.

    Generation always uses the image's own caption; `attack_caption` only
    changes what the optimization loss conditions on (the prompt ablation).
    """
    t0 = time.perf_counter()
    label = method_label or method
    seed = sampling_seed_for(int(image_id[3:]), config)
    cell = _cell_dir(config, image_id, label, eps)
    if method == UNPROTECTED:
        source = np.asarray(image)
        linf = l2 = latent = 0.0
    else:
        acfg = AttackConfig(loss_kind=method, eps_pixels=eps,
                            iterations=config.iterations,
                            step_size=config.step_size,
                            caption=caption if attack_caption is None else attack_caption,
                            mc_samples=config.mc_samples,
                            seed=attack_seed_for(int(image_id[3:]), method, config))
        result = pgd(image, acfg, model, vae, sched, frames=config.frames)
        source = result.adversarial
        cell.mkdir(parents=True, exist_ok=True)
        ppm.save_image(source, cell / "x_adv.ppm")
        with open(cell / "loss_log.json", "w") as fh:
            json.dump({"loss": result.loss_log, "delta_inf": result.delta_inf_log}, fh)
        linf, l2, latent = metrics.perturbation_visibility(result.original, source, vae,
                                                           config.frames)
    video = sample(model, vae, source, caption, sched, steps=config.steps,
                   frames=config.frames, seed=seed)
    save_video_frames(video, cell)
    report = metrics.motion_report(video)
    row = ReportRow(image_id=image_id, method=label, eps=eps,
                    temporal_ssim=report.temporal_ssim,
                    flow_magnitude=report.flow_magnitude,
                    linf_delta=linf, l2_delta=l2, latent_distance=latent,
                    seconds=time.perf_counter() - t0)
    with open(cell / "metrics.json", "w") as fh:
        json.dump(asdict(row), fh)
    return row


def write_report(rows, csv_path, json_path):
    """Emit rows as CSV and JSON carrying identical numeric values (floats are
    serialized with repr in both)."""
    lines = [",".join(REPORT_FIELDS)]
    for row in rows:
        d = asdict(row)
        lines.append(",".join(repr(d[k]) if isinstance(d[k], float) else str(d[k])
                              for k in REPORT_FIELDS))
    Path(csv_path).write_text("\n".join(lines) + "\n")
    with open(json_path, "w") as fh:
        json.dump([asdict(r) for r in rows], fh, indent=1)


def format_report_row(row):
    """One fixed-width display line per report row."""
    return (f"{row.image_id:>7s} {row.method:>11s} eps={row.eps:<3d} "
            f"temporal_ssim={row.temporal_ssim:.4f} flow={row.flow_magnitude:.4f} "
            f"linf={row.linf_delta:.1f} l2={row.l2_delta:.4f} "
            f"latent={row.latent_distance:.4f} [{row.seconds:.1f}s]")


def run_table(config, vae=None, model=None, sched=None, dataset=None):
    """The method-comparison table: one unprotected row plus one row per
    configured attack method for every evaluation image."""
    if vae is None:
        vae, model, sched = load_stack(config)
    if dataset is None:
        dataset = dataset_for(config)
    rows = []
    for image_id, image, caption in eval_images(config, dataset):
        img_dir = run_root(config) / image_id
        img_dir.mkdir(parents=True, exist_ok=True)
        ppm.save_image(image, img_dir / "input.ppm")
        (img_dir / "caption.txt").write_text(caption + "\n")
        rows.append(_evaluate_cell(config, vae, model, sched, image_id, image, caption,
                                   UNPROTECTED, 0))
        for method in config.methods:
            rows.append(_evaluate_cell(config, vae, model, sched, image_id, image,
                                       caption, method, config.eps_pixels))
    root = run_root(config)
    write_report(rows, root / "table.csv", root / "table.json")
    return rows


def svg_line_plot(points, path, x_label, y_label, title):
    """Hand-rolled SVG line chart; one polyline vertex per point."""
    width, height, margin = 480, 320, 50
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = 0.0, max(max(ys), 1e-9)
    span_x = (x_hi - x_lo) or 1.0

    def px(x):
        return margin + (x - x_lo) / span_x * (width - 2 * margin)

    def py(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
             f'y2="{height - margin}" stroke="black"/>',
             f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
             f'stroke="black"/>',
             f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" '
             f'font-size="12">{x_label}</text>',
             f'<text x="14" y="{height / 2}" text-anchor="middle" font-size="12" '
             f'transform="rotate(-90 14 {height / 2})">{y_label}</text>']
    for x in xs:
        parts.append(f'<text x="{px(x)}" y="{height - margin + 16}" text-anchor="middle" '
                     f'font-size="10">{x:g}</text>')
    for frac in (0.0, 0.5, 1.0):
        y = y_lo + frac * (y_hi - y_lo)
        parts.append(f'<text x="{margin - 6}" y="{py(y) + 3}" text-anchor="end" '
                     f'font-size="10">{y:.3f}</text>')
    coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in points)
    parts.append(f'<polyline points="{coords}" fill="none" stroke="steelblue" '
                 f'stroke-width="2"/>')
    for x, y in points:
        parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="steelblue"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def run_epsilon_sweep(config, eps_list=None, vae=None, model=None, sched=None,
                      dataset=None):
    """Attention attack at each budget; emits per-eps rows, the flow-vs-eps
    line plot, and the final generated frame for every budget."""
    eps_list = sorted(eps_list if eps_list is not None else config.eps_list)
    if not eps_list:
        raise UsageError("epsilon sweep needs a non-empty eps list")
    if vae is None:
        vae, model, sched = load_stack(config)
    if dataset is None:
        dataset = dataset_for(config)
    rows = []
    for image_id, image, caption in eval_images(config, dataset):
        for eps in eps_list:
            row = _evaluate_cell(config, vae, model, sched, image_id, image, caption,
                                 "attn_full", eps)
            cell = _cell_dir(config, image_id, "attn_full", eps)
            frames = sorted(cell.glob("frame_*.ppm"))
            ppm.save_image(ppm.load_image(frames[-1]), cell / "final_frame.ppm")
            rows.append(row)
    rows.sort(key=lambda r: (r.eps, r.image_id))
    root = run_root(config)
    write_report(rows, root / "sweep.csv", root / "sweep.json")
    means = [(eps, float(np.mean([r.flow_magnitude for r in rows if r.eps == eps])))
             for eps in eps_list]
    svg_line_plot(means, root / "sweep.svg", "pixel budget",
                  "mean flow magnitude (px/frame)", "flow vs perturbation budget")
    return rows


def run_ablations(config, vae=None, model=None, sched=None, dataset=None):
    """Caption-vs-null and full-vs-cross comparisons, sharing sampling seeds
    across arms so only the optimization target differs."""
    if vae is None:
        vae, model, sched = load_stack(config)
    if dataset is None:
        dataset = dataset_for(config)
    caption_rows, attn_rows = [], []
    for image_id, image, caption in eval_images(config, dataset):
        with_cap = _evaluate_cell(config, vae, model, sched, image_id, image, caption,
                                  "attn_full", config.eps_pixels)
        caption_rows.append(with_cap)
        caption_rows.append(_evaluate_cell(config, vae, model, sched, image_id, image,
                                           caption, "attn_full", config.eps_pixels,
                                           attack_caption="",
                                           method_label="attn_full_null"))
        attn_rows.append(with_cap)
        attn_rows.append(_evaluate_cell(config, vae, model, sched, image_id, image,
                                        caption, "attn_cross", config.eps_pixels))
    root = run_root(config)
    write_report(caption_rows, root / "ablate_caption.csv", root / "ablate_caption.json")
    write_report(attn_rows, root / "ablate_attention.csv", root / "ablate_attention.json")
    return caption_rows, attn_rows
