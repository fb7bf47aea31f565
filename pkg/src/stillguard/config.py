"""Experiment configuration: documented defaults, strict INI-style overrides.

Every key lives in a section; unknown sections or keys are configuration
errors so typos cannot silently fall back to defaults. The STILLGUARD_OUT
environment variable overrides the configured output root.
"""

import configparser
import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError

OUTPUT_ENV_VAR = "STILLGUARD_OUT"


def _int_list(raw):
    return [int(tok) for tok in raw.replace(",", " ").split()]


def _str_list(raw):
    return [tok for tok in raw.replace(",", " ").split()]


@dataclass
class ExperimentConfig:
    # [model]
    height: int = 32
    width: int = 32
    frames: int = 8
    d_model: int = 64
    layers: int = 3
    heads: int = 2
    n_text: int = 4
    # [schedule]
    t_train: int = 50
    beta_min: float = 1e-4
    beta_max: float = 0.09
    # [training]
    dataset_size: int = 50
    vae_epochs: int = 40
    vae_lr: float = 3e-3
    denoiser_epochs: int = 200
    denoiser_lr: float = 2e-3
    # [attack]
    eps_pixels: int = 16
    iterations: int = 300
    step_size: float = 0.0  # 0 selects the default eps/(255*10)
    mc_samples: int = 2
    methods: list = field(default_factory=lambda: ["enc", "hs", "diff", "attn_full",
                                                   "attn_cross"])
    # [sampling]
    steps: int = 10
    # [evaluation]
    images: int = 8
    # [sweep]
    eps_list: list = field(default_factory=lambda: [2, 4, 8, 16, 32])
    # [output]
    dir: str = "runs"
    run_id: str = "run"
    # [experiment]
    seed: int = 0

    @property
    def output_dir(self):
        return os.environ.get(OUTPUT_ENV_VAR, self.dir)


_SECTIONS = {
    "model": ["height", "width", "frames", "d_model", "layers", "heads", "n_text"],
    "schedule": ["t_train", "beta_min", "beta_max"],
    "training": ["dataset_size", "vae_epochs", "vae_lr", "denoiser_epochs", "denoiser_lr"],
    "attack": ["eps_pixels", "iterations", "step_size", "mc_samples", "methods"],
    "sampling": ["steps"],
    "evaluation": ["images"],
    "sweep": ["eps_list"],
    "output": ["dir", "run_id"],
    "experiment": ["seed"],
}

_FIELD_KIND = {f.name: type(getattr(ExperimentConfig(), f.name))
               for f in fields(ExperimentConfig)}


def _parse_value(name, raw):
    if name == "eps_list":
        return _int_list(raw)
    if name == "methods":
        return _str_list(raw)
    kind = _FIELD_KIND[name]
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {name}={raw!r} as {kind.__name__}") from None


def _validate(cfg):
    from .attack import LOSS_KINDS

    if cfg.height % 4 or cfg.width % 4:
        raise ConfigError(f"height/width must be divisible by 4, got "
                          f"{cfg.height}x{cfg.width}")
    if cfg.frames < 2:
        raise ConfigError(f"frames must be >= 2 for motion metrics, got {cfg.frames}")
    if cfg.d_model % cfg.heads:
        raise ConfigError(f"d_model {cfg.d_model} not divisible by heads {cfg.heads}")
    if cfg.images < 1 or cfg.images > cfg.dataset_size:
        raise ConfigError(f"evaluation images must be in [1, dataset_size], got {cfg.images}")
    for m in cfg.methods:
        if m not in LOSS_KINDS:
            raise ConfigError(f"unknown attack method {m!r}; expected one of {LOSS_KINDS}")
    if not cfg.eps_list:
        raise ConfigError("sweep eps_list must not be empty")
    if any(e < 1 for e in cfg.eps_list):
        raise ConfigError(f"sweep eps values must be >= 1, got {cfg.eps_list}")
    return cfg


def load_config(path=None, seed=None):
    """Build an ExperimentConfig from defaults plus an optional INI file.

    `seed` (e.g. from the command line) overrides the configured master seed.
    """
    cfg = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from None
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                setattr(cfg, key, _parse_value(key, raw))
    if seed is not None:
        cfg.seed = int(seed)
    return _validate(cfg)


def write_default_config(path):
    """Emit a fully commented config with every default value."""
    cfg = ExperimentConfig()
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            val = getattr(cfg, key)
            if isinstance(val, list):
                val = ",".join(str(v) for v in val)
            lines.append(f"{key} = {val}")
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
