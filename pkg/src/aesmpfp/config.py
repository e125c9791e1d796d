"""Run configuration: a flat TOML table with strict keys and ablation presets.

Every field has a default, so an empty file is a valid desk-scale run.
Schedules (planning horizon and learning rate) are defined over
``total_steps`` and rescale exactly when the budget changes. The paper-scale
budget is ``PAPER_TOTAL_STEPS``.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .nnmath.optim import linear_lr as lr_schedule  # noqa: F401  (schedule shared with the optimizers)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DESK_TOTAL_STEPS = 200_000
PAPER_TOTAL_STEPS = 5_000_000
PRESETS = ("full", "aes_off", "aes_no_ptc", "aes_no_pice", "mpfp_off_train", "mpfp_off_eval")


@dataclass(frozen=True)
class RunConfig:
    # task
    scenario: str = "cross_room"  # bundled name or path to a scenario file
    total_steps: int = DESK_TOTAL_STEPS
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    gamma: float = 0.99
    # experience selection
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    window: int = 16
    max_fragments: int = 4
    lof_k: int = 10
    lof_lambda: float = 1.0
    p_tc: float = 1.0
    buffer_capacity: int = 100_000
    fragment_capacity: int = 8192
    # planning
    candidates: int = 50
    elites: int = 10
    cem_iters: int = 4
    h_min: int = 1
    h_max: int = 8
    sigma_floor: float = 0.05
    imagination: str = "decode_reencode"
    context: int = 8
    # learning
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    warmup_steps: int = 1000
    explore_std: float = 0.05
    sac_batch: int = 128
    sac_hidden: int = 256
    rssm_batch: int = 32
    rssm_every: int = 4
    rssm_hidden: int = 256
    rssm_h_dim: int = 128
    rssm_z_dim: int = 32
    # bookkeeping
    checkpoint_every: int = 10_000
    tcr_window: int = 20
    eval_episodes: int = 100
    # ablations
    aes_off: bool = False
    aes_no_ptc: bool = False
    aes_no_pice: bool = False
    mpfp_off_train: bool = False
    mpfp_off_eval: bool = False
    uniform_rssm_sampling: bool = False

    def validate(self):
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if not self.seeds or not all(_is_int(s) and s >= 0 for s in self.seeds):
            raise ConfigError(f"seeds must be a non-empty list of non-negative integers, got {self.seeds!r}")
        if min(self.w1, self.w2, self.w3) < 0:
            raise ConfigError("priority weights must be non-negative")
        if not 1 <= self.h_min <= self.h_max:
            raise ConfigError(f"need 1 <= h_min <= h_max, got {self.h_min}, {self.h_max}")
        if not 1 <= self.elites <= self.candidates:
            raise ConfigError(f"need 1 <= elites <= candidates, got {self.elites} / {self.candidates}")
        for name in ("window", "max_fragments", "lof_k", "buffer_capacity", "fragment_capacity", "cem_iters",
                     "context", "sac_batch", "sac_hidden", "rssm_batch", "rssm_every", "rssm_hidden",
                     "rssm_h_dim", "rssm_z_dim", "checkpoint_every", "tcr_window", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not (self.lr_start > 0 and self.lr_end > 0):
            raise ConfigError("learning rates must be positive")
        if self.warmup_steps < 0 or self.explore_std < 0 or self.sigma_floor < 0:
            raise ConfigError("warmup_steps, explore_std and sigma_floor must be non-negative")
        if self.imagination not in ("decode_reencode", "latent_prior"):
            raise ConfigError(f"unknown imagination mode {self.imagination!r}")
        return self

    @property
    def weights(self):
        """Priority weights after the ablation flags are applied."""
        if self.aes_off:
            return (0.0, 0.0, 0.0)
        return (0.0 if self.aes_no_pice else self.w1, 0.0 if self.aes_no_ptc else self.w2, self.w3)

    @property
    def uniform_sampling(self):
        return self.aes_off or self.uniform_rssm_sampling

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _check_type(name, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = _is_int(value)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{name}: expected {type(default).__name__}, got {value!r}")
    return value


def config_from_dict(doc):
    defaults = RunConfig()
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {k: _check_type(k, v, getattr(defaults, k)) for k, v in doc.items()}
    return RunConfig(**values).validate()


def loads_config(text):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config is not valid TOML: {e}") from None
    return config_from_dict(doc)


def load_config(path=None):
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig().validate()
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return loads_config(text)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps_config(cfg):
    """TOML text that :func:`loads_config` maps back to ``cfg``."""
    return "".join(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n" for f in dataclasses.fields(cfg))


def apply_preset(cfg, name):
    """``cfg`` with one of the ablation presets switched on."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    flags = {"full": {}, "aes_off": {"aes_off": True, "w1": 0.0, "w2": 0.0, "w3": 0.0, "uniform_rssm_sampling": True}}
    flags.update({p: {p: True} for p in PRESETS[2:]})
    return cfg.replace(**flags[name])

