"""Fit/pipeline configuration and its flat ``key = value`` text format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidInputError, SphereIOError
from .gaussians import DEFAULT_CUTOFF
from .harmonics import DEFAULT_DEGREE, DEFAULT_ORTH_LAMBDA, MAX_DEGREE
from .heads import DEFAULT_EMPTY_BIAS

FULL_GRID = (128, 128, 16)
FULL_K = 1024
DEFAULT_STEP = 2e-4
DEFAULT_CHANNELS = 128
VOXELS_PER_ANCHOR = 512
OPTIMIZERS = ("adam", "sgd")


@dataclass
class FitConfig:
    iterations: int = 500
    step_size: float = DEFAULT_STEP
    optimizer: str = "adam"
    seed: int = 0
    k: int | None = None  # None: FULL_K on full-size grids, else one anchor per 512 voxels
    sh_degree: int = DEFAULT_DEGREE
    orth_lambda: float = DEFAULT_ORTH_LAMBDA
    cutoff: float = DEFAULT_CUTOFF
    grid_dims: tuple[int, int, int] | None = None  # None: taken from the scene
    resolution: float | None = None
    origin: tuple[float, float, float] | None = None
    tolerance: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    feature_channels: int = DEFAULT_CHANNELS
    noise_sigma: float = 0.0
    sim_mode: str = "dot"
    empty_bias: float = DEFAULT_EMPTY_BIAS
    scale_min: float = 0.05
    scale_max: float = 2.0
    upsample: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.iterations < 0 or int(self.iterations) != self.iterations:
            raise InvalidInputError(f"iterations must be a non-negative integer, got {self.iterations}")
        if not self.step_size > 0:
            raise InvalidInputError(f"step_size must be positive, got {self.step_size}")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidInputError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.k is not None and self.k < 1:
            raise InvalidInputError(f"k must be positive, got {self.k}")
        if not 0 <= self.sh_degree <= MAX_DEGREE:
            raise InvalidInputError(f"sh_degree must be in [0, {MAX_DEGREE}], got {self.sh_degree}")
        if self.orth_lambda < 0:
            raise InvalidInputError("orth_lambda must be non-negative")
        if not self.cutoff > 0:
            raise InvalidInputError("cutoff must be positive")
        if self.feature_channels < 1 or self.noise_sigma < 0:
            raise InvalidInputError("feature_channels must be positive and noise_sigma non-negative")
        if self.sim_mode not in ("dot", "cosine"):
            raise InvalidInputError(f"sim_mode must be dot or cosine, got {self.sim_mode!r}")
        if not 0 < self.scale_min < self.scale_max:
            raise InvalidInputError("need 0 < scale_min < scale_max")
        if self.upsample < 1:
            raise InvalidInputError("upsample factor must be >= 1")

    def resolve_k(self, dims) -> int:
        if self.k is not None:
            return int(self.k)
        n = dims[0] * dims[1] * dims[2]
        if all(d >= p for d, p in zip(dims, FULL_GRID)):
            return FULL_K
        return max(1, min(FULL_K, n // VOXELS_PER_ANCHOR))

    def replace(self, **changes) -> "FitConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(FitConfig)}
_TUPLES = {"grid_dims": int, "origin": float}
_INTS = {"iterations", "seed", "k", "sh_degree", "feature_channels", "upsample"}
_STRS = {"optimizer", "sim_mode"}


def _format(name, value) -> str:
    if value is None:
        return "none"
    if name in _TUPLES:
        return " ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(name, text):
    text = text.strip()
    if text.lower() == "none":
        if name in ("k", "grid_dims", "resolution", "origin"):
            return None
        raise InvalidInputError(f"{name} cannot be none")
    try:
        if name in _TUPLES:
            parts = text.replace(",", " ").split()
            if len(parts) != 3:
                raise ValueError
            return tuple(_TUPLES[name](p) for p in parts)
        if name in _INTS:
            return int(text)
        if name in _STRS:
            return text
        return float(text)
    except ValueError:
        raise InvalidInputError(f"bad value for {name}: {text!r}") from None


def config_to_text(config: FitConfig) -> str:
    return "".join(f"{name} = {_format(name, getattr(config, name))}\n" for name in _FIELDS)


def config_from_text(text: str, base: FitConfig | None = None) -> FitConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise InvalidInputError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse(key, value)
    return (base or FitConfig()).replace(**values)


def read_config(path) -> FitConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SphereIOError(f"cannot read config {path}: {exc}") from exc
    return config_from_text(text)


def write_config(config: FitConfig, path) -> None:
    try:
        Path(path).write_text(config_to_text(config))
    except OSError as exc:
        raise SphereIOError(f"cannot write config {path}: {exc}") from exc
