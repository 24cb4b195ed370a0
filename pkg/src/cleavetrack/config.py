"""Flat ``key = value`` pipeline configuration."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .cleave import CleaveConfig
from .generation import GenConfig
from .learn import LossWeights
from .reconnect import GateConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class PipelineConfig:
    # generation
    alpha: float = 1.0
    beta: float = 1.0
    match_cost_max: float = 1.5
    nms_thresh: float = 0.6
    image_width: int = 1280
    image_height: int = 720
    max_lost_age: int = 30
    conf_floor: float = 0.0
    motion: str = "const"  # const | recurrent
    motion_weights: str = ""
    # cleaving
    split_thresh: float = 0.5
    min_segment: int = 2
    recursive: bool = True
    # re-connection
    mu: float = 0.0
    max_gap: int = 120
    sim_thresh: float = 1.0
    smooth_window: int = 5
    # training
    lambda_v: float = 1.0
    lambda_id: float = 1.0
    lambda_loc_v: float = 0.1
    lambda_loc_id: float = 0.1
    eta: float = 1.0
    delta: float = 0.5
    lr: float = 1e-3
    train_identities: int = 30
    train_per_identity: int = 20
    train_epochs: int = 50
    train_pairs_per_epoch: int = 32
    # synthetic scenes
    scene_identities: int = 20
    scene_frames: int = 500
    scene_miss_rate: float = 0.05
    scene_jitter: float = 1.0
    scene_crossings: int = 12
    scene_occlusion: bool = True
    embedding_dim: int = 128
    sigma_e: float = 0.1
    # evaluation
    iou_min: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.motion not in ("const", "recurrent"):
            raise ConfigError(f"motion must be 'const' or 'recurrent', got {self.motion!r}")
        if self.motion == "recurrent" and not self.motion_weights:
            raise ConfigError("motion = recurrent needs motion_weights")
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ConfigError("smooth_window must be odd and positive")
        if self.sim_thresh <= 0:
            raise ConfigError("sim_thresh must be positive")
        if not 0 < self.iou_min <= 1:
            raise ConfigError("iou_min must lie in (0, 1]")
        try:
            self.gen(), self.cleave(), self.gate(), self.loss()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def gen(self) -> GenConfig:
        return GenConfig(
            self.alpha,
            self.beta,
            self.match_cost_max,
            self.nms_thresh,
            self.image_width,
            self.image_height,
            self.max_lost_age,
            self.conf_floor,
        )

    def cleave(self) -> CleaveConfig:
        return CleaveConfig(self.split_thresh, self.min_segment, self.recursive)

    def gate(self) -> GateConfig:
        return GateConfig(self.mu, self.max_gap, self.image_width, self.image_height)

    def loss(self) -> LossWeights:
        return LossWeights(self.lambda_v, self.lambda_id, self.lambda_loc_v, self.lambda_loc_id, self.eta, self.delta)

    def dumps(self) -> str:
        """Canonical text: every key, sorted."""
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in sorted(fields(self), key=lambda f: f.name))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **kw)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


# annotations are strings under postponed evaluation
_TYPES = {f.name: {"bool": bool, "int": int, "float": float}.get(str(f.type), str) for f in fields(PipelineConfig)}


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    """Parse and validate; unknown or repeated keys are errors."""
    vals: dict[str, object] = {}
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{no}: expected 'key = value'")
        key, val = (p.strip() for p in s.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        if key in vals:
            raise ConfigError(f"{source}:{no}: key {key!r} given twice")
        typ = _TYPES[key]
        try:
            if typ is bool:
                vals[key] = _bool(val)
            elif typ is int:
                vals[key] = int(val)
            elif typ is float:
                vals[key] = float(val)
            else:
                vals[key] = val
        except ValueError as e:
            raise ConfigError(f"{source}:{no}: bad value for {key}: {e}") from None
    return PipelineConfig(**vals)


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))
