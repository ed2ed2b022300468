"""Run configuration: every stage hyperparameter in one flat record,
serializable to and from `key=value` text."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

BANDWIDTH_MIN = 0.01
BANDWIDTH_MAX = 0.1


@dataclass
class RunConfig:
    # geometry
    ball_radius: float = 0.06
    voxel_resolution: int = 88
    max_geo_edges: int = 15
    k_bones: int = 5
    # clustering
    ms_train_iters: int = 10
    ms_eps: float = 1e-3
    bandwidth_override: float | None = None
    use_symmetry: bool = True
    # joint stage
    attn_epochs: int = 50
    attn_lr: float = 1e-4
    joint_steps: int = 2000
    joint_lr: float = 1e-6
    joint_batch: int = 2
    joint_target_cd: float | None = None
    joint_attn_lr_scale: float = 1.0
    joint_bw_lr_scale: float = 1.0
    joint_row_clip: float | None = 4.0
    joint_cosine_decay: bool = False
    # connectivity stage
    conn_steps: int = 500
    conn_lr: float = 1e-3
    conn_batch: int = 12
    ohem_ratio: int = 3
    # skinning stage
    skin_steps: int = 1000
    skin_lr: float = 1e-4
    skin_batch: int = 2
    skin_target_l1: float | None = None
    # misc
    seed: int = 0
    eval_every: int = 50
    data_dir: str = ""
    checkpoint_dir: str = ""

    def validate(self):
        if self.ball_radius <= 0:
            raise ConfigError(f"ball_radius must be positive, got {self.ball_radius}")
        if self.voxel_resolution < 8:
            raise ConfigError(f"voxel_resolution must be >= 8, got {self.voxel_resolution}")
        if self.max_geo_edges < 1:
            raise ConfigError("max_geo_edges must be >= 1")
        if self.k_bones < 1:
            raise ConfigError("k_bones must be >= 1")
        if self.ms_train_iters < 1:
            raise ConfigError("ms_train_iters must be >= 1")
        if self.ms_eps <= 0:
            raise ConfigError("ms_eps must be positive")
        if self.bandwidth_override is not None and not (
            BANDWIDTH_MIN <= self.bandwidth_override <= BANDWIDTH_MAX
        ):
            raise ConfigError(
                f"bandwidth {self.bandwidth_override} outside valid range "
                f"[{BANDWIDTH_MIN}, {BANDWIDTH_MAX}]"
            )
        for name in ("attn_lr", "joint_lr", "conn_lr", "skin_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("attn_epochs", "joint_steps", "conn_steps", "skin_steps",
                     "joint_batch", "conn_batch", "skin_batch", "ohem_ratio"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                v = "none"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path):
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        spec = {f.name: f for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in spec:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            kwargs[key] = _parse_value(key, value)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())


_INT_KEYS = {
    "voxel_resolution", "max_geo_edges", "k_bones", "ms_train_iters",
    "attn_epochs", "joint_steps", "joint_batch", "conn_steps", "conn_batch",
    "ohem_ratio", "skin_steps", "skin_batch", "seed", "eval_every",
}
_FLOAT_KEYS = {
    "ball_radius", "ms_eps", "bandwidth_override", "attn_lr", "joint_lr",
    "joint_target_cd", "conn_lr", "skin_lr", "skin_target_l1",
    "joint_attn_lr_scale", "joint_bw_lr_scale", "joint_row_clip",
}
_BOOL_KEYS = {"use_symmetry", "joint_cosine_decay"}


def _parse_value(key: str, value: str):
    if value.lower() == "none":
        return None
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _BOOL_KEYS:
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ConfigError(f"bad boolean for {key}: {value!r}")
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {value!r}") from e
    return value
