"""Plain-text run configuration: `key = value` lines, `#` comments."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(","))


@dataclass
class RunConfig:
    backbone: str = "r18"
    pyramid_width: int = 320
    num_classes: int = 19
    dropout: float = 0.1
    dataset: str = ""
    palette: str = "cityscapes19"
    crop_h: int = 512
    crop_w: int = 1024
    batch_size: int = 4
    epochs: int = 1
    base_lr: float = 3e-4
    weight_decay: float = 5e-6
    power: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ohem_threshold: float = 0.7
    ohem_min_kept: int = 0  # 0 = derive from crop size (pixels / 16)
    ignore_index: int = 255
    aux_weight: float = 0.4
    aux_ohem: bool = True
    scales: tuple[float, ...] = (0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
    flip_prob: float = 0.5
    seed: int = 0
    checkpoint_every: int = 1
    out_dir: str = "runs/default"

    def min_kept(self) -> int:
        if self.ohem_min_kept > 0:
            return self.ohem_min_kept
        return max(1, self.crop_h * self.crop_w // 16)


# config-file key -> (dataclass field, converter); dotted keys keep the
# grouping readable in files
_KEY_MAP = {
    "backbone": ("backbone", str),
    "pyramid_width": ("pyramid_width", int),
    "num_classes": ("num_classes", int),
    "dropout": ("dropout", float),
    "dataset": ("dataset", str),
    "palette": ("palette", str),
    "crop_h": ("crop_h", int),
    "crop_w": ("crop_w", int),
    "batch_size": ("batch_size", int),
    "epochs": ("epochs", int),
    "lr": ("base_lr", float),
    "base_lr": ("base_lr", float),
    "weight_decay": ("weight_decay", float),
    "power": ("power", float),
    "beta1": ("beta1", float),
    "beta2": ("beta2", float),
    "adam_eps": ("adam_eps", float),
    "ohem.threshold": ("ohem_threshold", float),
    "ohem.min_kept": ("ohem_min_kept", int),
    "ignore_index": ("ignore_index", int),
    "aux_weight": ("aux_weight", float),
    "aux_ohem": ("aux_ohem", _parse_bool),
    "scales": ("scales", _parse_floats),
    "flip_prob": ("flip_prob", float),
    "seed": ("seed", int),
    "checkpoint_every": ("checkpoint_every", int),
    "out_dir": ("out_dir", str),
}


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEY_MAP:
            raise ConfigError(f"{source} line {lineno}: unknown key {key!r}")
        attr, converter = _KEY_MAP[key]
        try:
            setattr(cfg, attr, converter(value))
        except ValueError as exc:
            raise ConfigError(f"{source} line {lineno}: bad value for {key!r}: {exc}") from exc
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def dump_config(cfg: RunConfig) -> str:
    reverse = {attr: key for key, (attr, _) in _KEY_MAP.items()}
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{reverse.get(f.name, f.name)} = {value}")
    return "\n".join(lines) + "\n"
