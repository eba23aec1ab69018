"""Flat ``key = value`` run configuration (INI without sections)."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .model import ModelConfig
from .training import Schedule

__all__ = ["ConfigError", "RunConfig", "load_run_config", "parse_run_config"]


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _ints(v: str) -> Optional[tuple[int, ...]]:
    v = v.strip()
    if not v or v.lower() == "none":
        return None
    return tuple(int(x) for x in v.replace(",", " ").split())


@dataclass(frozen=True)
class RunConfig:
    data_dir: str
    out_dir: str = "runs/dmads"
    image_size: int = 256
    loss: str = "soft_iou"
    theta: float = 0.5
    lr: float = 1e-3
    batch_size: int = 4
    max_epochs: int = 400
    eval_every: int = 10
    patience: int = 50
    max_steps: Optional[int] = None
    seed: int = 0
    width_multiplier: float = 1.0
    patch_ratios: Optional[tuple[int, ...]] = None
    skip_wiring: str = "symmetric"
    upsample_mode: str = "bilinear"
    disable_mscfa: bool = False
    disable_frfb: bool = False
    disable_lfa: bool = False
    disable_deep_supervision: bool = False
    single_backbone_r18: bool = False

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            image_size=self.image_size,
            width_multiplier=self.width_multiplier,
            patch_ratios=self.patch_ratios,
            skip_wiring=self.skip_wiring,
            upsample_mode=self.upsample_mode,
            disable_mscfa=self.disable_mscfa,
            disable_frfb=self.disable_frfb,
            disable_lfa=self.disable_lfa,
            disable_deep_supervision=self.disable_deep_supervision,
            single_backbone_r18=self.single_backbone_r18,
            theta=self.theta,
            loss_kind=self.loss,
            seed=self.seed,
        )

    def schedule(self) -> Schedule:
        return Schedule(
            max_epochs=self.max_epochs,
            eval_every=self.eval_every,
            patience=self.patience,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.seed,
            max_steps=self.max_steps,
        )


_PARSERS = {
    int: int,
    float: float,
    bool: _bool,
    str: str.strip,
}


def parse_run_config(text: str, base_dir=None) -> RunConfig:
    """Parse config text; unknown keys are rejected, ``data_dir`` is required.

    Relative ``data_dir``/``out_dir`` resolve against ``base_dir`` when given.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    extra = [s for s in cp.sections() if s != "run"]
    if extra:
        raise ConfigError(f"malformed config: section headers are not allowed ([{extra[0]}])")
    raw = dict(cp["run"])
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    if "data_dir" not in raw:
        raise ConfigError("missing required key: data_dir")
    values = {}
    for key, text_value in raw.items():
        if key == "patch_ratios":
            values[key] = _ints(text_value)
        elif key == "max_steps":
            values[key] = None if text_value.strip().lower() in ("", "none") else int(text_value)
        else:
            default = fields[key].default
            kind = type(default) if default is not dataclasses.MISSING else str
            try:
                values[key] = _PARSERS[kind](text_value)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
    values.setdefault("out_dir", fields["out_dir"].default)
    if base_dir is not None:
        for key in ("data_dir", "out_dir"):
            if not Path(values[key]).is_absolute():
                values[key] = str(Path(base_dir) / values[key])
    cfg = RunConfig(**values)
    try:
        cfg.model_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_run_config(path) -> RunConfig:
    path = Path(path)
    return parse_run_config(path.read_text(), base_dir=path.parent)
