"""Flat `key = value` experiment configuration with strict key checking."""

from __future__ import annotations

import re
from typing import Optional


class ConfigError(ValueError):
    pass


def _parse_bool(v: str) -> bool:
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"expected on/off, got {v!r}")


# key -> (parser, default); None default means "required when used"
_KNOWN = {
    "seed": (int, 0),
    "target": (str, ""),
    "domains": (str, ""),
    "synth.height": (int, 24),
    "synth.width": (int, 24),
    "synth.blob_count": (int, 24),
    "synth.noise_std": (float, 0.3),
    "synth.unlabeled_fraction": (float, 0.1),
    "synth.signature_seed": (int, -1),  # -1 -> use `seed`
    "split.per_class": (int, 20),
    "model.k": (int, 3),
    "model.hidden": (int, 128),
    "train.base_lr": (float, 0.01),
    "train.iters": (int, 2000),
    "train.lr_gamma": (float, 0.1),
    "train.lr_step": (int, 0),  # 0 -> constant lr
    "train.batch_size": (int, 256),
    "train.cascade": (str, "auto"),
    "train.cascade_iters": (int, 1000),
    "train.momentum": (float, 0.9),
    "train.weight_decay": (float, 0.0005),
    "train.augment": (_parse_bool, True),
    "train.log_eval": (_parse_bool, True),
    "loss.kind": (str, "focal"),
    "loss.gamma": (float, 5.0),
    "loss.alpha": (float, 0.25),
    "loss.background": (int, 0),  # 0 -> no designated background class
}

_DOMAIN_KEY = re.compile(
    r"^domain\.([A-Za-z0-9_\-]+)\.(bands|classes|range_low|range_high)$")
_DOMAIN_FIELD_PARSERS = {
    "bands": int, "classes": int, "range_low": float, "range_high": float,
}


class Config:
    def __init__(self, values: Optional[dict] = None):
        self._values = dict(values or {})

    def set(self, key: str, raw: str) -> None:
        m = _DOMAIN_KEY.match(key)
        if m:
            parser = _DOMAIN_FIELD_PARSERS[m.group(2)]
        elif key in _KNOWN:
            parser = _KNOWN[key][0]
        else:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            self._values[key] = parser(raw.strip())
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {e}") from e

    def get(self, key: str):
        if key in self._values:
            return self._values[key]
        if key in _KNOWN:
            return _KNOWN[key][1]
        raise ConfigError(f"unknown config key {key!r}")

    def domain_names(self) -> list:
        raw = self.get("domains")
        return [n.strip() for n in raw.split(",") if n.strip()]

    def domain_field(self, name: str, fieldname: str):
        key = f"domain.{name}.{fieldname}"
        if key in self._values:
            return self._values[key]
        defaults = {"range_low": 0.4, "range_high": 2.5}
        if fieldname in defaults:
            return defaults[fieldname]
        raise ConfigError(f"missing required key {key!r}")


def parse_config(path) -> Config:
    cfg = Config()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = text.partition("=")
            try:
                cfg.set(key.strip(), value)
            except ConfigError as e:
                raise ConfigError(f"{path}:{lineno}: {e}") from e
    return cfg


def apply_overrides(cfg: Config, overrides) -> Config:
    """`--set key=value` command-line overrides beat file values."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg.set(key.strip(), value)
    return cfg
