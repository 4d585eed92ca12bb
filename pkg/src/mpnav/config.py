"""Key-value config file.

One ``key = value`` per line, ``#`` starts a comment::

    detect_url = http://localhost:8001
    timeout = 20
    beta0 = 0.5
    gamma = 0.2
"""
from __future__ import annotations

import configparser

from .errors import ValidationError

DEFAULTS = {
    "beta0": 0.5,
    "beta1": 0.1,
    "beam_width": 16,
    "beam_width_cap": 200,
    "oracle_bound": 5000,
    "gamma": 0.2,
    "seed": 0,
    "jobs": 1,
    "threshold": 3.0,
    "timeout": 30.0,
    "retries": 2,
    "extract_url": None,
    "detect_url": None,
    "caption_url": None,
}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if default is None:
        return raw or None
    try:
        return type(default)(raw)
    except ValueError:
        raise ValidationError(f"config key {key!r}: cannot read {raw!r} as {type(default).__name__}") from None


def parse_config(text: str) -> dict:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string("[main]\n" + text)
    except configparser.Error as exc:
        raise ValidationError(f"bad config file: {exc}") from exc
    out = {}
    for key, raw in cp["main"].items():
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ValidationError(f"unknown config key {key!r}")
        out[key] = _coerce(key, raw.strip())
    return out


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def resolve(flags: dict, path=None) -> dict:
    """flags > config file > defaults. ``None`` flags count as unset."""
    merged = dict(DEFAULTS)
    if path:
        merged.update(load_config(path))
    merged.update({k: v for k, v in flags.items() if k in DEFAULTS and v is not None})
    return merged
