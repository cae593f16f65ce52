"""Architecture configuration and the flat key=value config-file format."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from fractions import Fraction

__all__ = ["LisnConfig", "VARIANTS", "parse_fraction", "load_config_file", "apply_overrides"]

VARIANTS = ("default", "no_split", "no_rdb", "no_cca")


def parse_fraction(value):
    """Accept Fraction, int, float, or strings like '1/12' / '0.25'."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    return Fraction(value).limit_denominator(4096)


@dataclass(frozen=True)
class LisnConfig:
    """Hyperparameters of the split-block super-resolution network.

    ``width`` is the embedding width C (divisible by 4 so the C/2 and C/4
    splits are exact); ``ffn_ratio`` is the hidden expansion of the
    feed-forward stage; ``alpha1`` weights the edge term of the loss.
    """

    scale: int = 4
    width: int = 64
    n_blocks: int = 6
    shift_gamma: Fraction = field(default_factory=lambda: Fraction(1, 12))
    ffn_ratio: Fraction = field(default_factory=lambda: Fraction(5, 2))
    cca_reduction: int = 4
    variant: str = "default"
    alpha1: float = 0.1
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "shift_gamma", parse_fraction(self.shift_gamma))
        object.__setattr__(self, "ffn_ratio", parse_fraction(self.ffn_ratio))
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.width < 4 or self.width % 4 != 0:
            raise ValueError(f"width must be a positive multiple of 4, got {self.width}")
        if self.n_blocks < 1:
            raise ValueError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.alpha1 < 0:
            raise ValueError(f"alpha1 must be >= 0, got {self.alpha1}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.width % self.cca_reduction != 0:
            raise ValueError(
                f"width {self.width} not divisible by cca_reduction {self.cca_reduction}"
            )
        if self.shift_gamma < 0 or self.shift_gamma > Fraction(1, 4):
            raise ValueError(f"shift_gamma must lie in [0, 1/4], got {self.shift_gamma}")
        hidden = self.sbb_width * self.ffn_ratio
        if hidden != int(hidden) or hidden < 1:
            raise ValueError(
                f"ffn_ratio {self.ffn_ratio} gives non-integer hidden width for C={self.width}"
            )

    @property
    def sbb_width(self):
        return self.width if self.variant == "no_split" else self.width // 2

    @property
    def rdb_width(self):
        return self.width if self.variant == "no_split" else self.width // 4

    @property
    def ffn_hidden(self):
        return int(self.sbb_width * self.ffn_ratio)

    def to_dict(self):
        return {
            "scale": self.scale,
            "width": self.width,
            "n_blocks": self.n_blocks,
            "shift_gamma": str(self.shift_gamma),
            "ffn_ratio": str(self.ffn_ratio),
            "cca_reduction": self.cca_reduction,
            "variant": self.variant,
            "alpha1": self.alpha1,
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# keys accepted by config files and their parsers; training-loop fields are
# resolved by the CLI/workflow layer
_MODEL_KEYS = {
    "scale": int,
    "width": int,
    "n_blocks": int,
    "shift_gamma": parse_fraction,
    "ffn_ratio": parse_fraction,
    "cca_reduction": int,
    "variant": str,
    "alpha1": float,
    "in_channels": int,
}
_TRAIN_KEYS = {
    "epochs": int,
    "seed": int,
    "batch_size": int,
    "patch_size": int,
    "batches_per_epoch": int,
    "base_lr": float,
    "augment": lambda s: s.lower() in ("1", "true", "yes"),
    "val_every": int,
    "checkpoint_every": int,
}
CONFIG_KEYS = {**_MODEL_KEYS, **_TRAIN_KEYS}


def load_config_file(path):
    """Parse a flat key=value file; unknown keys are errors, not warnings."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = CONFIG_KEYS[key](value)
    return values


def apply_overrides(config, values):
    """Return ``config`` updated with any model keys present in ``values``."""
    updates = {k: v for k, v in values.items() if k in _MODEL_KEYS}
    return replace(config, **updates) if updates else config
