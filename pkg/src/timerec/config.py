"""Run configuration: defaults, per-dataset presets, and the flat file format.

Config files are plain ``key = value`` lines ('#' starts a comment); values
on the command line override file values.  Every field is serialized into
checkpoints so a run can be reconstructed from its artifact alone.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, fields
from pathlib import Path

VALID_DATASETS = ("yoochoose", "diginetica", "canonical")
VALID_FRACTIONS = ("1/64", "1/4", "full")
VALID_LOSS_MODES = ("categorical", "literal")


@dataclass
class RunConfig:
    dataset: str = "canonical"
    fraction: str = "full"
    data_dir: str = "data"
    embedding_dim: int = 180
    glove_epochs: int = 100
    glove_window: int = 0  # 0 means "use the maximum session length"
    theta_multiplier: float = 2.0
    epochs: int = 12
    lr: float = 0.001
    lr_decay: float = 0.1
    decay_step: int = 4
    batch_size: int = 64
    dropout: float = 0.2
    l2: float = 1e-6
    seed: int = 42
    use_self_attention: bool = True
    use_time_attention: bool = True
    share_gru_weights: bool = False
    loss_mode: str = "categorical"
    deterministic: bool = True
    dtype: str = "float64"
    validation_fraction: float = 0.10
    min_item_support: int = 5
    min_session_len: int = 2
    test_boundary_days: int = 1
    cooccurrence_weighting: str = "inverse_distance"

    def __post_init__(self):
        if self.dataset not in VALID_DATASETS:
            raise ValueError(f"dataset must be one of {VALID_DATASETS}, got {self.dataset!r}")
        if self.fraction not in VALID_FRACTIONS:
            raise ValueError(f"fraction must be one of {VALID_FRACTIONS}, got {self.fraction!r}")
        if self.loss_mode not in VALID_LOSS_MODES:
            raise ValueError(f"loss mode must be one of {VALID_LOSS_MODES}, got {self.loss_mode!r}")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def learning_rate_for_epoch(self, epoch: int) -> float:
        """Epochs are 1-based; the rate decays once per decay_step epochs."""
        return self.lr * self.lr_decay ** ((epoch - 1) // self.decay_step)

    def fraction_denominator(self) -> int:
        return {"1/64": 64, "1/4": 4, "full": 1}[self.fraction]


def dataset_preset(dataset: str, fraction: str = "full") -> RunConfig:
    """Published tuning per dataset: batch size, dropout, decay step, split."""
    base = dict(dataset=dataset, fraction=fraction)
    if dataset == "yoochoose":
        if fraction == "1/4":
            return RunConfig(batch_size=512, dropout=0.1, decay_step=4,
                             test_boundary_days=1, **base)
        return RunConfig(batch_size=64, dropout=0.2, decay_step=4,
                         test_boundary_days=1, **base)
    if dataset == "diginetica":
        return RunConfig(batch_size=512, dropout=0.3, decay_step=6,
                         test_boundary_days=7, **base)
    return RunConfig(**base)


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def load_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines into a dict of typed values."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = stripped.split("=", 1)
            values[key.strip()] = _parse_value(value)
    return values


def write_config_file(config: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in config.as_dict().items():
            fh.write(f"{key} = {value}\n")
