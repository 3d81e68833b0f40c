"""Text key-value configuration for the command-line tools.

Files hold ``key = value`` lines (``#`` comments allowed); command-line
``-o key=value`` overrides beat file values.  Unknown keys are rejected
and every value is validated against its type on load.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from fractions import Fraction


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_fraction(s: str) -> Fraction:
    return Fraction(s.strip())


def _parse_int_tuple(s: str) -> tuple[int, ...]:
    s = s.strip()
    if not s:
        return ()
    return tuple(int(x) for x in s.split(","))


@dataclass
class Config:
    """Every tunable in one place; defaults are desk-scale (5x5)."""

    board_size: int = 5
    c_puct: float = 1.5
    alpha: float = 0.5
    beta: float = 0.0
    b_s: int = 800
    b_l: int = 100
    r: Fraction = Fraction(1, 2)
    budget_b: int = 400
    sims: int = 800
    tau_moves: int = 0              # 0 = default ceil(0.3 * size^2)
    dirichlet_alpha: float = 0.3
    dirichlet_weight: float = 0.25
    buffer_capacity: int = 100_000
    batch_size: int = 64
    lr: float = 0.02
    momentum: float = 0.9
    lr_milestones: tuple[int, ...] = ()
    l2: float = 1e-4
    fs_filters: int = 16
    fs_blocks: int = 1
    fl_filters: int = 32
    fl_blocks: int = 2
    reference_filters: int = 128
    reference_blocks: int = 10
    value_hidden: int = 32
    mode: str = "mpv"
    games: int = 10
    games_per_phase: int = 50
    steps_per_phase: int = 100
    total_normalized_games: float = 2000.0
    checkpoint_every: float = 250.0
    holdout_games: int = 0
    n_games: int = 200
    workers: int = 0
    seed: int = 0
    out_dir: str = "out"
    model_fs: str = ""
    model_fl: str = ""

    def validate(self) -> None:
        if not 3 <= self.board_size <= 9:
            raise ConfigError("board_size must be in [3, 9]")
        if self.mode not in ("pv", "mpv"):
            raise ConfigError("mode must be pv or mpv")
        if not (0 <= self.alpha <= 1 and 0 <= self.beta <= 1):
            raise ConfigError("alpha and beta must be in [0, 1]")
        if not 0 <= self.r <= 1:
            raise ConfigError("r must be in [0, 1]")
        if self.b_s < self.b_l:
            raise ConfigError("b_s must be >= b_l")
        positive = ("b_s", "budget_b", "sims", "buffer_capacity", "batch_size",
                    "games", "games_per_phase", "steps_per_phase", "n_games")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("c_puct", "lr", "momentum", "l2", "dirichlet_alpha",
                     "dirichlet_weight", "checkpoint_every", "total_normalized_games"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _parse_bool,
    "Fraction": _parse_fraction,
    "tuple[int, ...]": _parse_int_tuple,
}


def _field_parsers() -> dict:
    return {f.name: _PARSERS[str(f.type)] for f in fields(Config)}


def load_config(path: str | None = None, overrides: list[str] = ()) -> Config:
    """Build a Config from an optional file plus `key=value` overrides."""
    parsers = _field_parsers()
    cfg = Config()

    def apply(key: str, raw: str, where: str) -> None:
        key = key.strip()
        if key not in parsers:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            setattr(cfg, key, parsers[key](raw.strip()))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{where}: bad value for {key}: {e}") from None

    if path is not None:
        try:
            text = open(path).read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = line.split("=", 1)
            apply(key, raw, f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        apply(key, raw, f"override {item!r}")
    cfg.validate()
    return cfg
