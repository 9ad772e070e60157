"""Run configuration shared by every CLI subcommand.

Precedence: command-line flags > config file > built-in defaults. The config
file is plain ``key = value`` text; ``#`` and ``;`` start comments.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass
from pathlib import Path

from .curation import CurationConfig
from .grpo import CurriculumConfig
from .locatability import LocatabilityParams
from .rewards import RewardParams

CONFIG_ENV = "GEOADAPT_CONFIG"


@dataclass(frozen=True)
class RunConfig:
    # locatability
    gamma1: float = 0.01
    gamma2: float = 0.01
    alpha: float = 0.6
    tau_margin: float = 50.0
    # rewards
    w1: float = 0.5
    w2: float = 0.5
    lambda1: float = 0.3
    lambda2: float = 0.7
    sigma: float = 100.0
    # toy GRPO curriculum
    group_size: int = 8
    clip_eps: float = 0.2
    kl_beta: float = 0.04
    kl_beta_stage2: float | None = None
    learning_rate: float = 0.1
    stage1_epochs: int = 3
    stage2_epochs: int = 2
    adv_eps: float = 1e-8
    scale_advantages: bool = True
    temperature: float = 1.0
    # curation
    implicit_threshold: float = 0.3
    min_support: int = 2
    # files
    dataset_in: str | None = None
    dataset_out: str | None = None
    grounding_table: str | None = None
    alias_table: str | None = None
    gazetteer: str | None = None
    world: str | None = None
    trace_out: str = "trace.jsonl"
    policy_out: str = "policy.txt"
    report_out: str | None = None
    report_format: str = "table"
    seed: int = 42

    def __post_init__(self) -> None:
        # surface invalid combinations at load time rather than mid-run
        self.locatability_params()
        self.reward_params()
        self.curriculum_config()

    def locatability_params(self) -> LocatabilityParams:
        return LocatabilityParams(self.gamma1, self.gamma2, self.alpha, self.tau_margin)

    def reward_params(self) -> RewardParams:
        return RewardParams(self.w1, self.w2, self.lambda1, self.lambda2, self.sigma)

    def curriculum_config(self) -> CurriculumConfig:
        return CurriculumConfig(
            group_size=self.group_size,
            clip_eps=self.clip_eps,
            kl_beta=self.kl_beta,
            kl_beta_stage2=self.kl_beta_stage2,
            learning_rate=self.learning_rate,
            stage1_epochs=self.stage1_epochs,
            stage2_epochs=self.stage2_epochs,
            seed=self.seed,
            adv_eps=self.adv_eps,
            scale_advantages=self.scale_advantages,
            temperature=self.temperature,
        )

    def curation_config(self) -> CurationConfig:
        return CurationConfig(self.implicit_threshold, self.min_support, self.locatability_params())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict[str, str] | None = None) -> "RunConfig":
        """Build a config from defaults, an optional file and string overrides.

        Without an explicit path, ``$GEOADAPT_CONFIG`` is used if set.
        """
        values: dict[str, object] = {}
        path = path or os.environ.get(CONFIG_ENV)
        if path:
            values.update(_coerce_all(read_config_file(path)))
        values.update(_coerce_all(overrides or {}))
        return cls(**values)


_HINTS = typing.get_type_hints(RunConfig)
_NONE_WORDS = {"", "none", "null"}


def read_config_file(path: str | Path) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string("[run]\n" + text, source=str(path))
    return dict(parser["run"])


def _coerce_all(raw: dict[str, object]) -> dict[str, object]:
    return {key: coerce(key, value) for key, value in raw.items()}


def coerce(key: str, value):
    if key not in _HINTS:
        raise KeyError(f"unknown config key {key!r}")
    if not isinstance(value, str):
        return value
    hint = _HINTS[key]
    args = typing.get_args(hint)
    optional = type(None) in args
    base = next((a for a in args if a is not type(None)), hint) if args else hint
    text = value.strip()
    if optional and text.lower() in _NONE_WORDS:
        return None
    if base is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: not a boolean: {value!r}")
    if base is int:
        return int(text)
    if base is float:
        return float(text)
    return text
