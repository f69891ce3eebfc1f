"""Experiment configuration: YAML file <-> validated dataclasses.

Every physical quantity carries its unit in the key name. Validation reports
all problems at once, each prefixed by its dotted field path.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .calibration import MEASURED_ETA, REPORTED_COINCIDENCES
from .errors import ConfigError

MODES = ("fig2", "fig3", "fig4", "table3", "monte-carlo", "eve-roc", "analytic-sweep", "optimal-mu")
ENGINES = ("pulse", "grouped")
EVE_KINDS = ("none", "intercept_resend", "pns")


def _f(default, lo=None, hi=None, lo_open=False, **extra):
    return field(default=default, metadata={"type": float, "lo": lo, "hi": hi, "lo_open": lo_open, **extra})


def _i(default, lo=None, hi=None, optional=False):
    return field(default=default, metadata={"type": int, "lo": lo, "hi": hi, "optional": optional})


def _s(default, choices):
    return field(default=default, metadata={"type": str, "choices": choices})


def _list(default_factory, lo=None, hi=None, lo_open=False, item=float, nonempty=True, choices=None):
    return field(
        default_factory=default_factory,
        metadata={"type": list, "item": item, "lo": lo, "hi": hi, "lo_open": lo_open, "nonempty": nonempty, "choices": choices},
    )


@dataclass
class SourceConfig:
    mu: float = _f(0.41, 0.0, 2.0)
    mu_list: list = _list(lambda: list(REPORTED_COINCIDENCES), 0.0, 2.0)
    rep_rate_hz: float = _f(80e6, 0.0, None, lo_open=True)


@dataclass
class ChannelConfig:
    eta: float = _f(MEASURED_ETA, 0.0, 1.0)
    p_dark: float = _f(1e-5, 0.0, 1.0)
    e_detector: float = _f(0.01, 0.0, 0.5)
    eta_detector: float = _f(0.60, 0.0, 1.0)
    yield_convention: str = _s("sifted", ("sifted", "standard"))


@dataclass
class LinkConfig:
    eta0: float = _f(MEASURED_ETA, 0.0, 1.0, lo_open=True)
    alpha_db_per_km: float = _f(0.2, 0.0)
    length_km_min: float = _f(0.0, 0.0)
    length_km_max: float = _f(300.0, 0.0)
    n_points: int = _i(100, 1)


@dataclass
class KeyRateConfig:
    f_ec: float = _f(1.22, 1.0, 3.0)
    mu_max: float = _f(2.0, 0.0, 2.0, lo_open=True)
    n_grid: int = _i(200, 2)


@dataclass
class EveConfig:
    kind: str = _s("none", EVE_KINDS)
    fraction: float = _f(1.0, 0.0, 1.0)
    forward_eta: float = _f(1.0, 0.0, 1.0)
    max_forward: int | None = _i(None, 1, optional=True)


@dataclass
class MonitorConfig:
    threshold_sigma: float = _f(5.0, 0.0, None, lo_open=True)
    sided: str = _s("two-sided", ("two-sided", "lower"))
    tally: str = _s("total", ("total", "twofold", "threefold", "conjugate_2fold", "same_basis_2fold"))
    n_trials: int = _i(100, 1)
    thresholds_sigma: list = _list(lambda: [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0], 0.0, lo_open=True)
    strategies: list = _list(lambda: list(EVE_KINDS), item=str, choices=EVE_KINDS)


@dataclass
class ExperimentConfig:
    mode: str = _s("fig3", MODES)
    seed: int = _i(0, 0, 2**64 - 1)
    n_pulses: int = _i(1_000_000, 1)
    threads: int = _i(1, 1)
    engine: str = _s("pulse", ENGINES)
    output_dir: str = field(default="out", metadata={"type": str})
    click_log: bool = field(default=False, metadata={"type": bool})
    source: SourceConfig = field(default_factory=SourceConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    keyrate: KeyRateConfig = field(default_factory=KeyRateConfig)
    eve: EveConfig = field(default_factory=EveConfig)
    monitor: MonitorConfig = field(default_factory=MonitorConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


SECTIONS = {
    "source": SourceConfig,
    "channel": ChannelConfig,
    "link": LinkConfig,
    "keyrate": KeyRateConfig,
    "eve": EveConfig,
    "monitor": MonitorConfig,
}


def _check_number(value, meta, path, problems, kind) -> Any:
    if kind is float and isinstance(value, str):
        # YAML 1.1 reads "1e-6" (no dot) as a string
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        problems.append(f"{path}: expected a number, got {value!r}")
        return None
    if kind is int and int(value) != value:
        problems.append(f"{path}: expected an integer, got {value!r}")
        return None
    value = kind(value)
    if kind is float and not math.isfinite(value):
        problems.append(f"{path}: must be finite, got {value!r}")
        return None
    lo, hi = meta.get("lo"), meta.get("hi")
    if lo is not None and (value < lo or (meta.get("lo_open") and value == lo)):
        op = ">" if meta.get("lo_open") else ">="
        problems.append(f"{path}: must be {op} {lo}, got {value!r}")
    if hi is not None and value > hi:
        problems.append(f"{path}: must be <= {hi}, got {value!r}")
    return value


def _check_value(value, meta, path, problems) -> Any:
    kind = meta["type"]
    if kind is float or kind is int:
        if value is None and meta.get("optional"):
            return None
        return _check_number(value, meta, path, problems, kind)
    if kind is bool:
        if not isinstance(value, bool):
            problems.append(f"{path}: expected true/false, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            problems.append(f"{path}: expected a string, got {value!r}")
        elif meta.get("choices") and value not in meta["choices"]:
            problems.append(f"{path}: must be one of {list(meta['choices'])}, got {value!r}")
        return value
    if not isinstance(value, list):
        problems.append(f"{path}: expected a list, got {value!r}")
        return value
    if meta.get("nonempty") and not value:
        problems.append(f"{path}: must not be empty")
    item_meta = {**meta, "type": meta["item"]}
    return [_check_value(v, item_meta, f"{path}[{i}]", problems) for i, v in enumerate(value)]


def _build(cls, raw, path: str, problems: list[str]):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        problems.append(f"{path or 'config'}: expected a mapping, got {type(raw).__name__}")
        return cls()
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            problems.append(f"{path}{key}: unknown key")
    kwargs = {}
    for name, f in known.items():
        if name not in raw:
            continue
        sub = f"{path}{name}"
        if name in SECTIONS and cls is ExperimentConfig:
            kwargs[name] = _build(SECTIONS[name], raw[name], sub + ".", problems)
        else:
            kwargs[name] = _check_value(raw[name], f.metadata, sub, problems)
    return cls(**kwargs)


def _cross_checks(cfg: ExperimentConfig, problems: list[str]) -> None:
    ch = cfg.channel
    if None not in (ch.eta, ch.eta_detector) and ch.eta * ch.eta_detector > 1:
        problems.append("channel: eta * eta_detector must be <= 1")
    lk = cfg.link
    if None not in (lk.length_km_min, lk.length_km_max) and lk.length_km_max < lk.length_km_min:
        problems.append("link.length_km_max: must be >= link.length_km_min")
    if cfg.click_log and cfg.engine != "pulse":
        problems.append("click_log: needs engine 'pulse'")


def config_from_dict(raw: Any) -> ExperimentConfig:
    """Validate a plain mapping and return a fully defaulted config, or raise ConfigError."""
    problems: list[str] = []
    cfg = _build(ExperimentConfig, raw, "", problems)
    if not problems:
        _cross_checks(cfg, problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def parse_override(text: str) -> tuple[list[str], Any]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError([f"--override {text!r}: expected key=value"])
    try:
        parsed = yaml.safe_load(value) if value.strip() else None
    except yaml.YAMLError:
        parsed = value
    return key.strip().split("."), parsed


def apply_overrides(raw: dict, overrides) -> dict:
    for text in overrides:
        keys, value = parse_override(text)
        node = raw
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                node[k] = {}
            node = node[k]
        node[keys[-1]] = value
    return raw


def load_yaml(text: str, source: str = "<config>") -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError([f"{where}: parse error: {problem}"]) from exc


def validate_config(path: str | Path | None = None, overrides=()) -> ExperimentConfig:
    """Read, override and validate a config file (``None`` means all defaults)."""
    raw: Any = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError([f"{path}: cannot read config ({exc.strerror})"]) from exc
        raw = load_yaml(text, str(path))
        if raw is None:
            raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return config_from_dict(apply_overrides(raw, overrides))


def dump_config(cfg: ExperimentConfig) -> str:
    return cfg.to_yaml()


def parse_config(text: str) -> ExperimentConfig:
    raw = load_yaml(text)
    return config_from_dict(raw if raw is not None else {})
