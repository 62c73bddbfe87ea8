"""Scenario configuration: defaults, config-file parsing, CLI overrides.

Config files are flat `key = value` lines (UTF-8, `#` comments). Keys carry
unit suffixes (`_mbps`, `_ms`, `_us`, `_s`) and map onto internal fields that
hold bits per second and integer nanoseconds. Unknown keys are an error.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .engine import MS, US

MBPS = 10**6

DISCIPLINES = ("taildrop", "codel", "fq_codel")


@dataclass
class ScenarioConfig:
    pairs: int = 20
    disc: str = "fq_codel"
    ecn: bool = True
    intelligent: bool = False
    duration_s: int = 300
    access_bw_bps: int = 200 * MBPS
    access_prop_ns: int = 20 * MS
    bottleneck_bw_bps: int = 20 * MBPS
    bottleneck_prop_ns: int = 0
    exit_bw_bps: int = 100 * MBPS
    exit_prop_ns: int = 0
    target_ns: int = 5 * MS
    interval_ns: int = 100 * MS
    hard_limit: int = 1000
    alpha: float = 0.5
    gamma: float = 0.8
    epsilon: float = 0.5
    checkpoint: str = ""
    retrain_at_s: int = 6
    random_topology: bool = False
    rand_access_bw_min_mbps: int = 50
    rand_access_bw_max_mbps: int = 200
    rand_prop_min_ms: int = 1
    rand_prop_max_ms: int = 20
    rand_start_max_s: int = 10
    bulk_start_ms: int = 50
    flow_stagger_ms: int = 0
    monitor_start_ms: int = 0

    def validate(self) -> None:
        if self.pairs < 1:
            raise ValueError("pairs must be >= 1")
        if self.disc not in DISCIPLINES:
            raise ValueError(f"disc must be one of {DISCIPLINES}, got {self.disc!r}")
        if self.duration_s < 1:
            raise ValueError("duration_s must be >= 1")
        if self.target_ns <= 0 or self.interval_ns <= 0:
            raise ValueError("target and interval must be positive")
        if self.target_ns >= self.interval_ns:
            raise ValueError("target must be below interval")
        if self.hard_limit < 1:
            raise ValueError("hard_limit_pkts must be >= 1")
        for bw in (self.access_bw_bps, self.bottleneck_bw_bps, self.exit_bw_bps):
            if bw <= 0:
                raise ValueError("link bandwidths must be positive")
        for name in ("alpha", "gamma", "epsilon"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.rand_access_bw_min_mbps > self.rand_access_bw_max_mbps:
            raise ValueError("random access bandwidth range is inverted")
        if self.rand_prop_min_ms > self.rand_prop_max_ms:
            raise ValueError("random propagation range is inverted")


def _parse_bool(v: str) -> bool:
    low = v.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _scaled_int(factor: int):
    def conv(v: str) -> int:
        return int(round(float(v) * factor))
    return conv


# config key -> (field, converter)
KEY_SPECS = {
    "pairs": ("pairs", int),
    "disc": ("disc", str),
    "ecn": ("ecn", _parse_bool),
    "intelligent": ("intelligent", _parse_bool),
    "duration_s": ("duration_s", int),
    "access_bw_mbps": ("access_bw_bps", _scaled_int(MBPS)),
    "access_prop_ms": ("access_prop_ns", _scaled_int(MS)),
    "bottleneck_bw_mbps": ("bottleneck_bw_bps", _scaled_int(MBPS)),
    "bottleneck_prop_ms": ("bottleneck_prop_ns", _scaled_int(MS)),
    "exit_bw_mbps": ("exit_bw_bps", _scaled_int(MBPS)),
    "exit_prop_ms": ("exit_prop_ns", _scaled_int(MS)),
    "target_us": ("target_ns", _scaled_int(US)),
    "interval_us": ("interval_ns", _scaled_int(US)),
    "hard_limit_pkts": ("hard_limit", int),
    "alpha": ("alpha", float),
    "gamma": ("gamma", float),
    "epsilon": ("epsilon", float),
    "checkpoint": ("checkpoint", str),
    "retrain_at_s": ("retrain_at_s", int),
    "random_topology": ("random_topology", _parse_bool),
    "rand_access_bw_min_mbps": ("rand_access_bw_min_mbps", int),
    "rand_access_bw_max_mbps": ("rand_access_bw_max_mbps", int),
    "rand_prop_min_ms": ("rand_prop_min_ms", int),
    "rand_prop_max_ms": ("rand_prop_max_ms", int),
    "rand_start_max_s": ("rand_start_max_s", int),
    "bulk_start_ms": ("bulk_start_ms", int),
    "flow_stagger_ms": ("flow_stagger_ms", int),
    "monitor_start_ms": ("monitor_start_ms", int),
}


def apply_setting(cfg: ScenarioConfig, key: str, value: str, where: str = "") -> ScenarioConfig:
    spec = KEY_SPECS.get(key)
    if spec is None:
        raise ValueError(f"{where}unknown config key: {key!r}")
    attr, conv = spec
    try:
        parsed = conv(value.strip())
    except ValueError as exc:
        raise ValueError(f"{where}bad value for {key!r}: {exc}") from None
    return replace(cfg, **{attr: parsed})


def load_config(path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    cfg = base if base is not None else ScenarioConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, value = line.split("=", 1)
            cfg = apply_setting(cfg, key.strip(), value, where=f"{path}:{ln}: ")
    return cfg


def apply_overrides(cfg: ScenarioConfig, pairs: list) -> ScenarioConfig:
    """Apply --set key=value overrides in order."""
    for item in pairs:
        if "=" not in item:
            raise ValueError(f"--set needs key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg = apply_setting(cfg, key.strip(), value, where="--set: ")
    return cfg
