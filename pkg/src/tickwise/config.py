"""Run configuration shared by the pipeline, the backtest and the CLI."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .core import DEFAULT_EPSILON_B, ValidationError

STRATEGIES = ("tick_by_tick", "range", "delta_neutral")


@dataclass(frozen=True)
class RunConfig:
    d: float = 1_000_000.0
    horizon_days: float = 7.0
    train_days: float = 7.0
    stride_days: float = 4.0
    sigma: float = 0.8
    drift: float = 0.0
    range_pct: float = 0.10
    epsilon_b: float = DEFAULT_EPSILON_B
    quad_m: int = 4097
    quad_span: float = 8.0
    hedge_base: str = "range"
    strategies: tuple[str, ...] = STRATEGIES
    renormalize_volume: bool = True
    partial_attribution: bool = True
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        for name in ("horizon_days", "train_days", "stride_days"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be > 0", field=name)
        if not (0 < self.range_pct < 1):
            raise ValidationError("range_pct must be in (0, 1)", field="range_pct")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError("sigma must be > 0", field="sigma")
        if not (math.isfinite(self.d) and self.d >= 0):
            raise ValidationError("d must be >= 0", field="d")
        if self.quad_m < 3 or self.quad_m % 2 == 0:
            raise ValidationError("quad_m must be odd and >= 3", field="quad_m")
        if self.hedge_base not in ("range", "tick_by_tick"):
            raise ValidationError("hedge_base must be 'range' or 'tick_by_tick'", field="hedge_base")
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown or not self.strategies:
            raise ValidationError(f"unknown strategies: {sorted(unknown)}", field="strategies")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["strategies"] = list(self.strategies)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known - {"schema_version"}
        if extra:
            raise ValidationError(f"unknown config fields: {sorted(extra)}", field=sorted(extra)[0])
        kwargs = {k: v for k, v in data.items() if k in known}
        if "quad_m" in kwargs:
            kwargs["quad_m"] = int(kwargs["quad_m"])
        for k in ("seed", "workers"):
            if k in kwargs:
                kwargs[k] = int(kwargs[k])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def override(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})
