"""Run configuration: dataclass defaults plus a ``key=value`` text format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .synthglyph.render import ConfigError


@dataclass(frozen=True)
class RunConfig:
    data: str = "data"
    ae: str = "ae.ckpt"
    out: str = "out"
    seed: int = 0
    steps: int = 2000
    batch: int = 16
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    codebook_size: int = 128
    tau: float = 0.1
    alpha: float = 0.1
    beta: float = 0.25
    drop_p: float = 0.2
    independent_drop: bool = False
    guidance: float = 7.5
    sample_steps: int = 50
    eta: float = 0.0
    use_saq: bool = True
    use_sce: bool = True
    use_pce: bool = True
    allow_writer_reuse: bool = False
    checkpoint_every: int = 0
    alphabet: str = "abcdefghijklmnopqrstuvwxyz"

    def __post_init__(self):
        if self.batch < 4 or self.batch % 2:
            raise ConfigError(f"batch must be even and at least 4, got {self.batch}")
        if self.steps < 0:
            raise ConfigError(f"steps must be non-negative, got {self.steps}")
        if not 0 <= self.drop_p <= 1:
            raise ConfigError(f"drop_p must be in [0,1], got {self.drop_p}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.codebook_size < 2:
            raise ConfigError(f"codebook_size must be at least 2, got {self.codebook_size}")
        if self.alphabet != "abcdefghijklmnopqrstuvwxyz":
            raise ConfigError("only the lowercase a-z alphabet is supported")

    def with_overrides(self, **kw) -> "RunConfig":
        unknown = set(kw) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **kw)

    def to_text(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in asdict(self).items())


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _format(v) -> str:
    return str(v).lower() if isinstance(v, bool) else str(v)


def _parse(kind, key, raw: str):
    try:
        if kind is bool or kind == "bool":
            low = raw.strip().lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {n}: unknown config key {key!r}")
        values[key] = _parse(types[key], key, raw)
    return (base or RunConfig()).with_overrides(**values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
