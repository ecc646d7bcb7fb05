"""Flat ``key=value`` run configuration with dotted namespaces.

Example::

    # comments and blank lines are ignored
    env.l_max=1.0
    env.u_infer.Yolov5x.640p=0.1
    ddqn.gamma=0.9
    run.seeds=0,1,2,3,4

Absent keys take defaults, unknown keys are rejected, and every value is
range-checked. :func:`dump_config` writes the full effective config in the
same format, so feeding it back in reproduces the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .cmab import CmabState
from .ddqn import DdqnHyper
from .env import MODELS, RESOLUTIONS, SystemParams
from .scene_trace import SceneGenParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BandwidthParams:
    rho: float = 10.0
    sigma: float = 5.0
    b_min: float = 0.5


@dataclass(frozen=True)
class CmabParams:
    xi1: float = 0.05
    xi2: float = 0.05
    phi: float = 0.1
    epsilon: float = 0.3
    initial_density: float = 3.0
    pretrain_slots: int = 2000

    def initial_state(self, rho: float) -> CmabState:
        return CmabState(xi1=self.xi1, xi2=self.xi2, phi=self.phi, epsilon=self.epsilon,
                         avg_density=self.initial_density, avg_bandwidth=rho)


@dataclass(frozen=True)
class RunParams:
    seed: int = 7
    slots: int = 2500
    train_fraction: float = 0.8
    loop: int = 25
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    workers: int = 1
    out: str = "runs"


@dataclass(frozen=True)
class RunConfig:
    env: SystemParams = field(default_factory=SystemParams)
    scene: SceneGenParams = field(default_factory=SceneGenParams)
    bandwidth: BandwidthParams = field(default_factory=BandwidthParams)
    ddqn: DdqnHyper = field(default_factory=DdqnHyper)
    cmab: CmabParams = field(default_factory=CmabParams)
    run: RunParams = field(default_factory=RunParams)

    def ddqn_hyper(self) -> DdqnHyper:
        """DDQN settings with normalisation tied to the trace parameters."""
        return replace(self.ddqn, bandwidth_scale=self.bandwidth.rho,
                       max_objects=self.scene.max_objects)


_SECTIONS = ("env", "scene", "bandwidth", "ddqn", "cmab", "run")
# normalisation constants are derived from bandwidth.rho and scene.max_objects
_DERIVED = {("ddqn", "bandwidth_scale"), ("ddqn", "max_objects")}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def _items(cfg: RunConfig):
    """Yield (dotted key, value) for every settable field."""
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            if (section, f.name) in _DERIVED:
                continue
            value = getattr(obj, f.name)
            if isinstance(value, dict):
                for k, v in value.items():
                    sub = ".".join(k) if isinstance(k, tuple) else k
                    yield f"{section}.{f.name}.{sub}", v
            else:
                yield f"{section}.{f.name}", value


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k}={_format(v)}\n" for k, v in _items(cfg))


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if not raw.strip():
                return ()
            kind = type(default[0]) if default else int
            return tuple(kind(v) for v in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    defaults = RunConfig()
    known = dict(_items(defaults))
    overrides: dict[str, dict] = {s: {} for s in _SECTIONS}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise ConfigError(f"{origin}:{lineno}: expected key=value, got {line!r}")
        if key not in known:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        value = _coerce(key, raw, known[key])
        section, name, *sub = key.split(".")
        if sub:
            table = overrides[section].setdefault(name, dict(getattr(getattr(defaults, section), name)))
            table_key = tuple(sub) if len(sub) > 1 else sub[0]
            table[table_key] = value
        else:
            overrides[section][name] = value
    sections = {s: replace(getattr(defaults, s), **overrides[s]) for s in _SECTIONS}
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def parse_config(path=None) -> RunConfig:
    """Defaults, overridden by ``path`` when given."""
    if path is None:
        cfg = RunConfig()
        validate(cfg)
        return cfg
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), str(p))


def validate(cfg: RunConfig) -> None:
    """Re-check every housed type's domain; message names key and bound."""
    def check(ok: bool, msg: str):
        if not ok:
            raise ConfigError(msg)

    try:
        cfg.env.validate()
        cfg.scene.validate()
        cfg.ddqn_hyper().validate()
        cfg.cmab.initial_state(cfg.bandwidth.rho)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    e = cfg.env
    for m in MODELS:
        row = [e.acc_detect[(m, r)] for r in RESOLUTIONS]
        check(row == sorted(row, reverse=True), f"env.acc_detect.{m} must not increase as resolution drops")
        urow = [e.u_infer[(m, r)] for r in RESOLUTIONS]
        check(urow == sorted(urow, reverse=True), f"env.u_infer.{m} must not increase as resolution drops")
    for r in RESOLUTIONS:
        col = [e.acc_detect[(m, r)] for m in MODELS]
        check(col == sorted(col, reverse=True), f"env.acc_detect at {r} must not increase for smaller models")
        ucol = [e.u_infer[(m, r)] for m in MODELS]
        check(ucol == sorted(ucol, reverse=True), f"env.u_infer at {r} must not increase for smaller models")
    check(e.acc_track_base["CSRT"] > e.acc_track_base["KCF"], "env.acc_track_base.CSRT must exceed KCF")
    bw = cfg.bandwidth
    check(bw.rho > 0, "bandwidth.rho must be > 0")
    check(bw.sigma >= 0, "bandwidth.sigma must be >= 0")
    check(0 < bw.b_min < bw.rho, "bandwidth.b_min must be in (0, rho)")
    check(cfg.cmab.pretrain_slots >= 1, "cmab.pretrain_slots must be >= 1")
    r = cfg.run
    check(r.seed >= 0, "run.seed must be >= 0")
    check(r.slots >= 4, "run.slots must be >= 4")
    check(0 < r.train_fraction < 1, "run.train_fraction must be in (0,1)")
    check(r.loop >= 0, "run.loop must be >= 0")
    check(len(r.seeds) >= 1 and min(r.seeds) >= 0, "run.seeds must list at least one seed >= 0")
    check(r.workers >= 1, "run.workers must be >= 1")
