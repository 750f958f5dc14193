"""Flat ``key = value`` experiment configuration files.

Powertrain fields use their bare names (``q_batt``, ``soc_min``, ...).
Everything else is namespaced: ``agent.*`` (:class:`AgentConfig`),
``tabular.*`` (:class:`TabularConfig`), ``cycle.*`` (:class:`CycleSpec` plus
``cycle.seed``), ``dp.*`` (:class:`DpGrid`) and ``shaping.*`` (shaped-reward
constants). Top-level keys: ``method``, ``reward``, ``cycle``, ``engine_map``,
``seeds``, ``seed_dp``, ``seed_rule``, ``seed_fraction``, ``seed_eps_start``,
``out``. ``soc_terminal`` accepts ``free``, ``initial`` or a number. Relative
paths resolve against the config file's directory. ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .cycles import CycleSpec
from .deep import AgentConfig
from .errors import ConfigError
from .experts import DpGrid
from .powertrain import PowertrainConfig, load_engine_map
from .rewards import FUEL_ONLY, SHAPED, RewardSpec
from .tabular import TabularConfig

CONVENTIONAL = "Conventional"
DP = "DP"
DDQN_FUEL = "DDQN_fuel"
DDQN_SHAPED = "DDQN_shaped"
DDQN_SHAPED_DP_SEED = "DDQN_shaped_dp_seed"
DDQN_SHAPED_MIXED_SEED = "DDQN_shaped_mixed_seed"
DQN_FUEL = "DQN_fuel"
DQN_SHAPED = "DQN_shaped"
TABULAR_DQL = "Tabular_DQL"

METHODS = (CONVENTIONAL, DP, DDQN_FUEL, DDQN_SHAPED, DDQN_SHAPED_DP_SEED,
           DDQN_SHAPED_MIXED_SEED, DQN_FUEL, DQN_SHAPED, TABULAR_DQL)
SEEDED = (DDQN_SHAPED_DP_SEED, DDQN_SHAPED_MIXED_SEED)
LEARNING = (DDQN_FUEL, DDQN_SHAPED, DDQN_SHAPED_DP_SEED, DDQN_SHAPED_MIXED_SEED, DQN_FUEL,
            DQN_SHAPED, TABULAR_DQL)

# reward each method trains on when the config does not say otherwise
METHOD_REWARD = {DDQN_FUEL: FUEL_ONLY, DQN_FUEL: FUEL_ONLY, TABULAR_DQL: FUEL_ONLY}


@dataclass
class ExperimentSpec:
    method: str = DDQN_SHAPED
    powertrain: PowertrainConfig = field(default_factory=PowertrainConfig)
    reward: RewardSpec | None = None
    cycle_path: Path | None = None
    cycle_spec: CycleSpec = field(default_factory=CycleSpec)
    cycle_seed: int = 0
    agent: AgentConfig = field(default_factory=AgentConfig)
    tabular: TabularConfig = field(default_factory=TabularConfig)
    dp_grid: DpGrid = field(default_factory=DpGrid)
    seed_dp: tuple[Path, ...] = ()
    seed_rule: tuple[Path, ...] = ()
    seed_fraction: float | None = None
    seed_eps_start: float = 0.5
    seeds: tuple[int, ...] = (0,)
    out_dir: Path | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        has_seeding = bool(self.seed_dp or self.seed_rule or self.seed_fraction is not None)
        if self.method in SEEDED:
            if not self.seed_dp or self.seed_fraction is None:
                raise ConfigError(f"{self.method} needs seed_dp and seed_fraction")
            if self.method == DDQN_SHAPED_MIXED_SEED and not self.seed_rule:
                raise ConfigError(f"{self.method} needs seed_rule as well")
            if self.method == DDQN_SHAPED_DP_SEED and self.seed_rule:
                raise ConfigError(f"{self.method} takes DP seed data only")
            if not (0 < self.seed_fraction <= 1):
                raise ConfigError("seed_fraction must lie in (0, 1]")
        elif has_seeding:
            raise ConfigError(f"seeding keys given but {self.method} is not a seeded method")
        if not self.seeds:
            raise ConfigError("seeds list is empty")

    @property
    def reward_spec(self) -> RewardSpec:
        if self.reward is not None:
            return self.reward
        return RewardSpec(kind=METHOD_REWARD.get(self.method, SHAPED))

    def with_method(self, method: str) -> "ExperimentSpec":
        return replace(self, method=method)


def _parse_scalar(raw: str, kind, key: str):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
    raise ConfigError(f"{key}: unsupported field type")


_FIELD_TYPES = {"float": float, "int": int, "bool": bool, "str": str}


def _field_kind(cls, name: str, key: str):
    for f in fields(cls):
        if f.name == name:
            text = f.type if isinstance(f.type, str) else f.type.__name__
            if text.startswith("tuple[int"):
                return "int_tuple"
            base = text.split("|")[0].strip()
            if base in _FIELD_TYPES:
                return _FIELD_TYPES[base]
            raise ConfigError(f"{key}: not settable from a config file")
    raise ConfigError(f"unknown config key {key!r}")


def _update(obj, name: str, raw: str, key: str):
    kind = _field_kind(type(obj), name, key)
    if kind == "int_tuple":
        value = _int_list(raw, key)
    else:
        value = _parse_scalar(raw, kind, key)
    return replace(obj, **{name: value})


def _int_list(raw: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in raw.replace(" ", "").split(",") if p)
    except ValueError:
        raise ConfigError(f"{key}: expected a comma-separated integer list") from None


_SEEDING_KEYS = ("seed_dp", "seed_rule", "seed_fraction")


def read_pairs(path) -> list[tuple[str, str, int]]:
    """``(key, value, line_number)`` triples of a config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    out = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{path}:{n}: empty key or value")
        out.append((key, value, n))
    return out


def load_spec(path=None, base: ExperimentSpec | None = None, method: str | None = None) -> ExperimentSpec:
    """Build an :class:`ExperimentSpec` from a config file (defaults when ``None``).

    A leading ``include = other.cfg`` line loads that file first and
    applies the remaining keys on top of it.

    ``method`` overrides the file's ``method`` key before validation. When
    the override names an unseeded method, the file's seeding keys are
    dropped so one config can drive every method.
    """
    if path is None:
        spec = base or ExperimentSpec()
        return spec if method is None else spec.with_method(method)
    path = Path(path)
    root = path.parent
    pairs = read_pairs(path)
    if pairs and pairs[0][0] == "include":
        base = load_spec(root / pairs[0][1], base=base)
        pairs = pairs[1:]
    if any(k == "include" for k, _, _ in pairs):
        raise ConfigError(f"{path}: 'include' must be the first key")
    if method is not None:
        if method == DDQN_SHAPED_MIXED_SEED:
            drop = {"method"}
        elif method == DDQN_SHAPED_DP_SEED:
            drop = {"method", "seed_rule"}
        else:
            drop = {"method", *_SEEDING_KEYS}
        pairs = [p for p in pairs if p[0] not in drop] + [("method", method, 0)]
    try:
        return _build(pairs, root, base, path)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _build(pairs, root: Path, base: ExperimentSpec | None, path: Path) -> ExperimentSpec:
    spec = dataclasses.replace(base) if base is not None else None
    pt_kwargs: dict = {}
    agent = base.agent if base else AgentConfig()
    tab = base.tabular if base else TabularConfig()
    cyc = base.cycle_spec if base else CycleSpec()
    grid = base.dp_grid if base else DpGrid()
    shaping: dict = {}
    top: dict = {}
    terminal = None
    pt_names = {f.name for f in fields(PowertrainConfig)} - {"engine_map", "soc_terminal"}
    seen = set()
    for key, raw, n in pairs:
        if key in seen:
            raise ConfigError(f"{path}:{n}: duplicate key {key!r}")
        seen.add(key)
        ns, _, name = key.rpartition(".")
        if ns == "agent":
            if name == "hidden":
                agent = replace(agent, hidden=_int_list(raw, key))
            else:
                agent = _update(agent, name, raw, key)
        elif ns == "tabular":
            tab = _update(tab, name, raw, key)
        elif ns == "cycle":
            if name == "seed":
                top["cycle_seed"] = _parse_scalar(raw, int, key)
            else:
                cyc = _update(cyc, name, raw, key)
        elif ns == "dp":
            grid = _update(grid, name, raw, key)
        elif ns == "shaping":
            if name == "kind" or name not in {f.name for f in fields(RewardSpec)}:
                raise ConfigError(f"{path}:{n}: unknown shaping constant {name!r}")
            shaping[name] = _parse_scalar(raw, float, key)
        elif ns:
            raise ConfigError(f"{path}:{n}: unknown key namespace {ns!r}")
        elif key in pt_names:
            pt_kwargs[key] = _parse_scalar(raw, float, key)
        elif key == "soc_terminal":
            terminal = raw
        elif key == "engine_map":
            pt_kwargs["engine_map"] = load_engine_map(root / raw)
        elif key == "method":
            top["method"] = raw
        elif key == "reward":
            if raw not in (FUEL_ONLY, SHAPED):
                raise ConfigError(f"{path}:{n}: reward must be {FUEL_ONLY} or {SHAPED}")
            top["reward_kind"] = raw
        elif key == "cycle":
            top["cycle_path"] = root / raw
        elif key in ("seed_dp", "seed_rule"):
            top[key] = tuple(root / p.strip() for p in raw.split(",") if p.strip())
        elif key in ("seed_fraction", "seed_eps_start"):
            top[key] = _parse_scalar(raw, float, key)
        elif key == "seeds":
            top["seeds"] = _int_list(raw, key)
        elif key == "out":
            top["out_dir"] = root / raw
        else:
            raise ConfigError(f"{path}:{n}: unknown config key {key!r}")

    pt = base.powertrain if base else PowertrainConfig()
    if terminal is not None:
        pt_kwargs["soc_terminal"] = terminal
    soc_init = pt_kwargs.get("soc_init", pt.soc_init)
    if "soc_terminal" in pt_kwargs:
        pt_kwargs["soc_terminal"] = _terminal(pt_kwargs["soc_terminal"], soc_init)
    pt = replace(pt, **pt_kwargs)

    reward = base.reward if base else None
    if "reward_kind" in top or shaping:
        kind = top.pop("reward_kind", None) or (reward.kind if reward else None)
        if kind is None:
            kind = METHOD_REWARD.get(top.get("method", base.method if base else DDQN_SHAPED), SHAPED)
        reward = RewardSpec(kind=kind, **shaping)
    top.pop("reward_kind", None)

    kwargs = dict(powertrain=pt, reward=reward, agent=agent, tabular=tab, cycle_spec=cyc, dp_grid=grid)
    kwargs.update(top)
    if spec is None:
        return ExperimentSpec(**kwargs)
    out = replace(spec, **kwargs)
    return out


def _terminal(raw: str, soc_init: float) -> float | None:
    low = raw.lower()
    if low == "free":
        return None
    if low == "initial":
        return soc_init
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"soc_terminal: expected free, initial or a number, got {raw!r}") from None


def dump_spec(spec: ExperimentSpec) -> str:
    """Resolved configuration as ``key = value`` text (engine map omitted)."""
    lines = [f"method = {spec.method}", f"reward = {spec.reward_spec.kind}"]
    pt = spec.powertrain
    for f in fields(PowertrainConfig):
        if f.name == "engine_map":
            continue
        value = getattr(pt, f.name)
        if f.name == "soc_terminal":
            value = "free" if value is None else repr(value)
        lines.append(f"{f.name} = {value}")
    if spec.cycle_path is not None:
        lines.append(f"cycle = {spec.cycle_path}")
    else:
        lines.append(f"cycle.seed = {spec.cycle_seed}")
        lines += [f"cycle.{f.name} = {getattr(spec.cycle_spec, f.name)}" for f in fields(CycleSpec)]
    for prefix, obj in (("agent", spec.agent), ("tabular", spec.tabular), ("dp", spec.dp_grid)):
        for f in fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{prefix}.{f.name} = {value}")
    if spec.reward_spec.kind == SHAPED:
        for f in fields(RewardSpec):
            if f.name != "kind":
                lines.append(f"shaping.{f.name} = {getattr(spec.reward_spec, f.name)!r}")
    if spec.method in SEEDED:
        lines.append("seed_dp = " + ",".join(str(p) for p in spec.seed_dp))
        if spec.seed_rule:
            lines.append("seed_rule = " + ",".join(str(p) for p in spec.seed_rule))
        lines.append(f"seed_fraction = {spec.seed_fraction!r}")
        lines.append(f"seed_eps_start = {spec.seed_eps_start!r}")
    lines.append("seeds = " + ",".join(str(s) for s in spec.seeds))
    return "\n".join(lines) + "\n"
