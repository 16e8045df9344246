"""Run configuration: sectioned ``key = value`` files, validation and hashing."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import asdict, dataclass, field, fields, replace

from .evolution import EvolutionConfig, Problem, stream
from .lattice import DEFAULT_SIDE_LENGTH, LatticeDims
from .learning import LearnConfig
from .simulator import FRICTION_MODES, SimConfig
from .terrain import DEFAULT_LENGTH_RANGE, DEFAULT_SLOPE_RANGE, RUGGED_SPAN, Terrain, flat, generate_rugged

TERRAIN_KINDS = ("flat", "rugged", "file", "none")
# keys that change how a run is executed or stored but not its results
_UNHASHED = {("run", "workers"), ("run", "output_dir"), ("run", "checkpoint_every"), ("evolution", "generations")}


class ConfigError(ValueError):
    """Invalid configuration, with the offending file position when known."""


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    workers: int = 1
    output_dir: str = "runs/default"
    checkpoint_every: int = 1


@dataclass(frozen=True)
class LatticeSection:
    a: int = 8
    b: int = 5
    side_length: float = DEFAULT_SIDE_LENGTH


@dataclass(frozen=True)
class TerrainSection:
    kind: str = "flat"
    seed: int = 0
    slope_min: float = DEFAULT_SLOPE_RANGE[0]
    slope_max: float = DEFAULT_SLOPE_RANGE[1]
    length_min: float = DEFAULT_LENGTH_RANGE[0]
    length_max: float = DEFAULT_LENGTH_RANGE[1]
    span: float = RUGGED_SPAN
    file: str = ""
    friction: str = "auto"


@dataclass(frozen=True)
class EvolutionSection:
    pop_size: int = 32
    generations: int = 30
    crossover: bool = False
    crossover_prob: float = 0.8
    crossover_method: str = "distinct"
    distinct_zero_frac: float = 0.35
    joint_zero_frac: float = 0.25
    loss_delta_threshold: float = 1.0
    init_prob: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    lattice: LatticeSection = field(default_factory=LatticeSection)
    sim: SimConfig = field(default_factory=SimConfig)
    learn: LearnConfig = field(default_factory=LearnConfig)
    terrain: TerrainSection = field(default_factory=TerrainSection)
    evolution: EvolutionSection = field(default_factory=EvolutionSection)

    def sections(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        out = []
        for name, section in self.sections().items():
            out.append(f"[{name}]")
            for key, value in asdict(section).items():
                out.append(f"{key} = {_format(value)}")
            out.append("")
        return "\n".join(out)

    @property
    def hash(self) -> str:
        """Digest of every setting that can change results."""
        canon = []
        for name, section in self.sections().items():
            for key, value in asdict(section).items():
                if (name, key) not in _UNHASHED:
                    canon.append(f"{name}.{key}={_format(value)}")
        return hashlib.sha256("\n".join(canon).encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        """Apply ``section.key -> text`` overrides, e.g. from the command line."""
        cfg = self
        for dotted, text in overrides.items():
            section, _, key = dotted.partition(".")
            cfg = cfg._set(section, key, text, where=f"override {dotted}")
        return cfg

    def _set(self, section: str, key: str, text: str, where: str) -> "RunConfig":
        sections = self.sections()
        if section not in sections:
            raise ConfigError(f"{where}: unknown section [{section}]")
        current = sections[section]
        types = {f.name: f.type for f in fields(current)}
        if key not in types:
            raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
        value = _parse(text, asdict(current)[key], f"{where}: [{section}] {key}")
        try:
            updated = replace(current, **{key: value})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: [{section}] {key}: {exc}") from None
        return replace(self, **{section: updated})

    # derived objects

    @property
    def dims(self) -> LatticeDims:
        return LatticeDims(self.lattice.a, self.lattice.b)

    def evolution_config(self) -> EvolutionConfig:
        e = self.evolution
        return EvolutionConfig(
            pop_size=e.pop_size,
            generations=e.generations,
            crossover_enabled=e.crossover,
            crossover_prob=e.crossover_prob,
            crossover_method=e.crossover_method,
            distinct_zero_frac=e.distinct_zero_frac,
            joint_zero_frac=e.joint_zero_frac,
            loss_delta_threshold=e.loss_delta_threshold,
            seed=self.run.seed,
            init_prob=e.init_prob,
        )

    def build_terrain(self) -> Terrain | None:
        t = self.terrain
        if t.kind == "none":
            return None
        if t.kind == "flat":
            return flat()
        if t.kind == "file":
            return Terrain.load(t.file)
        return generate_rugged(
            stream(t.seed), (t.slope_min, t.slope_max), (t.length_min, t.length_max), t.span
        )

    @property
    def friction_mode(self) -> str | None:
        return None if self.terrain.friction == "auto" else self.terrain.friction

    def problem(self) -> Problem:
        return Problem(
            dims=self.dims,
            side_length=self.lattice.side_length,
            terrain=self.build_terrain(),
            sim=self.sim,
            learn=self.learn,
            friction_mode=self.friction_mode,
        )

    def validate(self) -> "RunConfig":
        """Cross-field checks; raises ConfigError."""
        try:
            self.dims
            self.evolution_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        t = self.terrain
        if t.kind not in TERRAIN_KINDS:
            raise ConfigError(f"[terrain] kind must be one of {TERRAIN_KINDS}, got {t.kind!r}")
        if t.friction != "auto" and t.friction not in FRICTION_MODES:
            raise ConfigError(f"[terrain] friction must be auto or one of {sorted(FRICTION_MODES)}")
        if t.slope_min > t.slope_max or t.length_min <= 0 or t.length_min > t.length_max or t.span <= 0:
            raise ConfigError("[terrain] invalid slope/length ranges or span")
        if t.kind == "file" and not t.file:
            raise ConfigError("[terrain] kind = file needs a file path")
        if self.lattice.side_length <= 0:
            raise ConfigError("[lattice] side_length must be positive")
        if self.run.workers < 1 or self.run.checkpoint_every < 1:
            raise ConfigError("[run] workers and checkpoint_every must be at least 1")
        if self.learn.iterations < 1 or self.learn.checkpoint_stride < 1:
            raise ConfigError("[learn] iterations and checkpoint_stride must be at least 1")
        return self


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, like, where: str):
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return text


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` per section, for diagnostics."""
    where, section = {}, ""
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = s.split("=", 1)[0].split(":", 1)[0].strip().lower()
            where[(section, key)] = lineno
    return where


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Build a RunConfig from sectioned text; missing keys keep their defaults."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    lines = _key_lines(text)
    cfg = RunConfig()
    for section in parser.sections():
        for key, value in parser.items(section):
            cfg = cfg._set(section, key, value, where=f"{source}:{lines.get((section, key), '?')}")
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))
