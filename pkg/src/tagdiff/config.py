"""Run configuration: INI-style ``[section]`` / ``key = value`` files with validated defaults."""

from __future__ import annotations

import configparser
import dataclasses
import math
import typing
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import DensityPerturbation, GasConfig
from .trees import BadSetQuery, PruningProfile


class ConfigError(ValueError):
    """Unknown key, unparsable value, or violated constraint; the message names the key."""


@dataclass(frozen=True)
class GasSection:
    """Hard-sphere gas.  ``alpha`` may replace ``eps`` (then eps = (alpha / N)^(1/(d-1)))."""

    N: int = 500
    eps: float = 0.004
    alpha: float = math.nan
    beta: float = 1.0
    dim: int = 2
    seed: int = -1     # when >= 0, overrides run.seed


@dataclass(frozen=True)
class Rho0Section:
    """Initial tagged density 1 + sum a_k cos(2 pi k.x); ``modes`` reads ``1,0:0.5; 0,1:0.2``."""

    modes: str = "1,0:0.5"


@dataclass(frozen=True)
class MDSection:
    t_end: float = 1.0
    sample_times: tuple = ()
    n_rep: int = 500
    times: tuple = (0.5, 1.0, 2.0)
    N_check: int = 200


@dataclass(frozen=True)
class LBSection:
    """Jump process and velocity-grid solver; NaN alpha means the gas value."""

    alpha: float = math.nan
    grid_n: int = 25
    v_max: float = math.nan
    t_end: float = 10.0
    n_paths: int = 20000
    t_max: float = 30.0
    tau_end: float = 0.1
    alphas: tuple = (5.0, 10.0, 20.0)
    n_tau: int = 5


@dataclass(frozen=True)
class PruningSection:
    A: int = 2
    A_compare: int = 3
    h: float = 0.2
    K: int = 5
    n_rep: int = 200
    log: str = ""


@dataclass(frozen=True)
class BadSetSection:
    separation: tuple = (0.2, 0.0)
    eps0: float = 0.01
    abar: float = 0.001
    delta: float = 0.05
    E: float = 3.0
    t: float = 0.1
    n_mc: int = 2_000_000


@dataclass(frozen=True)
class TreesSection:
    n_specs: int = 10_000
    max_creations: int = 10
    eps: float = 0.01
    t: float = 1.0
    E: float = 3.0
    delta: float = 0.02


@dataclass(frozen=True)
class CompareSection:
    times: tuple = (0.0, 0.5, 1.0)
    n_rep: int = 500
    Ns: tuple = (250, 500, 1000)


@dataclass(frozen=True)
class BrownianSection:
    alphas: tuple = (4.0, 8.0, 16.0)
    T: float = 1.0
    n_paths: int = 5000
    lag: float = 0.1


@dataclass(frozen=True)
class TightnessSection:
    alpha: float = 8.0
    T: float = 1.0
    etas: tuple = (0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001)
    xi: float = 0.25
    n_paths: int = 2000
    mesh: float = 2.5e-4


@dataclass(frozen=True)
class RunSection:
    experiment: str = ""
    seed: int = 0
    out: str = "out"
    jobs: int = 1


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    gas: GasSection = field(default_factory=GasSection)
    rho0: Rho0Section = field(default_factory=Rho0Section)
    md: MDSection = field(default_factory=MDSection)
    lb: LBSection = field(default_factory=LBSection)
    pruning: PruningSection = field(default_factory=PruningSection)
    badset: BadSetSection = field(default_factory=BadSetSection)
    trees: TreesSection = field(default_factory=TreesSection)
    compare: CompareSection = field(default_factory=CompareSection)
    brownian: BrownianSection = field(default_factory=BrownianSection)
    tightness: TightnessSection = field(default_factory=TightnessSection)

    # --- derived objects ---------------------------------------------------

    @property
    def seed(self) -> int:
        return self.gas.seed if self.gas.seed >= 0 else self.run.seed

    def gas_config(self) -> GasConfig:
        g = self.gas
        if math.isnan(g.eps):
            return GasConfig.from_alpha(g.N, g.alpha, beta=g.beta, dim=g.dim, seed=self.seed)
        return GasConfig(g.N, g.eps, g.beta, g.dim, self.seed)

    @property
    def alpha(self) -> float:
        return self.gas_config().alpha

    @property
    def lb_alpha(self) -> float:
        return self.alpha if math.isnan(self.lb.alpha) else self.lb.alpha

    @property
    def v_max(self) -> float:
        return 6.0 / math.sqrt(self.gas.beta) if math.isnan(self.lb.v_max) else self.lb.v_max

    def density(self) -> DensityPerturbation:
        return DensityPerturbation(parse_modes(self.rho0.modes, self.gas.dim), self.gas.dim)

    def pruning_profile(self, A: int | None = None) -> PruningProfile:
        p = self.pruning
        return PruningProfile(p.A if A is None else A, p.h, p.K)

    def badset_query(self, t: float | None = None, abar: float | None = None) -> BadSetQuery:
        b = self.badset
        return BadSetQuery(np.array(b.separation), b.eps0, b.abar if abar is None else abar,
                           b.delta, b.E, b.t if t is None else t)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, seed=int(seed)),
                                   gas=dataclasses.replace(self.gas, seed=-1))

    def echo(self) -> str:
        """The effective configuration in the same INI format it was read from."""
        lines = []
        for sec in dataclasses.fields(self):
            lines.append(f"[{sec.name}]")
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)


def _format(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_modes(text: str, dim: int) -> tuple:
    modes = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        try:
            k, a = chunk.split(":")
            kv = tuple(int(c) for c in k.split(","))
            modes.append((kv, float(a)))
        except ValueError as exc:
            raise ConfigError(f"rho0.modes: cannot parse {chunk!r} (expected k1,k2:amp)") from exc
        if len(kv) != dim:
            raise ConfigError(f"rho0.modes: wave-vector {kv} does not have dimension {dim}")
    return tuple(modes)


def _convert(key: str, raw: str, default):
    kind = type(default)
    try:
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            items = [x for x in raw.replace(";", ",").split(",") if x.strip()]
            conv = int if default and all(isinstance(x, int) for x in default) else float
            return tuple(conv(x) for x in items)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc


def _require(ok: bool, key: str, constraint: str) -> None:
    if not ok:
        raise ConfigError(f"{key}: violates {constraint}")


def validate(cfg: RunConfig) -> RunConfig:
    g = cfg.gas
    _require(g.dim in (2, 3), "gas.dim", "dim in {2, 3}")
    _require(g.N >= 2, "gas.N", "N >= 2")
    _require(g.beta > 0, "gas.beta", "beta > 0")
    _require(not (math.isnan(g.eps) and math.isnan(g.alpha)), "gas.eps", "one of eps or alpha")
    if not math.isnan(g.eps):
        _require(0 < g.eps < 0.25, "gas.eps", "0 < eps < 1/4")
        _require(math.isnan(g.alpha) or math.isclose(g.alpha, g.N * g.eps ** (g.dim - 1)),
                 "gas.alpha", "alpha = N eps^(d-1)")
    try:
        cfg.gas_config()
    except ValueError as exc:
        raise ConfigError(f"gas: {exc}") from exc
    try:
        cfg.density()
    except ValueError as exc:
        raise ConfigError(f"rho0.modes: {exc}") from exc
    p = cfg.pruning
    _require(p.A >= 2, "pruning.A", "A >= 2")
    _require(p.A_compare >= 2, "pruning.A_compare", "A >= 2")
    _require(p.h > 0, "pruning.h", "h > 0")
    _require(p.K >= 1, "pruning.K", "K >= 1")
    _require(cfg.lb.grid_n >= 14, "lb.grid_n", "grid_n >= 14")
    _require(not cfg.lb_alpha < 0, "lb.alpha", "alpha >= 0")
    b = cfg.badset
    _require(len(b.separation) == g.dim, "badset.separation", "one component per dimension")
    try:
        cfg.badset_query()
    except ValueError as exc:
        raise ConfigError(f"badset: {exc}") from exc
    t = cfg.trees
    _require(0 < t.eps < 0.25, "trees.eps", "0 < eps < 1/4")
    _require((t.max_creations + 1) * t.delta < t.t, "trees.delta",
             "(max_creations + 1) delta < t")
    _require(cfg.compare.n_rep >= 500, "compare.n_rep", "n_rep >= 500")
    _require(all(x > y for x, y in zip(cfg.tightness.etas, cfg.tightness.etas[1:])),
             "tightness.etas", "strictly decreasing")
    _require(all(x < y for x, y in zip(cfg.brownian.alphas, cfg.brownian.alphas[1:])),
             "brownian.alphas", "strictly increasing")
    _require(cfg.run.jobs >= 1, "run.jobs", "jobs >= 1")
    return cfg


_SECTION_TYPES = typing.get_type_hints(RunConfig)


def parse_config(text: str) -> RunConfig:
    """Parse and validate; missing keys take the dataclass defaults."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    built = {}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"[{name}]: unknown section")
        cls = _SECTION_TYPES[name]
        default = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"{name}.{key}: unknown key")
            kw[key] = _convert(f"{name}.{key}", raw, getattr(default, key))
        if name == "gas" and "alpha" in kw and "eps" not in kw:
            kw["eps"] = math.nan
        built[name] = cls(**kw)
    return validate(RunConfig(**built))


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
