"""YAML run configuration: schema, defaults, validation and round-trip serialisation.

Schema (every section and key optional, defaults shown by ``default_config_text()``)::

    geometry:   {L, H}
    resolution: {nz, nr, nz_thick, nr_thick, n_thin}
    fluid:      {p, alpha, reduction, kappa1, kappa2, kappa3}
    thick:      {mu_s, lam}
    thin:       {operator, nonlinearity, gamma, small_data}
    boundary:   {P_in: SIGNAL, P_out: SIGNAL}
    scheme:     {dt, n_steps, T, newton_tol, picard_tol, max_iters, eps_j, relaxation, fluid_solver}
    initial:    {amplitude, velocity, perturbation, thick, checkpoint}
    output:     {directory, stride, formats}
    seed:       int

A SIGNAL is ``{kind: constant, value}``, ``{kind: pulse, value, start, width}``
or ``{kind: table, times: [...], values: [...]}``. ``T`` is optional and must
equal ``dt * n_steps`` when given.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .constitutive import FluidLaw, ThickLaw, ThinLaw, certify_constants
from .discretization.spaces import Resolution
from .geometry import EPS_J, ReferenceGeometry
from .signals import KINDS, Signal


class ConfigError(ValueError):
    pass


class ConfigParseError(ConfigError):
    def __init__(self, msg: str, line: int | None = None, column: int | None = None):
        loc = "" if line is None else f" at line {line}, column {column}"
        super().__init__(f"parse error{loc}: {msg}")
        self.line, self.column = line, column


class ConfigValidationError(ConfigError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(violations))
        self.violations = list(violations)


@dataclass(frozen=True)
class GeometrySection:
    L: float = 6.0
    H: float = 0.5


@dataclass(frozen=True)
class ResolutionSection:
    nz: int = 16
    nr: int = 8
    nz_thick: int = 16
    nr_thick: int = 4
    n_thin: int = 8


@dataclass(frozen=True)
class FluidSection:
    p: float = 3.0
    alpha: float = 1.0
    reduction: bool = False
    kappa1: float | None = None
    kappa2: float | None = None
    kappa3: float | None = None


@dataclass(frozen=True)
class ThickSection:
    mu_s: float = 1.0
    lam: float = 1.0


@dataclass(frozen=True)
class ThinSection:
    operator: str = "bending"
    nonlinearity: str = "zero"
    gamma: float = 0.0
    small_data: float = math.inf


@dataclass(frozen=True)
class SchemeSection:
    dt: float = 0.01
    n_steps: int = 10
    T: float | None = None
    newton_tol: float = 1e-10
    picard_tol: float = 1e-10
    max_iters: int = 60
    eps_j: float = EPS_J
    relaxation: float = 1.0
    fluid_solver: str = "picard"


@dataclass(frozen=True)
class InitialSection:
    amplitude: float = 0.0
    velocity: float = 0.0
    perturbation: float = 0.0
    thick: str = "lifting"
    checkpoint: str | None = None


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    stride: int = 0
    formats: tuple = ("csv", "npz")


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometrySection = field(default_factory=GeometrySection)
    resolution: ResolutionSection = field(default_factory=ResolutionSection)
    fluid: FluidSection = field(default_factory=FluidSection)
    thick: ThickSection = field(default_factory=ThickSection)
    thin: ThinSection = field(default_factory=ThinSection)
    boundary_in: Signal = field(default_factory=Signal)
    boundary_out: Signal = field(default_factory=Signal)
    scheme: SchemeSection = field(default_factory=SchemeSection)
    initial: InitialSection = field(default_factory=InitialSection)
    output: OutputSection = field(default_factory=OutputSection)
    seed: int = 0

    # -- builders ---------------------------------------------------------
    def fluid_law(self, certify: bool = True) -> FluidLaw:
        f = self.fluid
        law = FluidLaw(p=f.p, alpha=f.alpha, reduction=f.reduction)
        if certify:
            law = certify_constants(law)
        given = {k: getattr(f, k) for k in ("kappa1", "kappa2", "kappa3") if getattr(f, k) is not None}
        return replace(law, **given)

    def scheme_config(self):
        from .scheme import SchemeConfig

        s = self.scheme
        return SchemeConfig(dt=s.dt, n_steps=s.n_steps, newton_tol=s.newton_tol,
                            picard_tol=s.picard_tol, max_iters=s.max_iters, eps_j=s.eps_j,
                            relaxation=s.relaxation, fluid_solver=s.fluid_solver)

    def problem_setup(self, certify: bool = True):
        from .scheme import Laws, ProblemSetup

        g, r, t = self.geometry, self.resolution, self.thin
        laws = Laws(self.fluid_law(certify), ThickLaw(self.thick.mu_s, self.thick.lam),
                    ThinLaw(t.nonlinearity, t.gamma, t.operator))
        return ProblemSetup(ReferenceGeometry(g.L, g.H),
                            Resolution(r.nz, r.nr, r.nz_thick, r.nr_thick, r.n_thin), laws,
                            self.boundary_in, self.boundary_out)

    def initial_state(self, setup):
        from .scheme import initial_state, read_checkpoint

        i = self.initial
        if i.checkpoint:
            return read_checkpoint(i.checkpoint)[0]
        return initial_state(setup.spaces, i.amplitude, i.velocity, seed=self.seed,
                             perturbation=i.perturbation, thick=i.thick,
                             thick_law=setup.laws.thick)

    def to_dict(self) -> dict:
        d = {}
        for name in ("geometry", "resolution", "fluid", "thick", "thin"):
            d[name] = asdict(getattr(self, name))
        d["boundary"] = {"P_in": self.boundary_in.to_dict(), "P_out": self.boundary_out.to_dict()}
        d["scheme"] = asdict(self.scheme)
        d["initial"] = asdict(self.initial)
        out = asdict(self.output)
        out["formats"] = list(out["formats"])
        d["output"] = out
        d["seed"] = self.seed
        return d

    def with_overrides(self, **kw) -> "RunConfig":
        """Apply CLI-style overrides (dt, n_steps, directory, seed) and re-validate."""
        d = self.to_dict()
        if kw.get("dt") is not None:
            d["scheme"]["dt"] = kw["dt"]
            d["scheme"]["T"] = None
        if kw.get("n_steps") is not None:
            d["scheme"]["n_steps"] = kw["n_steps"]
            d["scheme"]["T"] = None
        if kw.get("directory") is not None:
            d["output"]["directory"] = kw["directory"]
        if kw.get("seed") is not None:
            d["seed"] = kw["seed"]
        return from_mapping(d)


_SECTIONS = {
    "geometry": GeometrySection,
    "resolution": ResolutionSection,
    "fluid": FluidSection,
    "thick": ThickSection,
    "thin": ThinSection,
    "scheme": SchemeSection,
    "initial": InitialSection,
    "output": OutputSection,
}
_TOP = set(_SECTIONS) | {"boundary", "seed"}


def _coerce(value, default, path: str, bad: list):
    """Check a scalar against the type of its default (None defaults accept numbers or None)."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            bad.append(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            bad.append(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float) or default is None and not path.endswith("checkpoint"):
        if value is None and default is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            bad.append(f"{path}: expected a number, got {value!r}")
            return value
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            bad.append(f"{path}: expected a list, got {value!r}")
            return value
        return tuple(value)
    if value is not None and not isinstance(value, str):
        bad.append(f"{path}: expected a string, got {value!r}")
    return value


def _section(cls, data, path: str, bad: list):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        bad.append(f"{path}: expected a mapping")
        return cls()
    defaults = cls()
    names = {f.name for f in fields(cls)}
    for k in data:
        if k not in names:
            bad.append(f"{path}.{k}: unknown key")
    kw = {k: _coerce(v, getattr(defaults, k), f"{path}.{k}", bad) for k, v in data.items() if k in names}
    return replace(defaults, **kw)


def _signal(data, path: str, bad: list) -> Signal:
    if data is None:
        return Signal()
    if not isinstance(data, dict):
        bad.append(f"{path}: expected a mapping")
        return Signal()
    allowed = {"kind", "value", "start", "width", "times", "values"}
    for k in data:
        if k not in allowed:
            bad.append(f"{path}.{k}: unknown key")
    kind = data.get("kind", "constant")
    if kind not in KINDS:
        bad.append(f"{path}.kind: must be one of {', '.join(KINDS)}, got {kind!r}")
        return Signal()
    kw = {"kind": kind}
    for k in ("value", "start", "width"):
        if k in data:
            kw[k] = _coerce(data[k], 0.0, f"{path}.{k}", bad)
    for k in ("times", "values"):
        if k in data:
            seq = data[k]
            if not isinstance(seq, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in seq
            ):
                bad.append(f"{path}.{k}: expected a list of numbers")
                return Signal()
            kw[k] = tuple(float(x) for x in seq)
    try:
        return Signal(**kw)
    except (TypeError, ValueError) as exc:
        bad.append(f"{path}: {exc}")
        return Signal()


def _validate(cfg: RunConfig, bad: list) -> None:
    g, r, f, th, tn, s, o = (cfg.geometry, cfg.resolution, cfg.fluid, cfg.thick, cfg.thin,
                             cfg.scheme, cfg.output)
    num = lambda x: isinstance(x, (int, float)) and not isinstance(x, bool)
    chk = lambda cond, msg: None if cond else bad.append(msg)
    if num(g.L):
        chk(g.L > 0, f"geometry.L: must be > 0, got {g.L}")
    if num(g.H):
        chk(g.H > 0, f"geometry.H: must be > 0, got {g.H}")
    for k in ("nz", "nr", "nz_thick", "nr_thick", "n_thin"):
        v = getattr(r, k)
        if isinstance(v, int) and not isinstance(v, bool):
            chk(v >= 1, f"resolution.{k}: must be >= 1, got {v}")
    if num(f.p):
        if f.reduction is True:
            chk(f.p >= 2, f"fluid.p: must satisfy p >= 2 in reduction mode, got {f.p}")
        else:
            chk(f.p > 2, f"fluid.p: must satisfy p > 2 (shear thickening), got {f.p}")
    if num(f.alpha):
        chk(f.alpha > 0, f"fluid.alpha: must be > 0, got {f.alpha}")
    for k in ("kappa1", "kappa3"):
        v = getattr(f, k)
        if num(v):
            chk(v > 0, f"fluid.{k}: must be > 0, got {v}")
    if num(th.mu_s):
        chk(th.mu_s > 0, f"thick.mu_s: must be > 0, got {th.mu_s}")
    if num(th.lam):
        chk(th.lam >= 0, f"thick.lam: must be >= 0, got {th.lam}")
    chk(tn.operator == "bending", f"thin.operator: only 'bending' is available, got {tn.operator!r}")
    chk(tn.nonlinearity in ("zero", "cubic"),
        f"thin.nonlinearity: must be 'zero' or 'cubic', got {tn.nonlinearity!r}")
    if num(tn.gamma):
        chk(tn.gamma >= 0, f"thin.gamma: must be >= 0, got {tn.gamma}")
    if num(tn.small_data):
        chk(tn.small_data > 0, f"thin.small_data: must be > 0, got {tn.small_data}")
    if num(s.dt):
        chk(s.dt > 0, f"scheme.dt: must be > 0, got {s.dt}")
    if isinstance(s.n_steps, int):
        chk(s.n_steps >= 0, f"scheme.n_steps: must be >= 0, got {s.n_steps}")
    if num(s.T) and num(s.dt) and isinstance(s.n_steps, int):
        chk(math.isclose(s.T, s.dt * s.n_steps, rel_tol=1e-9, abs_tol=1e-12),
            f"scheme.T: {s.T} is inconsistent with dt * n_steps = {s.dt * s.n_steps}")
    for k in ("newton_tol", "picard_tol", "eps_j"):
        v = getattr(s, k)
        if num(v):
            chk(v > 0, f"scheme.{k}: must be > 0, got {v}")
    if isinstance(s.max_iters, int):
        chk(s.max_iters >= 1, f"scheme.max_iters: must be >= 1, got {s.max_iters}")
    if num(s.relaxation):
        chk(0 < s.relaxation <= 1, f"scheme.relaxation: must lie in (0, 1], got {s.relaxation}")
    chk(s.fluid_solver in ("picard", "newton", "auto"),
        f"scheme.fluid_solver: must be 'picard', 'newton' or 'auto', got {s.fluid_solver!r}")
    chk(cfg.initial.thick in ("lifting", "extruded"),
        f"initial.thick: must be 'lifting' or 'extruded', got {cfg.initial.thick!r}")
    if isinstance(o.stride, int):
        chk(o.stride >= 0, f"output.stride: must be >= 0, got {o.stride}")
    if isinstance(o.formats, tuple):
        for x in o.formats:
            chk(x in ("csv", "npz"), f"output.formats: unknown format {x!r}")


def from_mapping(data) -> RunConfig:
    """Validate a parsed mapping; raises ConfigValidationError listing every violation."""
    bad: list[str] = []
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigValidationError(["<root>: expected a mapping of sections"])
    for k in data:
        if k not in _TOP:
            bad.append(f"{k}: unknown section")
    kw = {name: _section(cls, data.get(name), name, bad) for name, cls in _SECTIONS.items()}
    bnd = data.get("boundary") or {}
    if not isinstance(bnd, dict):
        bad.append("boundary: expected a mapping")
        bnd = {}
    for k in bnd:
        if k not in ("P_in", "P_out"):
            bad.append(f"boundary.{k}: unknown key")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        bad.append(f"seed: expected an integer, got {seed!r}")
        seed = 0
    cfg = RunConfig(boundary_in=_signal(bnd.get("P_in"), "boundary.P_in", bad),
                    boundary_out=_signal(bnd.get("P_out"), "boundary.P_out", bad), seed=seed, **kw)
    _validate(cfg, bad)
    if bad:
        raise ConfigValidationError(bad)
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse YAML text into a validated RunConfig."""
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line, col = (mark.line + 1, mark.column + 1) if mark is not None else (None, None)
        raise ConfigParseError(str(exc.problem or exc), line, col) from None
    except yaml.YAMLError as exc:
        raise ConfigParseError(str(exc)) from None
    return from_mapping(data)


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=False)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def default_config_text() -> str:
    return serialize_config(RunConfig())


__all__ = [
    "RunConfig",
    "ConfigError",
    "ConfigParseError",
    "ConfigValidationError",
    "parse_config",
    "load_config",
    "serialize_config",
    "config_hash",
]
