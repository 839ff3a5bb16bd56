"""Run configuration: a flat ``key = value`` text file.

Lines starting with ``#`` (and anything after ``#`` on a line) are comments.
Every key has a default; ``scenario`` must be given either in the file or
by the caller.  Unknown keys are rejected by name.

=====================  ==========  =============================================
key                    default     meaning
=====================  ==========  =============================================
scenario               (required)  balloon, sphere_drag, two_plates or cube
mesh                   (none)      optional mesh file replacing the built-in one
poisson                0.0         Poisson's ratio
flexural               5.77e-4     flexural rigidity parameter
coupling               1e-5        fluid-structure coupling strength
lam                    1           viscosity ratio (number >= 0 or ``inf``)
tau                    4.0         time step
t_end                  1310.0      final time (ignored when n_steps is set)
n_steps                (none)      number of time steps
tol                    1e-6        subiteration and Newton tolerance
max_subiterations      20          subiterations per step before failure
newton_max_iter        25          Newton iterations per structural solve
quad_tol               1e-7        adaptive quadrature tolerance
q_min                  2           first quadrature order tried
q_max                  36          last quadrature order tried
perturbation           0.005       interior perturbation amplitude
seed                   0           perturbation seed
emptying_time          4096.0      outflow magnitude empties the volume at this time
balloon_width          8           control cells across each cap
balloon_rows           32          control rows along the balloon side
balloon_inflow_rows    8           side rows belonging to the inflow segment
sphere_level           2           cube-sphere refinement level
gap                    0.1         plate separation (two_plates)
plate_cells            8           control cells across each plate
output_dir             output      output directory (``FEBE_OUTPUT_DIR`` overrides)
snapshot_every         10          steps between snapshots (0 disables)
snapshot_resolution    4           samples per element side in snapshots
=====================  ==========  =============================================
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

SCENARIOS = ("balloon", "sphere_drag", "two_plates", "cube")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    mesh: str | None = None
    poisson: float = 0.0
    flexural: float = 5.77e-4
    coupling: float = 1e-5
    lam: float = 1.0
    tau: float = 4.0
    t_end: float = 1310.0
    n_steps: int | None = None
    tol: float = 1e-6
    max_subiterations: int = 20
    newton_max_iter: int = 25
    quad_tol: float = 1e-7
    q_min: int = 2
    q_max: int = 36
    perturbation: float = 0.005
    seed: int = 0
    emptying_time: float = 4096.0
    balloon_width: int = 8
    balloon_rows: int = 32
    balloon_inflow_rows: int = 8
    sphere_level: int = 2
    gap: float = 0.1
    plate_cells: int = 8
    output_dir: str = "output"
    snapshot_every: int = 10
    snapshot_resolution: int = 4

    def __post_init__(self):
        _validate(self)

    @property
    def steps(self) -> int:
        if self.n_steps is not None:
            return self.n_steps
        return int(round(self.t_end / self.tau))

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _positive(name, v):
    if not v > 0:
        raise ConfigError(f"{name} must be positive, got {v!r}")


def _validate(c: RunConfig):
    if c.scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {c.scenario!r}; expected one of {', '.join(SCENARIOS)}")
    if not 0.0 <= c.poisson < 0.5:
        raise ConfigError(f"poisson must lie in [0, 0.5), got {c.poisson!r}")
    for name in ("flexural", "tau", "t_end", "tol", "quad_tol", "emptying_time", "gap"):
        _positive(name, getattr(c, name))
    if c.coupling < 0:
        raise ConfigError("coupling must be non-negative")
    if math.isnan(c.lam) or c.lam < 0:
        raise ConfigError("lam must be >= 0 or inf")
    if c.n_steps is not None and c.n_steps < 0:
        raise ConfigError("n_steps must be non-negative")
    if c.max_subiterations < 1 or c.newton_max_iter < 1:
        raise ConfigError("iteration budgets must be >= 1")
    if not 1 <= c.q_min < c.q_max <= 36:
        raise ConfigError("need 1 <= q_min < q_max <= 36")
    if c.perturbation < 0:
        raise ConfigError("perturbation must be non-negative")
    if c.balloon_width < 2 or c.balloon_rows < 2 or not 1 <= c.balloon_inflow_rows < c.balloon_rows:
        raise ConfigError("balloon dimensions out of range")
    if c.sphere_level < 1 or c.plate_cells < 1:
        raise ConfigError("sphere_level and plate_cells must be >= 1")
    if c.snapshot_every < 0 or c.snapshot_resolution < 1:
        raise ConfigError("snapshot cadence must be >= 0 and resolution >= 1")


def _convert(name, text):
    f = _FIELDS[name]
    kind = f.type
    if text.lower() in ("none", "") and "None" in str(kind):
        return None
    try:
        if "int" in str(kind):
            return int(text)
        if "float" in str(kind):
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None
    return text


def parse_config_text(text: str, **defaults) -> RunConfig:
    values = dict(defaults)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, value)
    unknown = set(values) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r}")
    if "scenario" not in values:
        raise ConfigError("missing required key 'scenario'")
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path, **defaults) -> RunConfig:
    """Read and validate a configuration file.

    Keyword arguments supply values for keys absent from the file.
    """
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text, **defaults)


def format_config(cfg: RunConfig) -> str:
    """Serialize every key; re-parsing gives an equal config."""
    lines = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        if v is None:
            continue
        if isinstance(v, float):
            v = "inf" if math.isinf(v) else repr(v)
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"
