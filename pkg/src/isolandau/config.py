"""Plain-text run configuration: sectioned key = value files.

Format: `[section]` headers, `key = value` lines, `#` comments, blank lines
ignored.  Every constraint violation is reported as a ConfigError carrying
the offending line number; unknown sections or keys are rejected rather than
silently ignored.
"""

import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError

_SECTIONS = {
    "grid": {"n", "h", "L"},
    "time": {"tau", "t_final", "alpha"},
    "initial": {"kind", "mass", "sigma", "radius", "offset", "center", "path"},
    "solver": {
        "backend",
        "u_floor",
        "outer_tol",
        "newton_tol",
        "outer_max",
        "newton_max",
        "enforce_even",
    },
    "diagnostics": {"cadence", "audits", "epsilon", "reference_ball", "dissipation"},
    "regularity": {
        "enabled",
        "poincare_cube",
        "poincare_epsilon",
        "poincare_count",
        "poincare_seed",
        "moser_p",
        "moser_q",
        "moser_n_max",
    },
    "output": {"dir", "seed"},
}

_IC_KINDS = ("gaussian", "ball", "double_bump", "file")


@dataclass
class RunConfig:
    n: int
    h: float
    tau: float
    t_final: float
    alpha: float
    ic_kind: str
    ic_mass: float
    ic_sigma: float
    ic_radius: float
    ic_offset: float
    ic_center: tuple
    ic_path: str
    backend: str
    u_floor: float  # <= 0 means "auto": derived from mass and box size
    outer_tol: float
    newton_tol: float
    outer_max: int
    newton_max: int
    enforce_even: bool
    cadence: int
    audits: bool
    epsilon: float
    reference_ball: float  # <= 0 means auto (L/2)
    dissipation: str
    reg_enabled: bool
    poincare_cube: float  # <= 0 means auto (L/2)
    poincare_epsilon: float
    poincare_count: int
    poincare_seed: int
    moser_p: float
    moser_q: float
    moser_n_max: int
    output_dir: str
    seed: int
    raw_text: str = field(repr=False, default="")

    @property
    def half_extent(self):
        return self.h * (self.n - 1) / 2.0

    @property
    def config_hash(self):
        return hashlib.sha256(self.raw_text.encode()).hexdigest()


def _parse_lines(text):
    """Raw pass: {(section, key): (value, line_no)} with format errors."""
    out = {}
    section = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {ln}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"line {ln}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"line {ln}: key outside any [section]")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _SECTIONS[section]:
            raise ConfigError(f"line {ln}: unknown key {key!r} in section [{section}]")
        if (section, key) in out:
            raise ConfigError(f"line {ln}: duplicate key {key!r} in section [{section}]")
        out[(section, key)] = (val, ln)
    return out


class _Reader:
    def __init__(self, entries):
        self.entries = entries

    def _fetch(self, section, key, default):
        if (section, key) in self.entries:
            return self.entries[(section, key)]
        if default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r} in section [{section}]")
        return default, None

    def num(self, section, key, default=None, kind=float):
        val, ln = self._fetch(section, key, default)
        if ln is None:
            return val
        try:
            return kind(val)
        except ValueError:
            raise ConfigError(f"line {ln}: {key} must be a {kind.__name__}, got {val!r}")

    def string(self, section, key, default=None, choices=None):
        val, ln = self._fetch(section, key, default)
        if ln is not None and choices and val not in choices:
            raise ConfigError(f"line {ln}: {key} must be one of {choices}, got {val!r}")
        return val

    def boolean(self, section, key, default=None):
        val, ln = self._fetch(section, key, default)
        if ln is None:
            return val
        low = val.lower()
        if low in ("true", "on", "yes", "1"):
            return True
        if low in ("false", "off", "no", "0"):
            return False
        raise ConfigError(f"line {ln}: {key} must be a boolean, got {val!r}")

    def line_of(self, section, key):
        return self.entries.get((section, key), (None, None))[1]


_REQUIRED = object()


def parse_config(text):
    """Parse and fully validate a configuration document."""
    entries = _parse_lines(text)
    r = _Reader(entries)

    n = r.num("grid", "n", _REQUIRED, int)
    if n < 3 or n % 2 == 0:
        raise ConfigError(f"line {r.line_of('grid', 'n')}: n must be odd and >= 3")
    has_h = ("grid", "h") in entries
    has_L = ("grid", "L") in entries
    if has_h == has_L:
        raise ConfigError("section [grid] must set exactly one of h or L")
    if has_h:
        h = r.num("grid", "h", _REQUIRED)
        if h <= 0:
            raise ConfigError(f"line {r.line_of('grid', 'h')}: h must be positive")
    else:
        L = r.num("grid", "L", _REQUIRED)
        if L <= 0:
            raise ConfigError(f"line {r.line_of('grid', 'L')}: L must be positive")
        h = 2.0 * L / (n - 1)

    tau = r.num("time", "tau", _REQUIRED)
    if tau <= 0:
        raise ConfigError(f"line {r.line_of('time', 'tau')}: tau must be positive")
    t_final = r.num("time", "t_final", _REQUIRED)
    if t_final < 0:
        raise ConfigError(f"line {r.line_of('time', 't_final')}: t_final must be >= 0")
    alpha = r.num("time", "alpha", 1.0 / 11.0)
    if not 0 < alpha <= 1.0 / 11.0:
        raise ConfigError(f"line {r.line_of('time', 'alpha')}: alpha must lie in (0, 1/11]")

    kind = r.string("initial", "kind", _REQUIRED, choices=_IC_KINDS)
    mass = r.num("initial", "mass", 1.0)
    if kind != "file" and mass <= 0:
        raise ConfigError(f"line {r.line_of('initial', 'mass')}: mass must be positive")
    sigma = r.num("initial", "sigma", 1.0)
    if sigma <= 0:
        raise ConfigError(f"line {r.line_of('initial', 'sigma')}: sigma must be positive")
    radius = r.num("initial", "radius", 0.0)
    if kind == "ball" and radius <= 0:
        raise ConfigError("initial kind 'ball' requires a positive radius")
    offset = r.num("initial", "offset", 0.0)
    if kind == "double_bump" and offset <= 0:
        raise ConfigError("initial kind 'double_bump' requires a positive offset")
    path = r.string("initial", "path", "")
    if kind == "file" and not path:
        raise ConfigError("initial kind 'file' requires a path")
    center_s, center_ln = (entries.get(("initial", "center")) or ("0 0 0", None))
    parts = center_s.split()
    if len(parts) != 3:
        raise ConfigError(f"line {center_ln}: center must be three numbers")
    try:
        center = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"line {center_ln}: center must be three numbers")

    backend = r.string("solver", "backend", "spectral", choices=("spectral", "direct"))
    u_floor_s = r.string("solver", "u_floor", "auto")
    if u_floor_s == "auto":
        u_floor = -1.0
    else:
        try:
            u_floor = float(u_floor_s)
        except ValueError:
            raise ConfigError(
                f"line {r.line_of('solver', 'u_floor')}: u_floor must be a number or 'auto'"
            )
        if u_floor <= 0:
            raise ConfigError(
                f"line {r.line_of('solver', 'u_floor')}: u_floor must be positive"
            )
    outer_tol = r.num("solver", "outer_tol", 1e-11)
    newton_tol = r.num("solver", "newton_tol", 1e-11)
    if outer_tol <= 0 or newton_tol <= 0:
        raise ConfigError("solver tolerances must be positive")
    outer_max = r.num("solver", "outer_max", 60, int)
    newton_max = r.num("solver", "newton_max", 60, int)
    enforce_even = r.boolean("solver", "enforce_even", True)

    cadence = r.num("diagnostics", "cadence", 1, int)
    if cadence < 1:
        raise ConfigError(f"line {r.line_of('diagnostics', 'cadence')}: cadence must be >= 1")
    audits = r.boolean("diagnostics", "audits", True)
    epsilon = r.num("diagnostics", "epsilon", 0.2)
    if not 0 < epsilon < 0.4:
        raise ConfigError(
            f"line {r.line_of('diagnostics', 'epsilon')}: epsilon must lie in (0, 2/5)"
        )
    ball_s = r.string("diagnostics", "reference_ball", "auto")
    reference_ball = -1.0 if ball_s == "auto" else float(ball_s)
    dissipation = r.string(
        "diagnostics", "dissipation", "convolution", choices=("convolution", "double_sum")
    )

    reg_enabled = r.boolean("regularity", "enabled", True)
    cube_s = r.string("regularity", "poincare_cube", "auto")
    poincare_cube = -1.0 if cube_s == "auto" else float(cube_s)
    poincare_epsilon = r.num("regularity", "poincare_epsilon", 0.1)
    poincare_count = r.num("regularity", "poincare_count", 64, int)
    poincare_seed = r.num("regularity", "poincare_seed", 0, int)
    moser_p = r.num("regularity", "moser_p", 10.0 / 9.0)
    moser_q = r.num("regularity", "moser_q", 3.0)
    moser_n_max = r.num("regularity", "moser_n_max", 6, int)

    output_dir = r.string("output", "dir", "out")
    seed = r.num("output", "seed", 0, int)

    return RunConfig(
        n=n,
        h=h,
        tau=tau,
        t_final=t_final,
        alpha=alpha,
        ic_kind=kind,
        ic_mass=mass,
        ic_sigma=sigma,
        ic_radius=radius,
        ic_offset=offset,
        ic_center=center,
        ic_path=path,
        backend=backend,
        u_floor=u_floor,
        outer_tol=outer_tol,
        newton_tol=newton_tol,
        outer_max=outer_max,
        newton_max=newton_max,
        enforce_even=enforce_even,
        cadence=cadence,
        audits=audits,
        epsilon=epsilon,
        reference_ball=reference_ball,
        dissipation=dissipation,
        reg_enabled=reg_enabled,
        poincare_cube=poincare_cube,
        poincare_epsilon=poincare_epsilon,
        poincare_count=poincare_count,
        poincare_seed=poincare_seed,
        moser_p=moser_p,
        moser_q=moser_q,
        moser_n_max=moser_n_max,
        output_dir=output_dir,
        seed=seed,
        raw_text=text,
    )


def load_config(path):
    with open(path, "r") as fh:
        return parse_config(fh.read())
