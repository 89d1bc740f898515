"""Flat ``key = value`` run configuration."""

from dataclasses import dataclass, fields, replace
import os

from ..enrich import MODES, EnrichmentPolicy

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


@dataclass
class RunConfig:
    coarse: int = 8
    fine: int = 32
    # KAPPA v1 file path, "field:<name>" for a named generator, or "constant:<value>"
    kappa: str = "field:channels-8x8"
    contrast: float = None
    source: str = "one"
    initial_basis: int = 1
    dof_convention: str = "all"
    mode: str = "online_full"
    theta: float = 0.7
    tol: float = 0.0
    max_iters: int = 10
    n0: int = 40
    window_advance: int = None
    neighbors: bool = False
    include_prior: bool = False
    basis_per_marked: int = 1
    per_subiteration: bool = False
    timing: bool = False
    seed: int = None
    out: str = "run.csv"
    plot: str = None
    cache_dir: str = None

    def __post_init__(self):
        for name in ("coarse", "fine", "initial_basis"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.dof_convention not in ("all", "interior"):
            raise ValueError(f"dof_convention must be 'all' or 'interior', got {self.dof_convention!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.contrast is not None and self.contrast < 1:
            raise ValueError("contrast must be >= 1")

    def policy(self):
        return EnrichmentPolicy(mode=self.mode, theta=self.theta, tol=self.tol,
                                max_iterations=self.max_iters,
                                basis_per_marked=self.basis_per_marked, n0=self.n0,
                                window_advance=self.window_advance, neighbors=self.neighbors,
                                include_prior=self.include_prior)

    def updated(self, **overrides):
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        types = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, value)
        return cls(**values)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())


_INTS = {"coarse", "fine", "initial_basis", "max_iters", "n0", "window_advance",
         "basis_per_marked", "seed"}
_FLOATS = {"contrast", "theta", "tol"}
_BOOLS = {"neighbors", "include_prior", "per_subiteration", "timing"}


def _coerce(key, value):
    if value.lower() in ("none", ""):
        return None
    if key in _INTS:
        return int(value)
    if key in _FLOATS:
        return float(value)
    if key in _BOOLS:
        try:
            return _BOOL[value.lower()]
        except KeyError:
            raise ValueError(f"{key}: not a boolean: {value!r}") from None
    return value


CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "configs")


def shipped_configs():
    """Names of the configurations shipped with the package."""
    return sorted(f[:-4] for f in os.listdir(CONFIG_DIR) if f.endswith(".cfg"))


def shipped_config_path(name):
    path = os.path.join(CONFIG_DIR, f"{name}.cfg")
    if not os.path.isfile(path):
        raise KeyError(f"unknown shipped config {name!r}; known: {shipped_configs()}")
    return path
