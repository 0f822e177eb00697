"""Run configuration: one JSON document plus ``--set a.b=value`` overrides.

Every numeric range is checked when the configuration is built, so the
commands can assume a valid :class:`RunConfig`.
"""
import copy
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

from .errors import ConfigError
from .generators import EVEN, MIXED, ODD

DEFAULTS = {
    "eos": {"kind": "polytrope", "k": 2.0},
    "gamma": 0.02,
    "nu_ring": -0.2,
    # support quadrature order (radial, speed, angle) and the finite-difference
    # spacings of the bracket order test
    "grid": {"nr": 64, "nw": 24, "nL": 16, "orders": [0.025, 0.0125, 0.00625]},
    "evolve": {"dt": None, "T_end": None, "inner_iters": 2, "scheme": "characteristic",
               "dump_every": 0},
    "sample": {"seed": 0, "count": 20, "generator_family": ODD, "expression": None},
    "scan": {"gammas": [0.005, 0.01, 0.02, 0.04], "count": 8, "target": 0.75},
    "expansion": {"epsilons": [1e-2, 5e-3, 2.5e-3]},
    "output": {"dir": "ev-lab-out", "format": "csv"},
}

FAMILIES = (ODD, EVEN, MIXED)
FORMATS = ("csv",)


@dataclass(frozen=True)
class EosConfig:
    kind: str
    k: float


@dataclass(frozen=True)
class GridConfig:
    nr: int
    nw: int
    nL: int
    orders: tuple

    @property
    def quadrature_order(self):
        return (self.nr, self.nw, self.nL)


@dataclass(frozen=True)
class EvolveConfig:
    dt: Optional[float]
    T_end: Optional[float]
    inner_iters: int
    scheme: str
    dump_every: int


@dataclass(frozen=True)
class SampleConfig:
    seed: int
    count: int
    generator_family: str
    expression: Optional[str]


@dataclass(frozen=True)
class ScanConfig:
    gammas: tuple
    count: int
    target: float


@dataclass(frozen=True)
class ExpansionConfig:
    epsilons: tuple


@dataclass(frozen=True)
class OutputConfig:
    dir: str
    format: str


@dataclass(frozen=True)
class RunConfig:
    eos: EosConfig
    gamma: float
    nu_ring: float
    grid: GridConfig
    evolve: EvolveConfig
    sample: SampleConfig
    scan: ScanConfig
    expansion: ExpansionConfig
    output: OutputConfig

    def to_dict(self):
        d = asdict(self)
        for key in ("grid", "scan", "expansion"):
            for name, val in d[key].items():
                if isinstance(val, tuple):
                    d[key][name] = list(val)
        return d


def _merge(base, over, path=""):
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where!r} must be an object")
            _merge(base[key], val, where + ".")
        else:
            base[key] = val


def parse_override(text):
    """``"a.b=value"`` to ``(["a", "b"], value)``; the value is read as JSON if possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def apply_override(doc, parts, value):
    node = doc
    for i, p in enumerate(parts[:-1]):
        if not isinstance(node, dict) or p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown configuration key {'.'.join(parts[:i + 1])!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown configuration key {'.'.join(parts)!r}")
    if isinstance(node[parts[-1]], dict):
        raise ConfigError(f"{'.'.join(parts)!r} is a section, not a value")
    node[parts[-1]] = value


def _num(value, name, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return int(value)
    x = float(value)
    if not math.isfinite(x):
        raise ConfigError(f"{name} must be finite")
    return x


def _positive_int(value, name, allow_zero=False):
    n = _num(value, name, int)
    if n < 0 or (n == 0 and not allow_zero):
        raise ConfigError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {n}")
    return n


def _positive_list(values, name):
    if not isinstance(values, (list, tuple)):
        raise ConfigError(f"{name} must be a list")
    out = tuple(_num(v, name) for v in values)
    if any(v <= 0.0 for v in out):
        raise ConfigError(f"{name} entries must be positive")
    return out


def validate(doc):
    """Build a :class:`RunConfig` from a merged document, checking every range."""
    eos = doc["eos"]
    if eos["kind"] != "polytrope":
        raise ConfigError(f"unknown eos.kind {eos['kind']!r}")
    k = _num(eos["k"], "eos.k")
    if not 0.0 < k < 3.5:
        raise ConfigError(f"eos.k must lie in ]0, 7/2[, got {k}")
    gamma = _num(doc["gamma"], "gamma")
    if gamma <= 0.0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    nu_ring = _num(doc["nu_ring"], "nu_ring")
    if nu_ring > 0.0:
        raise ConfigError(f"nu_ring must be negative, got {nu_ring}")
    g = doc["grid"]
    grid = GridConfig(_positive_int(g["nr"], "grid.nr"), _positive_int(g["nw"], "grid.nw"),
                      _positive_int(g["nL"], "grid.nL"), _positive_list(g["orders"], "grid.orders"))
    if grid.nL % 2:
        raise ConfigError("grid.nL must be even (parity splits reflect the angular nodes)")
    e = doc["evolve"]
    dt = None if e["dt"] is None else _num(e["dt"], "evolve.dt")
    if dt is not None and dt <= 0.0:
        raise ConfigError("evolve.dt must be positive")
    T_end = None if e["T_end"] is None else _num(e["T_end"], "evolve.T_end")
    if T_end is not None and T_end < 0.0:
        raise ConfigError("evolve.T_end must be non-negative")
    if e["scheme"] not in ("characteristic", "grid"):
        raise ConfigError(f"unknown evolve.scheme {e['scheme']!r}")
    evolve = EvolveConfig(dt, T_end, _positive_int(e["inner_iters"], "evolve.inner_iters", allow_zero=True),
                          e["scheme"], _positive_int(e["dump_every"], "evolve.dump_every", allow_zero=True))
    s = doc["sample"]
    if s["generator_family"] not in FAMILIES:
        raise ConfigError(f"sample.generator_family must be one of {FAMILIES}")
    if s["expression"] is not None and not isinstance(s["expression"], str):
        raise ConfigError("sample.expression must be a string")
    sample = SampleConfig(_positive_int(s["seed"], "sample.seed", allow_zero=True),
                          _positive_int(s["count"], "sample.count"), s["generator_family"], s["expression"])
    sc = doc["scan"]
    scan = ScanConfig(_positive_list(sc["gammas"], "scan.gammas"), _positive_int(sc["count"], "scan.count"),
                      _num(sc["target"], "scan.target"))
    expansion = ExpansionConfig(_positive_list(doc["expansion"]["epsilons"], "expansion.epsilons"))
    o = doc["output"]
    if o["format"] not in FORMATS:
        raise ConfigError(f"output.format must be one of {FORMATS}")
    if not isinstance(o["dir"], str) or not o["dir"]:
        raise ConfigError("output.dir must be a non-empty string")
    return RunConfig(EosConfig(eos["kind"], k), gamma, nu_ring, grid, evolve, sample, scan, expansion,
                     OutputConfig(o["dir"], o["format"]))


def load_config(path=None, overrides=()):
    """Defaults, then the JSON file at ``path``, then ``key=value`` overrides."""
    doc = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed configuration {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("configuration must be a JSON object")
        _merge(doc, user)
    for text in overrides:
        apply_override(doc, *parse_override(text))
    return validate(doc)
