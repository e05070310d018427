"""Experiment configuration: TOML files with dotted keys, validated strictly.

Example::

    recipe = "delay-decay"
    seed = 7
    replications = 2
    horizon = 200000
    schemes = ["mc_mwc", "fifo_bound"]
    instance.n = 100
    instance.gamma.kind = "degenerate"
    instance.gamma.params = [0.6]
    arrivals.kind = "bernoulli"
    arrivals.rate = 0.54
    grid.m = [1, 2, 4]
"""
import math
import re
import sys
from dataclasses import asdict, dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .schemes import KINDS
from .topology import ArrivalProcess, GammaDist, SessionSizeDist

RECIPES = ("scaling", "delay-decay", "load-sweep", "allocation-comparison")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "recipe": "scaling",
    "seed": 0,
    "replications": 1,
    "horizon": 100_000,
    "warmup": None,
    "output": "results",
    "schemes": None,
    "instance.n": [10],
    "instance.m": 1,
    "instance.m_rule": "fixed",
    "instance.gamma.kind": "uniform",
    "instance.gamma.params": [],
    "instance.size.kind": "degenerate",
    "instance.overlap": "disjoint",
    "instance.share_p": 0.0,
    "arrivals.kind": "bernoulli",
    "arrivals.rate": 0.5,
    "arrivals.values": [],
    "arrivals.probs": [],
    "grid.m": [],
    "grid.load": [],
    "scheme.block": 50,
    "scheme.fidelity": "ideal",
    "scheme.tracked": "all",
    "scheme.hist_len": 4096,
}

DEFAULT_SCHEMES = {
    "scaling": ["mc_mwc", "mwc_static"],
    "delay-decay": ["mc_mwc", "fifo_bound"],
    "load-sweep": ["mc_mwc", "mwc_static", "rlnc_static"],
    "allocation-comparison": ["mwc_static", "rlnc_static", "rlnc_random"],
}


@dataclass(frozen=True)
class MRule:
    kind: str  # log | exp | linear | fixed
    params: tuple = ()

    def __call__(self, n, fixed=1):
        if self.kind == "log":
            return max(1, math.ceil(self.params[0] * math.log(n)))
        if self.kind == "exp":
            a, b = self.params
            return max(1, math.ceil(a * b**n))
        if self.kind == "linear":
            return int(n)
        return int(fixed)

    def __str__(self):
        if self.params:
            return f"{self.kind}({','.join(f'{p:g}' for p in self.params)})"
        return self.kind


_RULE = re.compile(r"^\s*(log|exp|linear|fixed)\s*(?:\(([^)]*)\))?\s*$")


def parse_m_rule(text):
    """``log(c)`` -> ceil(c ln n); ``exp(a,b)`` -> ceil(a b^n); ``linear`` -> n; ``fixed``."""
    mt = _RULE.match(str(text))
    if not mt:
        raise ConfigError(f"instance.m_rule: cannot parse {text!r}")
    kind, args = mt.group(1), mt.group(2)
    try:
        params = tuple(float(x) for x in args.split(",")) if args and args.strip() else ()
    except ValueError:
        raise ConfigError(f"instance.m_rule: bad parameters in {text!r}") from None
    want = {"log": 1, "exp": 2, "linear": 0, "fixed": 0}[kind]
    if len(params) != want:
        raise ConfigError(f"instance.m_rule: {kind} takes {want} parameter(s), got {len(params)}")
    if any(p <= 0 for p in params):
        raise ConfigError(f"instance.m_rule: parameters must be positive in {text!r}")
    return MRule(kind, params)


@dataclass
class ExperimentConfig:
    recipe: str
    seed: int
    replications: int
    horizon: int
    warmup: int
    output: str
    schemes: list
    n_grid: list
    m_fixed: int
    m_rule: MRule
    gamma: GammaDist
    size_kind: str
    overlap: str
    share_p: float
    arrivals: ArrivalProcess
    m_grid: list
    load_grid: list
    block: int
    fidelity: str
    tracked: str
    hist_len: int
    raw: dict = field(default_factory=dict)

    def size_dist(self, n):
        return SessionSizeDist(self.size_kind, n)

    def m_for(self, n):
        return self.m_rule(n, self.m_fixed)

    def normalized(self):
        out = dict(self.raw)
        out["instance.m_rule"] = str(self.m_rule)
        return out

    def describe(self):
        d = asdict(self)
        d["m_rule"] = str(self.m_rule)
        d["gamma"] = {"kind": self.gamma.kind, "params": list(self.gamma.params)}
        d["arrivals"] = {"values": list(self.arrivals.values), "probs": list(self.arrivals.probs)}
        d.pop("raw")
        return d


def _flatten(tree, prefix=""):
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _listify(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _num(flat, key, kind=float, lo=None, strict_lo=False):
    v = flat[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"{key}: expected an integer, got {v!r}")
    v = kind(v)
    if lo is not None and (v <= lo if strict_lo else v < lo):
        raise ConfigError(f"{key}: must be {'>' if strict_lo else '>='} {lo}, got {v}")
    return v


def load_config(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None


def validate_config(source, strict=True):
    """Return ``(ExperimentConfig, warnings)``; ``source`` is a path or a dict."""
    tree = load_config(source) if not isinstance(source, dict) else source
    flat = _flatten(tree)
    warnings = []
    unknown = sorted(set(flat) - set(DEFAULTS))
    if unknown:
        msg = f"unknown key(s): {', '.join(unknown)}"
        if strict:
            raise ConfigError(msg)
        warnings.append(msg)
        for k in unknown:
            flat.pop(k)
    if "seed" not in flat:
        warnings.append("seed missing; defaulting to 0")
    merged = {**DEFAULTS, **flat}

    recipe = merged["recipe"]
    if recipe not in RECIPES:
        raise ConfigError(f"recipe: unknown recipe {recipe!r} (choose from {', '.join(RECIPES)})")
    seed = _num(merged, "seed", int, 0)
    reps = _num(merged, "replications", int, 1)
    horizon = _num(merged, "horizon", int, 1)
    warmup = merged["warmup"]
    if warmup is not None:
        warmup = _num(merged, "warmup", int, 0)
    output = str(merged["output"])

    schemes = merged["schemes"] or DEFAULT_SCHEMES[recipe]
    schemes = _listify(schemes)
    for s in schemes:
        if s not in KINDS:
            raise ConfigError(f"schemes: unknown scheme {s!r}")

    n_grid = _listify(merged["instance.n"])
    for n in n_grid:
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError(f"instance.n: sizes must be positive integers, got {n!r}")
    m_fixed = _num(merged, "instance.m", int, 1)
    rule = parse_m_rule(merged["instance.m_rule"])

    try:
        gamma = GammaDist(str(merged["instance.gamma.kind"]),
                          tuple(float(x) for x in _listify(merged["instance.gamma.params"])))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"instance.gamma: {exc}") from None
    size_kind = str(merged["instance.size.kind"])
    try:
        SessionSizeDist(size_kind, max(n_grid))
    except ValueError as exc:
        raise ConfigError(f"instance.size.kind: {exc}") from None
    overlap = str(merged["instance.overlap"])
    if overlap not in ("disjoint", "shared"):
        raise ConfigError(f"instance.overlap: unknown mode {overlap!r}")
    share_p = _num(merged, "instance.share_p", float, 0.0)
    if share_p > 1:
        raise ConfigError("instance.share_p: must lie in [0, 1]")

    kind = merged["arrivals.kind"]
    if kind == "bernoulli":
        lam = _num(merged, "arrivals.rate", float)
        if lam < 0:
            raise ConfigError(f"arrivals.rate: lambda must be >= 0, got {lam}")
        if lam > 1:
            raise ConfigError(f"arrivals.rate: Bernoulli rate must be <= 1, got {lam}")
        arrivals = ArrivalProcess.bernoulli(lam)
    elif kind == "batch":
        vals, probs = _listify(merged["arrivals.values"]), _listify(merged["arrivals.probs"])
        try:
            arrivals = ArrivalProcess(tuple(int(v) for v in vals), tuple(float(p) for p in probs))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"arrivals: {exc}") from None
    else:
        raise ConfigError(f"arrivals.kind: unknown arrival kind {kind!r}")

    m_grid = [int(x) for x in _listify(merged["grid.m"])]
    if any(x < 1 for x in m_grid):
        raise ConfigError("grid.m: channel counts must be >= 1")
    load_grid = [float(x) for x in _listify(merged["grid.load"])]
    if any(x <= 0 for x in load_grid):
        raise ConfigError("grid.load: loads must be positive")
    if recipe == "load-sweep" and not load_grid:
        raise ConfigError("grid.load: load-sweep needs at least one load")

    block = _num(merged, "scheme.block", int, 1)
    fidelity = merged["scheme.fidelity"]
    if fidelity not in ("ideal", "concrete"):
        raise ConfigError(f"scheme.fidelity: unknown fidelity {fidelity!r}")
    tracked = merged["scheme.tracked"]
    if tracked not in ("all", "first-session"):
        raise ConfigError(f"scheme.tracked: expected 'all' or 'first-session', got {tracked!r}")
    hist_len = _num(merged, "scheme.hist_len", int, 2)

    merged["schemes"] = schemes
    cfg = ExperimentConfig(recipe, seed, reps, horizon, warmup, output, schemes, n_grid, m_fixed,
                           rule, gamma, size_kind, overlap, share_p, arrivals, m_grid, load_grid,
                           block, fidelity, tracked, hist_len, raw=merged)
    return cfg, warnings
