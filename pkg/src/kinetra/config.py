"""Run configuration: a strict ``[section]`` / ``key = value`` format.

Sections are ``[model]``, ``[boundary]``, ``[collision]``, ``[command]`` and
``[output]``; ``#`` starts a comment.  Unknown sections or keys, duplicated
keys and non-finite numbers are errors that name the offending key and line.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field

from .errors import ConfigError, ModelError
from .functions import Function, parse_function
from .models import CollisionTerm, DegenerateKernel, Model, build_rotenberg, build_slab, build_sphere

__all__ = ["RunConfig", "parse_config", "load_config", "COMMANDS"]

COMMANDS = ("resolve", "spectrum", "evolve", "dyson", "remainder", "decay", "oscint")

_MODEL_KEYS = {
    "rotenberg": {"kind", "a", "b", "sigma", "sigma_extra", "n_s", "n_v"},
    "sphere": {"kind", "R", "sigma", "sigma_extra", "n_s", "n_v", "n_tau"},
    "slab": {"kind", "a", "case", "sigma", "sigma_extra", "n_s", "n_v"},
}
_BOUNDARY_KEYS = {
    "rotenberg": {"beta", "g", "k", "alpha", "k_norm"},
    "sphere": {"gamma", "g", "k", "alpha", "k_norm"},
    "slab": {"coefficient_1", "coefficient_2", "g1", "k1", "alpha1", "k_norm1", "g2", "k2", "alpha2", "k_norm2"},
}
_COMMAND_KEYS = {
    "resolve": {"lambda", "lambdas", "rhs_x", "rhs_v", "mode", "scheme", "oracle", "norms", "refinements"},
    "spectrum": {"region", "grid", "radius", "nodes", "scheme", "expansion_t", "nu", "phi0_x", "phi0_v",
                 "t", "refinements", "delta"},
    "evolve": {"t_values", "scheme", "phi0_x", "phi0_v"},
    "dyson": {"t", "n", "scheme", "t_small"},
    "remainder": {"t", "refinements", "count", "scheme"},
    "decay": {"alpha", "beta_min", "beta_max", "n_beta"},
    "oscint": {"f", "phase", "a", "b", "xi_min", "xi_max", "n_xi", "eps"},
}
_OUTPUT_KEYS = {"directory", "prefix"}
_SECTIONS = ("model", "boundary", "collision", "command", "output")
_TERM_KEY = re.compile(r"term\d+$")

# auxiliary velocity resolution used to convert a kernel norm into a scale
_NORM_GRID = 512


@dataclass
class RunConfig:
    """Validated configuration; raw strings are kept for the manifest echo."""

    model: dict
    boundary: dict
    collision: list
    command: dict
    output: dict
    text: str = ""
    lines: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.model["kind"]

    @property
    def name(self) -> str:
        return self.command["name"]

    def echo(self) -> dict:
        return {
            "model": dict(self.model),
            "boundary": {k: _text(v) for k, v in self.boundary.items()},
            "collision": [[f.text() for f in term] for term in self.collision],
            "command": {k: _text(v) for k, v in self.command.items()},
            "output": dict(self.output),
        }

    def build_model(self, n: int | None = None) -> Model:
        """Build the model, optionally at grid size ``n x n``."""
        m = self.model
        n_s = int(n) if n is not None else m["n_s"]
        n_v = int(n) if n is not None else m["n_v"]
        terms = [CollisionTerm(*t) for t in self.collision]
        sigma_extra = m.get("sigma_extra")
        kind = m["kind"]
        if kind == "rotenberg":
            return build_rotenberg(m["a"], m["b"], m["sigma"], n_s, n_v, beta=self.boundary.get("beta"),
                                   kernel=self._kernel(""), collision=terms, sigma_extra=sigma_extra)
        if kind == "sphere":
            return build_sphere(m["R"], m["sigma"], n_s, n_v, gamma=self.boundary.get("gamma"),
                                kernel=self._kernel(""), collision=terms, n_tau=m.get("n_tau"),
                                sigma_extra=sigma_extra)
        coefs = (self.boundary.get("coefficient_1", 0.0), self.boundary.get("coefficient_2", 0.0))
        return build_slab(m["a"], m["sigma"], n_s, n_v, m["case"], coefs,
                          kernels=(self._kernel("1"), self._kernel("2")), collision=terms,
                          sigma_extra=sigma_extra)

    def _kernel(self, suffix: str) -> DegenerateKernel | None:
        b = self.boundary
        g, k = b.get("g" + suffix), b.get("k" + suffix)
        if g is None and k is None:
            return None
        return DegenerateKernel(((g, k),), self._scale(suffix))

    def _scale(self, suffix: str) -> float:
        b = self.boundary
        if "alpha" + suffix in b:
            return b["alpha" + suffix]
        return kernel_scale_for_norm(self, suffix, b["k_norm" + suffix])


def kernel_scale_for_norm(cfg: RunConfig, suffix: str, target: float) -> float:
    """Scale making the weighted norm of the compact boundary part equal ``target``.

    The norm of the unit-scale kernel is evaluated on an auxiliary model with
    ``_NORM_GRID`` directions, which resolves the continuous norm of the
    rank-one kernels used here to near machine precision.
    """
    if target == 0.0:
        return 0.0
    b, m = cfg.boundary, cfg.model
    unit = DegenerateKernel(((b["g" + suffix], b["k" + suffix]),), 1.0)
    if m["kind"] == "rotenberg":
        aux = build_rotenberg(m["a"], m["b"], m["sigma"], 8, _NORM_GRID, kernel=unit)
    elif m["kind"] == "sphere":
        aux = build_sphere(m["R"], m["sigma"], 8, _NORM_GRID, kernel=unit)
    else:
        kernels = (unit, None) if suffix == "1" else (None, unit)
        aux = build_slab(m["a"], m["sigma"], 8, 2 * _NORM_GRID, m["case"], kernels=kernels)
    nrm = aux.H.compact_matrix.norm()
    if nrm == 0.0:
        raise ConfigError(f"k_norm{suffix}: kernel factors vanish, cannot reach norm {target:g}")
    return float(target / nrm)


def _text(v):
    if isinstance(v, Function):
        return v.text()
    if isinstance(v, complex):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return [_text(x) for x in v]
    return v


# --------------------------------------------------------------------------
# scalar parsers


def _float(key, raw, line):
    try:
        x = float(raw)
    except ValueError:
        raise ConfigError(f"line {line}: '{key}' expects a number, got '{raw}'") from None
    if not math.isfinite(x):
        raise ConfigError(f"line {line}: '{key}' must be finite")
    return x


def _int(key, raw, line):
    try:
        x = int(raw)
    except ValueError:
        raise ConfigError(f"line {line}: '{key}' expects an integer, got '{raw}'") from None
    return x


def _complex(key, raw, line):
    try:
        z = complex(raw.replace(" ", "").replace("i", "j"))
    except ValueError:
        raise ConfigError(f"line {line}: '{key}' expects a complex number, got '{raw}'") from None
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ConfigError(f"line {line}: '{key}' must be finite")
    return z


def _bool(key, raw, line):
    v = raw.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"line {line}: '{key}' expects true or false, got '{raw}'")


def _func(key, raw, line):
    try:
        return parse_function(raw)
    except ValueError as exc:
        raise ConfigError(f"line {line}: '{key}': {exc}") from None


def _list(conv, key, raw, line):
    items = [x for x in (s.strip() for s in raw.split(",")) if x]
    if not items:
        raise ConfigError(f"line {line}: '{key}' expects a comma separated list")
    return [conv(key, x, line) for x in items]


# --------------------------------------------------------------------------
# parsing


def _first_line(text, section, key):
    cur = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
        elif cur == section and "=" in s and s.split("=", 1)[0].strip() == key:
            return i
    return None


def _key_lines(text):
    out = {}
    cur = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.split("#", 1)[0].strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
        elif cur and "=" in s:
            out.setdefault((cur, s.split("=", 1)[0].strip()), i)
    return out


def _read_sections(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(
        strict=True, interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",),
        delimiters=("=",), empty_lines_in_values=False, default_section="\x00defaults")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as exc:
        first = _first_line(text, exc.section, exc.option)
        raise ConfigError(f"duplicate key '{exc.option}' in [{exc.section}] at lines {first} and {exc.lineno}") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"line {exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"line {exc.lineno}: expected a [section] header before '{exc.line.strip()}'") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()}") from None
    return cp


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run configuration."""
    cp = _read_sections(text)
    lines = _key_lines(text)
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}] (expected one of {', '.join(_SECTIONS)})")
    for sec in ("model", "command"):
        if not cp.has_section(sec):
            raise ConfigError(f"missing section [{sec}]")

    def items(sec):
        return dict(cp.items(sec)) if cp.has_section(sec) else {}

    def ln(sec, key):
        return lines.get((sec, key), "?")

    # model
    raw = items("model")
    kind = raw.get("kind")
    if kind not in _MODEL_KEYS:
        raise ConfigError(f"line {ln('model', 'kind')}: [model] kind must be rotenberg, sphere or slab, got {kind!r}")
    _reject_unknown("model", raw, _MODEL_KEYS[kind], ln)
    model = {"kind": kind}
    for key, val in raw.items():
        line = ln("model", key)
        if key in ("kind",):
            continue
        if key in ("n_s", "n_v", "n_tau"):
            model[key] = _int(key, val, line)
        elif key == "case":
            if val not in ("a", "b", "c"):
                raise ConfigError(f"line {line}: 'case' must be a, b or c")
            model[key] = val
        elif key == "sigma_extra":
            model[key] = _func(key, val, line)
        else:
            model[key] = _float(key, val, line)
    required = {"rotenberg": ("a", "b", "sigma", "n_s", "n_v"), "sphere": ("R", "sigma", "n_s", "n_v"),
                "slab": ("a", "case", "sigma", "n_s", "n_v")}[kind]
    for key in required:
        if key not in model:
            raise ConfigError(f"[model] is missing '{key}'")
    for key in ("n_s", "n_v"):
        if model[key] < 8:
            raise ConfigError(f"line {ln('model', key)}: '{key}' must be at least 8")
    if kind == "slab" and model["n_v"] % 2:
        raise ConfigError(f"line {ln('model', 'n_v')}: slab 'n_v' must be even")

    # boundary
    raw = items("boundary")
    _reject_unknown("boundary", raw, _BOUNDARY_KEYS[kind], ln)
    boundary = {}
    for key, val in raw.items():
        line = ln("boundary", key)
        if key.startswith(("alpha", "k_norm", "coefficient")):
            boundary[key] = _float(key, val, line)
            if boundary[key] < 0:
                raise ConfigError(f"line {line}: '{key}' must be nonnegative")
        else:
            boundary[key] = _func(key, val, line)
    for key in ("beta", "gamma"):
        if key in boundary:
            _check_below_one(key, boundary[key], ln("boundary", key), model)
    for key in ("coefficient_1", "coefficient_2"):
        if key in boundary and boundary[key] >= 1.0:
            raise ConfigError(f"line {ln('boundary', key)}: '{key}' = {boundary[key]:g} violates beta_0 < 1")
    suffixes = ("1", "2") if kind == "slab" else ("",)
    for s in suffixes:
        has = [("g" + s) in boundary, ("k" + s) in boundary]
        if any(has) and not all(has):
            raise ConfigError(f"[boundary] kernel needs both 'g{s}' and 'k{s}'")
        if all(has) and (("alpha" + s) in boundary) == (("k_norm" + s) in boundary):
            raise ConfigError(f"[boundary] kernel needs exactly one of 'alpha{s}' and 'k_norm{s}'")
        if not any(has) and (("alpha" + s) in boundary or ("k_norm" + s) in boundary):
            raise ConfigError(f"[boundary] 'alpha{s}'/'k_norm{s}' given without kernel factors")

    # collision
    raw = items("collision")
    collision = []
    for key in sorted(raw, key=lambda k: (len(k), k)):
        line = ln("collision", key)
        if not _TERM_KEY.match(key):
            raise ConfigError(f"line {line}: unknown key '{key}' in [collision] (expected term1, term2, ...)")
        parts = [p.strip() for p in raw[key].split(";")]
        if len(parts) != 3:
            raise ConfigError(f"line {line}: '{key}' expects 'alpha ; beta ; theta'")
        collision.append(tuple(_func(key, p, line) for p in parts))

    # command
    raw = items("command")
    name = raw.get("name")
    if name not in COMMANDS:
        raise ConfigError(f"line {ln('command', 'name')}: [command] name must be one of {', '.join(COMMANDS)}")
    params = {k: v for k, v in raw.items() if k != "name"}
    _reject_unknown("command", params, _COMMAND_KEYS[name], ln)
    command = {"name": name}
    command.update(_command_params(name, params, lambda k: ln("command", k)))

    # output
    raw = items("output")
    _reject_unknown("output", raw, _OUTPUT_KEYS, ln)
    output = {"directory": raw.get("directory", "kinetra-out"), "prefix": raw.get("prefix", "")}

    cfg = RunConfig(model, boundary, collision, command, output, text, lines)
    try:
        cfg.build_model(8)
    except ModelError as exc:
        raise ConfigError(f"invalid model: {exc}") from None
    return cfg


def _reject_unknown(sec, raw, allowed, ln):
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"line {ln(sec, key)}: unknown key '{key}' in [{sec}]")


def _check_below_one(key, f: Function, line, model):
    lo, hi = {"rotenberg": (model.get("a", 0.0), model.get("b", 1.0))}.get(model["kind"], (-1.0, 0.0))
    sup = max(f.sup(lo, hi), -f.inf(lo, hi)) if not f.is_zero else 0.0
    if f.inf(lo, hi) < 0:
        raise ConfigError(f"line {line}: '{key}' must be nonnegative")
    if sup >= 1.0:
        raise ConfigError(f"line {line}: '{key} = {f.text()}' has sup {sup:g}, violating beta_0 < 1")


def _command_params(name, raw, ln):
    out = {}
    conv = {
        "lambda": _complex, "radius": _float, "nu": _float, "t": _float, "delta": _float, "alpha": _float,
        "beta_min": _float, "beta_max": _float, "a": _float, "b": _float, "xi_min": _float, "xi_max": _float,
        "eps": _float, "nodes": _int, "n": _int, "count": _int, "n_beta": _int, "n_xi": _int,
        "oracle": _bool, "norms": _bool,
        "rhs_x": _func, "rhs_v": _func, "phi0_x": _func, "phi0_v": _func, "f": _func, "phase": _func,
    }
    lists = {"lambdas": _complex, "region": _float, "grid": _int, "expansion_t": _float, "t_values": _float,
             "t_small": _float, "refinements": _int}
    for key, val in raw.items():
        line = ln(key)
        if key in ("mode", "scheme"):
            allowed = ("direct", "neumann") if key == "mode" else ("product", "spectral", "upwind")
            if val not in allowed:
                raise ConfigError(f"line {line}: '{key}' must be one of {', '.join(allowed)}")
            out[key] = val
        elif key in lists:
            out[key] = _list(lists[key], key, val, line)
        else:
            out[key] = conv[key](key, val, line)
    if "region" in out and len(out["region"]) != 4:
        raise ConfigError(f"line {ln('region')}: 'region' expects re_lo, re_hi, im_lo, im_hi")
    if "grid" in out and len(out["grid"]) != 2:
        raise ConfigError(f"line {ln('grid')}: 'grid' expects two counts")
    if "refinements" in out and any(n < 8 for n in out["refinements"]):
        raise ConfigError(f"line {ln('refinements')}: grid sizes must be at least 8")
    for key, least in (("n_xi", 5), ("n_beta", 3), ("nodes", 4), ("count", 1)):
        if key in out and out[key] < least:
            raise ConfigError(f"line {ln(key)}: '{key}' must be at least {least}")
    required = {"resolve": (), "spectrum": ("region",), "evolve": ("t_values",), "dyson": ("t", "n"),
                "remainder": ("t", "refinements"), "decay": ("alpha",), "oscint": ("f", "phase", "a", "b")}[name]
    for key in required:
        if key not in out:
            raise ConfigError(f"[command] '{name}' needs '{key}'")
    if name == "resolve" and "lambda" in out and "lambdas" in out:
        raise ConfigError("[command] give either 'lambda' or 'lambdas'")
    return out


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        err = ConfigError(f"cannot read config '{path}': {exc.strerror}")
        err.io = True
        raise err from None
    return parse_config(text)

