"""Experiment configuration: strict parsing and validation.

TOML first, JSON as fallback. Every key is checked against the schema of
its nesting level; anything unknown is an error, so a typo cannot
silently fall back to a default.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import models
from .errors import ConfigError
from .operators import FINITE_DIFFERENCE, FOURIER

KINDS = ("spectrum", "dos", "wegner", "ct", "bs", "gre", "hs-check",
         "equivalence", "self-averaging")

_BACKENDS = (FOURIER, FINITE_DIFFERENCE)
_DISORDER_KEYS = ("law", "coupling_min", "coupling_max",
                  "displacement_radius", "profile", "amplitude")

_REQUIRED = object()


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    model: str
    seed: int
    n_realizations: int
    jobs: int
    out: str
    backend: str
    points_per_cell: int
    params: dict = field(default_factory=dict)
    disorder: dict = field(default_factory=dict)

    def to_dict(self):
        return {"kind": self.kind, "model": self.model, "seed": self.seed,
                "n_realizations": self.n_realizations, "jobs": self.jobs,
                "out": self.out, "backend": self.backend,
                "points_per_cell": self.points_per_cell,
                "params": dict(self.params), "disorder": dict(self.disorder)}

    def digest(self):
        """Hash of the effective config; jobs and out are excluded so the
        same experiment keeps its digest across machines and widths."""
        payload = self.to_dict()
        del payload["jobs"]
        del payload["out"]
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **kw):
        data = self.to_dict()
        data.update(kw)
        return ExperimentConfig(**data)


def _take(table, key, kinds, default=_REQUIRED, where="config"):
    if key not in table:
        if default is _REQUIRED:
            raise ConfigError("%s: missing required field %r" % (where, key))
        return default
    value = table.pop(key)
    if kinds is bool:
        # bool is an int subclass; exact match keeps 1/0 out of flags
        if not isinstance(value, bool):
            raise ConfigError("%s: field %r must be a boolean" % (where, key))
        return value
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise ConfigError("%s: field %r has the wrong type" % (where, key))
    return value


def _number_pair(table, key, where, default=_REQUIRED):
    value = _take(table, key, (list, tuple), default, where)
    if value is default and default is not _REQUIRED:
        return value
    if len(value) != 2 or not all(isinstance(v, (int, float))
                                  and not isinstance(v, bool) for v in value):
        raise ConfigError("%s: field %r must be two numbers" % (where, key))
    return (float(value[0]), float(value[1]))


def _number_list(table, key, where, integral=False):
    value = _take(table, key, (list, tuple), where=where)
    if not value or not all(isinstance(v, (int, float))
                            and not isinstance(v, bool) for v in value):
        raise ConfigError("%s: field %r must be a nonempty list of numbers"
                          % (where, key))
    if integral:
        if any(int(v) != v for v in value):
            raise ConfigError("%s: field %r must hold integers" % (where, key))
        return tuple(int(v) for v in value)
    return tuple(float(v) for v in value)


def _no_leftovers(table, where):
    if table:
        raise ConfigError("%s: unknown key(s): %s"
                          % (where, ", ".join(sorted(table))))


def _parse_params(kind, raw):
    table = dict(raw)
    where = "params"
    out = {}
    if kind == "spectrum":
        out["box_side"] = _take(table, "box_side", int, where=where)
        out["disordered"] = _take(table, "disordered", bool, False, where)
    elif kind == "dos":
        construction = _take(table, "construction", str, where=where)
        if construction not in ("spatial", "periodic"):
            raise ConfigError("params: construction must be spatial or periodic")
        out["construction"] = construction
        out["window"] = _number_pair(table, "window", where)
        out["box_side"] = _take(table, "box_side", int, where=where)
        if construction == "spatial":
            out["ambient_side"] = _take(table, "ambient_side", int, where=where)
        out["bins"] = _take(table, "bins", int, 1, where)
    elif kind == "wegner":
        out["interval"] = _number_pair(table, "interval", where)
        out["widths"] = _number_list(table, "widths", where)
        out["box_sides"] = _number_list(table, "box_sides", where, integral=True)
        out["center"] = _take(table, "center", (int, float), None, where)
        out["padded"] = _take(table, "padded", bool, False, where)
        out["padding"] = _take(table, "padding", int, 4, where)
    elif kind == "ct":
        out["energy"] = float(_take(table, "energy", (int, float), where=where))
        out["ys"] = _number_list(table, "ys", where)
        out["box_side"] = _take(table, "box_side", int, where=where)
        out["slab_width"] = float(_take(table, "slab_width", (int, float), 4.0,
                                        where))
        out["separations"] = _number_list(table, "separations", where)
        out["disordered"] = _take(table, "disordered", bool, True, where)
    elif kind == "bs":
        out["p"] = float(_take(table, "p", (int, float), where=where))
        out["box_side"] = _take(table, "box_side", int, where=where)
    elif kind == "gre":
        out["box_side"] = _take(table, "box_side", int, where=where)
        out["ambient_side"] = _take(table, "ambient_side", int, where=where)
        out["margin"] = float(_take(table, "margin", (int, float), where=where))
        out["ramp"] = float(_take(table, "ramp", (int, float), 1.0, where))
        z = _number_pair(table, "z", where)
        out["z"] = z
    elif kind == "hs-check":
        out["box_side"] = _take(table, "box_side", int, where=where)
        out["bump"] = _number_pair(table, "bump", where)
        out["family"] = _take(table, "family", str, "bump", where)
        out["order"] = _take(table, "order", int, 4, where)
    elif kind == "equivalence":
        out["window"] = _number_pair(table, "window", where)
        out["box_sides"] = _number_list(table, "box_sides", where, integral=True)
    elif kind == "self-averaging":
        out["bump"] = _number_pair(table, "bump", where)
        out["family"] = _take(table, "family", str, "plateau", where)
        out["box_sides"] = _number_list(table, "box_sides", where, integral=True)
    else:
        raise ConfigError("unknown experiment kind %r" % (kind,))
    _no_leftovers(table, where)
    return out


def parse_config(raw):
    """Validated ExperimentConfig from a parsed mapping."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    table = dict(raw)
    kind = _take(table, "kind", str, where="config")
    if kind not in KINDS:
        raise ConfigError("kind must be one of: %s" % ", ".join(KINDS))
    model = _take(table, "model", str, "dirac1d", "config")
    seed = _take(table, "seed", int, 0, "config")
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    n_realizations = _take(table, "n_realizations", int, 1, "config")
    if n_realizations < 1:
        raise ConfigError("n_realizations must be at least 1")
    jobs = _take(table, "jobs", int, 0, "config")
    if jobs < 0:
        raise ConfigError("jobs must be nonnegative (0 defers to the environment)")
    out = _take(table, "out", str, "out", "config")
    backend = _take(table, "backend", str, FOURIER, "config")
    if backend not in _BACKENDS:
        raise ConfigError("backend must be one of: %s" % ", ".join(_BACKENDS))
    ppc = _take(table, "points_per_cell", int, 4, "config")
    if ppc < 2 or ppc % 2:
        raise ConfigError("points_per_cell must be an even integer >= 2")
    disorder = _take(table, "disorder", dict, {}, "config")
    disorder = dict(disorder)
    for key in list(disorder):
        if key not in _DISORDER_KEYS:
            raise ConfigError("disorder: unknown key %r" % (key,))
    params = _take(table, "params", dict, {}, "config")
    _no_leftovers(table, "config")

    spec = models.get_model(model)
    # Instantiating the disorder model enforces its own invariants
    # (displacement radius, coupling law) at validation time.
    spec.disorder(**disorder)
    parsed = _parse_params(kind, params)
    if kind == "wegner":
        a, b = parsed["interval"]
        glo, ghi = spec.gap
        if not (glo < a < b < ghi):
            raise ConfigError("wegner interval must lie strictly inside the "
                              "certified gap (%g, %g)" % (glo, ghi))
    return ExperimentConfig(kind=kind, model=model, seed=seed,
                            n_realizations=n_realizations, jobs=jobs, out=out,
                            backend=backend, points_per_cell=ppc,
                            params=parsed, disorder=disorder)


def load_config(path):
    """Parse a TOML (or JSON) config file into an ExperimentConfig."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as toml_err:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as json_err:
            raise ConfigError(
                "config parses as neither TOML (%s) nor JSON (%s)"
                % (toml_err, json_err)) from json_err
    return parse_config(raw)
