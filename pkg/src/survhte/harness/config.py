"""INI-style run configuration with line-numbered errors and presets.

Layout::

    [run]
    seed = 2024
    threads = 1
    K = 50

    [scenario.hs1_ph]
    n = 500
    hs = i
    ...

    [method.RSF]
    ntree = 1000

A method section may set ``method = TAG`` to run the same learner twice under
different labels; otherwise the label must be a method tag.
"""
from __future__ import annotations

import ast
import configparser
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field

from ..learners import LearnerSpec, Method
from ..simgen import ScenarioConfig

RUN_DEFAULTS = {"seed": 20240101, "threads": 1, "K": 50, "grid_size": 500,
                "summary": "mean", "level": 0.95}
SCENARIO_FIELDS = {"n": int, "hs": str, "psi": float, "ph": "bool", "censoring": str,
                   "censor_rate": float, "mask": str, "reps": int, "seed": int}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = RUN_DEFAULTS["seed"]
    threads: int = RUN_DEFAULTS["threads"]
    K: int = RUN_DEFAULTS["K"]
    grid_size: int = RUN_DEFAULTS["grid_size"]
    summary: str = RUN_DEFAULTS["summary"]
    level: float = RUN_DEFAULTS["level"]
    scenarios: dict = field(default_factory=dict)     # name -> ScenarioConfig
    methods: dict = field(default_factory=dict)       # label -> LearnerSpec

    def effective(self) -> dict:
        """Fully resolved configuration, including defaults (manifest payload)."""
        return {
            "run": {"seed": self.seed, "K": self.K, "grid_size": self.grid_size,
                    "summary": self.summary, "level": self.level},
            "scenarios": {k: asdict(v) for k, v in self.scenarios.items()},
            "methods": {k: {"method": v.method.value, "params": _jsonable(v.params)}
                        for k, v in self.methods.items()},
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.effective(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(params: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(params.items())}


def _line_of(text: str, section: str, key: str | None) -> int:
    """1-based line of ``key`` inside ``[section]`` (or of the header)."""
    in_section = False
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            in_section = s[1:-1].strip() == section
            if in_section and key is None:
                return no
            continue
        if in_section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s,
                                                       re.IGNORECASE):
            return no
    return 0


def _parse_bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_value(raw: str):
    """Literal hyperparameter value: number, bool, tuple/list or bare string."""
    s = raw.strip()
    if s.lower() in ("true", "false"):
        return s.lower() == "true"
    if s.lower() == "none":
        return None
    try:
        val = ast.literal_eval(s)
    except (ValueError, SyntaxError):
        if "," in s:
            return tuple(parse_value(part) for part in s.split(",") if part.strip())
        return s
    return tuple(val) if isinstance(val, list) else val


def parse_config(text: str, source: str = "<config>", seed: int | None = None) -> RunConfig:
    """Parse config text; ``seed`` overrides ``[run] seed`` (and thereby the
    default seed of every scenario without its own)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    def fail(section, key, msg):
        line = _line_of(text, section, key)
        where = f"{source}:{line}" if line else source
        field_part = f" field '{key}'" if key else ""
        raise ConfigError(f"{where}: [{section}]{field_part}: {msg}")

    cfg = RunConfig()
    known = {"run"} | {s for s in parser.sections() if s.startswith(("scenario.", "method."))}
    for section in parser.sections():
        if section not in known:
            fail(section, None, "unknown section (expected run, scenario.NAME or method.NAME)")
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in RUN_DEFAULTS:
                fail("run", key, "unknown field")
            kind = type(RUN_DEFAULTS[key])
            try:
                setattr(cfg, key, kind(raw.strip()))
            except ValueError as exc:
                fail("run", key, str(exc))
        if cfg.summary not in ("mean", "median"):
            fail("run", "summary", "must be 'mean' or 'median'")
        if cfg.K < 1 or cfg.threads < 1 or cfg.grid_size < 2:
            fail("run", None, "K and threads must be >= 1 and grid_size >= 2")
    if seed is not None:
        if not 0 <= int(seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg.seed = int(seed)
    for section in parser.sections():
        if section.startswith("scenario."):
            name = section.split(".", 1)[1]
            values = {"seed": cfg.seed}
            for key, raw in parser.items(section):
                if key not in SCENARIO_FIELDS:
                    fail(section, key, "unknown field")
                kind = SCENARIO_FIELDS[key]
                try:
                    values[key] = _parse_bool(raw) if kind == "bool" else kind(raw.strip())
                except ValueError as exc:
                    fail(section, key, str(exc))
            for required in ("n", "hs", "psi", "ph"):
                if required not in values:
                    fail(section, required, "missing required field")
            try:
                cfg.scenarios[name] = ScenarioConfig(**values)
            except (ValueError, TypeError) as exc:
                fail(section, None, str(exc))
        elif section.startswith("method."):
            label = section.split(".", 1)[1]
            params = {k: parse_value(v) for k, v in parser.items(section)}
            tag = params.pop("method", label)
            seed = params.pop("seed", 0)
            try:
                cfg.methods[label] = LearnerSpec(Method(str(tag).upper()), params, int(seed))
            except ValueError as exc:
                fail(section, "method" if "method" in parser[section] else None, str(exc))
    if not cfg.scenarios:
        raise ConfigError(f"{source}: no [scenario.NAME] section")
    if not cfg.methods:
        raise ConfigError(f"{source}: no [method.NAME] section")
    return cfg


def load_config(path, seed: int | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path), seed=seed)


# ---------------------------------------------------------------- presets

_ALL_METHODS = [m.value for m in Method]
_PRESET_SPECS = {
    "desk": dict(n=500, reps=20,
                 methods=[m for m in _ALL_METHODS
                          if m not in ("AFT_BART_NP", "AFT_BART_NP_PS")]),
    "paper-lite": dict(n=1000, reps=50, methods=_ALL_METHODS),
}
PRESETS = tuple(_PRESET_SPECS)


def preset_text(name: str, seed: int = RUN_DEFAULTS["seed"]) -> str:
    """Config text for a shipped preset: HS(i), PH, 20% target censoring, psi = 1."""
    if name not in _PRESET_SPECS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    spec = _PRESET_SPECS[name]
    lines = ["[run]", f"seed = {seed}", "K = 50", "",
             "[scenario.hs_i_ph_cr20_psi1]", f"n = {spec['n']}", "hs = i", "psi = 1",
             "ph = true", "censoring = independent", "censor_rate = 0.007", "mask = none",
             f"reps = {spec['reps']}", ""]
    for m in spec["methods"]:
        lines += [f"[method.{m}]", ""]
    return "\n".join(lines)


def preset_config(name: str, seed: int | None = None) -> RunConfig:
    seed = RUN_DEFAULTS["seed"] if seed is None else seed
    return parse_config(preset_text(name, seed), source=f"<preset {name}>")


# ---------------------------------------------------------------- case study

CASE_FIELDS = {"data": str, "covariates": str, "treatment": str, "time": str, "event": str,
               "method": str, "seed": int, "summary": str, "level": float,
               "subsample_reps": int, "subsample_fraction": float, "interval": str,
               "min_improve": float, "improve_mode": str, "n_subgroups": int}


def load_case_study(path, seed: int | None = None):
    """Read a ``[case_study]`` config plus an optional ``[method.TAG]`` section.

    Returns ``(csv_path, ColumnMapping, LearnerSpec, CaseStudyOptions)``; a
    relative ``data`` path is resolved against the config file's directory.
    """
    from pathlib import Path

    from .casestudy import CaseStudyOptions, ColumnMapping

    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    source = str(path)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    def fail(section, key, msg):
        line = _line_of(text, section, key)
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: [{section}]" + (f" field '{key}'" if key else "")
                          + f": {msg}")

    if not parser.has_section("case_study"):
        raise ConfigError(f"{source}: missing [case_study] section")
    values = {}
    for key, raw in parser.items("case_study"):
        if key not in CASE_FIELDS:
            fail("case_study", key, "unknown field")
        try:
            values[key] = CASE_FIELDS[key](raw.strip())
        except ValueError as exc:
            fail("case_study", key, str(exc))
    for required in ("data", "covariates", "treatment", "time", "event", "method"):
        if required not in values:
            fail("case_study", None, f"missing required field '{required}'")
    try:
        method = Method(values.pop("method").upper())
    except ValueError as exc:
        fail("case_study", "method", str(exc))
    params = {}
    for section in parser.sections():
        if section == "case_study":
            continue
        if section != f"method.{method.value}":
            fail(section, None, f"unexpected section (expected method.{method.value})")
        params = {k: parse_value(v) for k, v in parser.items(section)}
    data = Path(values.pop("data"))
    if not data.is_absolute():
        data = Path(path).parent / data
    mapping = ColumnMapping(tuple(c.strip() for c in values.pop("covariates").split(",")
                                  if c.strip()),
                            values.pop("treatment"), values.pop("time"), values.pop("event"))
    if seed is not None:
        values["seed"] = int(seed)
    opts = CaseStudyOptions(**values)
    spec = LearnerSpec(method, params, opts.seed)
    return data, mapping, spec, opts
