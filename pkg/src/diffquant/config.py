"""Experiment configuration: flat ``key = value`` files with sections.

Example::

    [experiment]
    spec = sin-sigma
    dt = 0.0009765625
    n_paths = 500
    seed = 7

    [coding]
    scheme = sup
    rates = 2, 4, 8

    [custom]
    drift = -x1
    sigma = 1 + 0.5*sin(x1)

Every key may be overridden on the command line with ``--key value`` or
``--section.key value``.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import asdict, dataclass, field

from .diffusion_codec import gamma_defaults
from .expr import Expression, drift_from_strings
from .sde_engine import DiffusionSpec, ou_spec, sin_sigma_spec, wiener_spec

PRESETS = ("wiener", "ou", "sin-sigma", "custom")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending line when known."""


def _floats(text: str) -> tuple:
    out = []
    for tok in re.split(r"[,\s]+", text.strip()):
        if not tok:
            continue
        m = re.fullmatch(r"ln\((.+)\)", tok)
        out.append(math.log(float(m.group(1))) if m else float(tok))
    return tuple(out)


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


# section -> key -> parser
_SCHEMA = {
    "experiment": {
        "spec": str, "d": int, "x0": float, "dt": float, "T": float, "n_paths": int, "n_train": int,
        "seed": int, "workers": int, "output": str,
    },
    "coding": {
        "scheme": str, "p": float, "q": float, "rates": _floats, "gamma1": _optional_float,
        "gamma2": _optional_float, "gamma3": _optional_float, "n_blocks": _optional_int,
        "r_phi": _optional_float, "r_drift": _optional_float, "slack": float,
        "samples_per_coord": int,
    },
    "custom": {"drift": str, "sigma": str, "L": float, "beta": float},
}


@dataclass
class ExperimentConfig:
    spec: str = "wiener"
    d: int = 1
    x0: float = 0.0
    dt: float = 2.0**-10
    T: float = 1.0
    n_paths: int = 500
    n_train: int = 200
    seed: int = 0
    workers: int = 1
    output: str = "out"
    scheme: str = "sup"
    p: float = 2.0
    q: float = 2.0
    rates: tuple = (2.0, 4.0, 8.0)
    gamma1: float | None = None
    gamma2: float | None = None
    gamma3: float | None = None
    n_blocks: int | None = None
    r_phi: float | None = None
    r_drift: float | None = None
    slack: float = 4.0
    samples_per_coord: int = 20_000
    drift: str = "0"
    sigma: str = "1"
    L: float = 1.0
    beta: float = 1.0
    lines: dict = field(default_factory=dict, repr=False, compare=False)

    def validate(self) -> "ExperimentConfig":
        def bad(key, msg):
            where = f" (line {self.lines[key]})" if key in self.lines else ""
            raise ConfigError(f"{key}{where}: {msg}")

        if self.spec not in PRESETS:
            bad("spec", f"unknown preset {self.spec!r}; expected one of {PRESETS}")
        if self.d < 1:
            bad("d", "must be >= 1")
        if not 0 < self.dt < self.T:
            bad("dt", "must satisfy 0 < dt < T")
        if self.T < 1:
            bad("T", "must be >= 1 (coding runs on [0, 1])")
        if self.n_paths < 1:
            bad("n_paths", "must be >= 1")
        if self.n_train < 1:
            bad("n_train", "must be >= 1")
        if self.workers < 1:
            bad("workers", "must be >= 1")
        if self.scheme not in ("sup", "lp"):
            bad("scheme", "must be 'sup' or 'lp'")
        if not self.p >= 1:
            bad("p", "must be >= 1")
        if not self.q >= 1:
            bad("q", "must be >= 1")
        if not self.rates or any(r < 0 for r in self.rates):
            bad("rates", "must be a non-empty list of nonnegative rates")
        if any(b <= a for a, b in zip(self.rates, self.rates[1:])):
            bad("rates", "must be strictly increasing")
        if self.n_blocks is not None and self.n_blocks < 1:
            bad("n_blocks", "must be >= 1 or auto")
        if self.slack < 0:
            bad("slack", "must be >= 0")
        if self.samples_per_coord < 10:
            bad("samples_per_coord", "must be >= 10")
        for g in ("gamma1", "gamma2", "gamma3"):
            v = getattr(self, g)
            if v is not None and not 0 < v <= 1:
                bad(g, "must lie in (0, 1]")
        if self.spec == "custom":
            try:
                self.diffusion_spec()
            except ValueError as exc:
                bad("drift" if "drift" in str(exc) else "sigma", str(exc))
        return self

    @property
    def gammas(self):
        if self.gamma1 is None and self.gamma3 is None and self.gamma2 is None:
            return None
        g1, g2, g3 = gamma_defaults(self.beta_effective)
        return (self.gamma1 or g1, self.gamma2 or g2, self.gamma3 or g3)

    @property
    def beta_effective(self) -> float:
        return self.diffusion_spec().beta

    def diffusion_spec(self) -> DiffusionSpec:
        if self.spec == "wiener":
            return wiener_spec(self.d)
        if self.spec == "ou":
            return ou_spec(self.d)
        if self.spec == "sin-sigma":
            return sin_sigma_spec(self.d)
        sig = Expression(self.sigma, self.d)
        return DiffusionSpec(b=drift_from_strings(self.drift, self.d), sigma=sig, L=self.L,
                             beta=self.beta, d=self.d, name="custom")

    def as_dict(self) -> dict:
        out = asdict(self)
        out.pop("lines")
        return out


def _key_lines(text: str) -> dict:
    lines = {}
    for i, raw in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*([A-Za-z_][\w.]*)\s*[=:]", raw)
        if m:
            lines.setdefault(m.group(1), i)
    return lines


def _apply(cfg: ExperimentConfig, section: str, key: str, value: str, line=None):
    where = f"line {line}: " if line else ""
    if section not in _SCHEMA:
        raise ConfigError(f"{where}unknown section [{section}]")
    if key not in _SCHEMA[section]:
        raise ConfigError(f"{where}unknown key {key!r} in [{section}]")
    try:
        setattr(cfg, key, _SCHEMA[section][key](value))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}bad value for {key}: {value!r} ({exc})") from None


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse config text, apply ``--key value`` overrides and validate."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    lines = _key_lines(text)
    cfg = ExperimentConfig()
    for section in cp.sections():
        for key, value in cp.items(section):
            _apply(cfg, section, key, value, lines.get(key))
            cfg.lines[key] = lines.get(key)
    for k, v in (overrides or {}).items():
        section, key = _resolve_key(k)
        _apply(cfg, section, key, str(v))
        cfg.lines.pop(key, None)
    return cfg.validate()


def _resolve_key(k: str) -> tuple[str, str]:
    k = k.replace("-", "_")
    if "." in k:
        section, key = k.split(".", 1)
        return section, key
    hits = [s for s, keys in _SCHEMA.items() if k in keys]
    if not hits:
        raise ConfigError(f"unknown override --{k}")
    return hits[0], k


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, overrides)
