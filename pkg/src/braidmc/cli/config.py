import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional, Union

from ..engine import RunParams
from ..lattice import MODEL_KINDS, LatticeSpec, ModelSpec, build_interactions, build_lattice
from ..universal import ConfigError, fraction_to_str, parse_fraction

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

__all__ = ("SECTIONS", "RunConfig", "load_config", "parse_value", "field_of")

# section -> {key: RunConfig field}
SECTIONS = {
    "model": {
        "kind": "model_kind",
        "t": "t",
        "V": "V",
        "mu": "mu",
        "filling": "filling",
        "beta": "beta",
        "cutoff": "cutoff",
        "worm_fugacity": "worm_fugacity",
    },
    "lattice": {"kind": "lattice_kind", "L": "L", "Ly": "Ly"},
    "run": {
        "thermalization_sweeps": "thermalization_sweeps",
        "target_samples": "target_samples",
        "measure_interval": "measure_interval",
        "seed": "seed",
        "replicas": "replicas",
        "stall_sweeps": "stall_sweeps",
        "pilot_sweeps": "pilot_sweeps",
        "debug_checks": "debug_checks",
    },
    "output": {"directory": "directory", "threshold": "threshold"},
}

_INT_FIELDS = {
    "L",
    "Ly",
    "thermalization_sweeps",
    "target_samples",
    "measure_interval",
    "seed",
    "replicas",
    "stall_sweeps",
    "pilot_sweeps",
}
_FLOAT_FIELDS = {"t", "V", "beta", "cutoff", "worm_fugacity", "threshold"}


@dataclass(frozen=True)
class RunConfig:
    """One simulation as read from a TOML file with sections [model], [lattice], [run] and [output].

    ``mu = "auto"`` tunes the chemical potential with pilot runs before sampling.
    """

    model_kind: str
    L: int
    V: float = 0.0
    t: float = 1.0
    mu: Union[float, str] = "auto"
    filling: str = "1/2"
    beta: float = 18.0
    cutoff: float = 4.0
    worm_fugacity: float = 1.0
    lattice_kind: Optional[str] = None
    Ly: Optional[int] = None
    thermalization_sweeps: int = 1000
    target_samples: int = 10000
    measure_interval: int = 1
    seed: int = 0
    replicas: int = 1
    stall_sweeps: int = 10000
    pilot_sweeps: int = 2000
    debug_checks: bool = False
    directory: str = "braidmc_out"
    threshold: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None and f.name in ("lattice_kind", "Ly"):
                continue
            object.__setattr__(self, f.name, _coerce(f.name, value))
        if self.lattice_kind is None and self.model_kind in MODEL_KINDS:
            object.__setattr__(self, "lattice_kind", MODEL_KINDS[self.model_kind])

    @classmethod
    def from_dict(cls, data):
        """Build from nested ``{section: {key: value}}``; unknown sections or keys raise ConfigError."""
        kwargs = {}
        for section, values in data.items():
            if section not in SECTIONS:
                raise ConfigError(
                    "unknown section '{}'. Allowed sections are {}".format(section, tuple(SECTIONS))
                )
            if not isinstance(values, dict):
                raise ConfigError("section '{}' must be a table".format(section))
            for key, value in values.items():
                if key not in SECTIONS[section]:
                    raise ConfigError(
                        "unknown key '{}' in section [{}]. Allowed keys are {}".format(
                            key, section, tuple(SECTIONS[section])
                        )
                    )
                kwargs[SECTIONS[section][key]] = value
        for required in ("model_kind", "L"):
            if required not in kwargs:
                raise ConfigError("missing required key '{}'".format(_key_of(required)))
        return cls(**kwargs)

    @classmethod
    def from_toml(cls, path):
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError("unable to parse '{}': {}".format(path, e))
        return cls.from_dict(data)

    def to_dict(self):
        out = {}
        values = asdict(self)
        for section, keys in SECTIONS.items():
            out[section] = {
                key: values[name] for key, name in keys.items() if values[name] is not None
            }
        return out

    def to_flat_dict(self):
        """Model, lattice and run values keyed by field name (the output section is left out)."""
        values = asdict(self)
        return {
            name: values[name]
            for section in ("model", "lattice", "run")
            for name in SECTIONS[section].values()
        }

    def config_hash(self):
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def lattice_spec(self):
        return LatticeSpec(self.lattice_kind, self.L, self.Ly)

    def model_spec(self, mu=None):
        if mu is None:
            mu = 0.0 if self.mu == "auto" else self.mu
        return ModelSpec(
            kind=self.model_kind,
            t=self.t,
            V=self.V,
            mu=float(mu),
            filling=self.filling,
            beta=self.beta,
            cutoff=self.cutoff,
            worm_fugacity=self.worm_fugacity,
        )

    def run_params(self, mu=None):
        """RunParams for sampling; ``mu`` overrides the configured (or 'auto') value."""
        return RunParams(
            model=self.model_spec(mu),
            lattice=self.lattice_spec(),
            thermalization_sweeps=self.thermalization_sweeps,
            target_samples=self.target_samples,
            measure_interval=self.measure_interval,
            seed=self.seed,
            stall_sweeps=self.stall_sweeps,
            debug_checks=self.debug_checks,
        )

    def checks(self):
        """Validate values and model/lattice compatibility, raising ConfigError."""
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(
                "model.kind '{}' not supported. Allowed kinds are {}".format(
                    self.model_kind, tuple(MODEL_KINDS)
                )
            )
        if self.lattice_kind != MODEL_KINDS[self.model_kind]:
            raise ConfigError(
                "model.kind '{}' needs lattice.kind '{}'. got '{}'".format(
                    self.model_kind, MODEL_KINDS[self.model_kind], self.lattice_kind
                )
            )
        if self.replicas < 1:
            raise ConfigError("run.replicas must be >= 1. got {}".format(self.replicas))
        if self.pilot_sweeps < 1:
            raise ConfigError("run.pilot_sweeps must be >= 1. got {}".format(self.pilot_sweeps))
        if not 0 <= self.threshold < 1:
            raise ConfigError("output.threshold must be in [0, 1). got {}".format(self.threshold))
        try:
            params = self.run_params()
            params.target_N
            build_interactions(build_lattice(params.lattice), self.model_kind, self.cutoff)
        except ValueError as e:
            raise ConfigError(str(e))
        return self

    def replace(self, **params):
        """Copy with some values changed; keys are field names, TOML keys such as 'V' or 'section.key'."""
        changes = {}
        for key, value in params.items():
            name = field_of(key)
            changes[name] = parse_value(name, value) if isinstance(value, str) else value
        if "model_kind" in changes and "lattice_kind" not in changes:
            changes["lattice_kind"] = None
        return replace(self, **changes)


def _key_of(name):
    for section, keys in SECTIONS.items():
        for key, field_name in keys.items():
            if field_name == name:
                return "{}.{}".format(section, key)
    return name


def field_of(key):
    if "." in key:
        section, _, short = key.partition(".")
        try:
            return SECTIONS[section][short]
        except KeyError:
            raise ConfigError("unknown key '{}'".format(key))
    names = {f.name for f in fields(RunConfig)}
    if key in names:
        return key
    matches = [keys[key] for keys in SECTIONS.values() if key in keys]
    if len(matches) == 1:
        return matches[0]
    if len(matches) > 1:
        raise ConfigError("key '{}' is ambiguous, use 'section.{}'".format(key, key))
    raise ConfigError("unknown key '{}'".format(key))


def _coerce(name, value):
    try:
        if name in _INT_FIELDS:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        if name in _FLOAT_FIELDS:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if name == "debug_checks":
            if not isinstance(value, bool):
                raise ValueError
            return value
        if name == "mu":
            return "auto" if value == "auto" else float(value)
        if name == "filling":
            return fraction_to_str(parse_fraction(value))
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError("invalid value {!r} for '{}'".format(value, _key_of(name)))


def parse_value(name, text):
    """Interpret command-line text for field ``name``. *i.e.* ('L', '6') -> 6, ('debug_checks', 'true') -> True"""
    text = text.strip()
    if name == "debug_checks":
        if text.lower() not in ("true", "false"):
            raise ConfigError("invalid value '{}' for 'run.debug_checks'".format(text))
        return text.lower() == "true"
    return _coerce(name, text)


def load_config(path):
    """Read and check a TOML run configuration.

    args:
        path (str): Path to a TOML file

    returns:
        (RunConfig): Checked configuration
    """
    return RunConfig.from_toml(path).checks()
