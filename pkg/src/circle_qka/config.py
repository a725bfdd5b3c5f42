"""Flat ``key = value`` configuration for the command line.

Every key of :class:`CliConfig` has a command-line twin listed in
``CONFIG_KEYS``. Values are merged in the order: built-in defaults, the
``QKA_SEED`` environment variable (seed only), the config file, flags.
"""

import logging
import os
from dataclasses import dataclass, fields, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from . import qcore
from .adversary import AttackDescriptor, AttackKind, CollusionStrategy, freeze_matrix
from .analysis import SWEEPABLE, ExperimentPlan
from .errors import ConfigError, RejectedInputError
from .model import ProtocolParams, TrojanCountermeasures, parse_hop
from .streams import check_seed

logger = logging.getLogger(__name__)

SEED_ENV = "QKA_SEED"

FORMATS = ("json", "csv")

NO_ATTACK = "none"

UNITARY_PRESETS = ("identity", "cnot", "swap", "random:<seed>", "benign:<seed>")

# Names accepted for ``sweep`` besides the ProtocolParams field names.
SWEEP_ALIASES = {"flip_prob": "channel_flip_prob", "decoys": "decoy_count"}

# Config keys for parameter fields whose names differ.
FIELD_KEYS = {
    "channel_flip_prob": "flip_prob",
    "target_hops": "hops",
    "sweep_param": "sweep",
}


@dataclass(frozen=True)
class CliConfig:
    """Everything a run, sweep or efficiency report needs."""

    seed: int = 0
    m: int = 8
    l: int = 2  # noqa: E741
    decoy_count: int = 16
    qber_threshold: float = 0.10
    check_sample_size: Optional[int] = None
    flip_prob: float = 0.0
    wavelength_filter: bool = True
    photon_number_splitter: bool = True
    attack: str = NO_ATTACK
    hops: Tuple[str, ...] = ("A1",)
    eve_unitary: Optional[str] = None
    colluders: Optional[Tuple[str, str]] = None
    strategy: str = CollusionStrategy.NAIVE_ALIGN.value
    resend_distribution: Optional[Tuple[float, ...]] = None
    trials: int = 1000
    sweep: Optional[str] = None
    sweep_values: Tuple[float, ...] = ()
    confidence: float = 3.0
    workers: int = 1
    out: Optional[str] = None
    format: Optional[str] = None

    def validate(self) -> "CliConfig":
        """Check that the parameters, the attack and the plan can all be built.

        Raises:
            RejectedInputError: With ``field`` naming the offending parameter.
        """
        self.to_plan()
        return self

    def to_params(self) -> ProtocolParams:
        return ProtocolParams(
            m=self.m,
            l=self.l,
            decoy_count=self.decoy_count,
            qber_threshold=self.qber_threshold,
            check_sample_size=self.check_sample_size,
            seed=self.seed,
            channel_flip_prob=self.flip_prob,
            trojan_countermeasures=TrojanCountermeasures(
                wavelength_filter=self.wavelength_filter,
                photon_number_splitter=self.photon_number_splitter,
            ),
        ).validate()

    def to_attack(self) -> Optional[AttackDescriptor]:
        if self.attack == NO_ATTACK:
            return None
        kind = AttackKind(self.attack)
        matrix = None
        if kind is AttackKind.ENTANGLE_MEASURE:
            if self.eve_unitary is None:
                raise ConfigError(
                    "entangle-measure needs a unitary "
                    f"({', '.join(UNITARY_PRESETS)})",
                    key="eve_unitary",
                )
            matrix = freeze_matrix(resolve_unitary(self.eve_unitary))
        colluders = None
        if kind is AttackKind.INSIDE_COLLUSION:
            if self.colluders is None:
                raise ConfigError(
                    "inside-collusion needs two colluders, e.g. A,C", key="colluders"
                )
            colluders = self.colluders
        return AttackDescriptor(
            kind=kind,
            target_hops=() if kind is AttackKind.INSIDE_COLLUSION else self.hops,
            eve_unitary=matrix,
            colluders=colluders,
            strategy=CollusionStrategy(self.strategy),
            resend_distribution=(
                tuple(self.resend_distribution)  # type: ignore[arg-type]
                if self.resend_distribution
                else None
            ),
        ).validate()

    def to_plan(self) -> ExperimentPlan:
        sweep = SWEEP_ALIASES.get(self.sweep, self.sweep) if self.sweep else None
        return ExperimentPlan(
            base_params=self.to_params(),
            attack=self.to_attack(),
            trials=self.trials,
            sweep_param=sweep,
            sweep_values=self.sweep_values,
            confidence=self.confidence,
        ).validate()


def resolve_unitary(preset: str) -> np.ndarray:
    """4x4 photon-ancilla unitary named by ``preset``."""
    name, _, seed = preset.partition(":")
    fixed = {"identity": qcore.IDENTITY4, "cnot": qcore.CNOT, "swap": qcore.SWAP}
    if name in fixed and not seed:
        return fixed[name]
    if name in ("random", "benign") and seed:
        rng = np.random.default_rng(check_seed(int(seed)))
        if name == "random":
            return qcore.random_unitary(rng)
        return qcore.zero_disturbance_unitary(rng)
    raise ValueError(f"unknown unitary {preset!r}")


# Value parsers. Each raises ValueError; the caller attaches key and location.


def _parse_int(text: str) -> int:
    return int(text)


def _parse_optional_int(text: str) -> Optional[int]:
    return None if text.lower() in ("", "none", "auto") else int(text)


def _parse_unit_float(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{value} is outside [0, 1]")
    return value


def _parse_positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise ValueError(f"{value} is not positive")
    return value


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _parse_seed(text: str) -> int:
    return check_seed(int(text))


def _split(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _parse_attack(text: str) -> str:
    if text == NO_ATTACK:
        return text
    return AttackKind(text).value


def _parse_hops(text: str) -> Tuple[str, ...]:
    hops = tuple(item.upper() for item in _split(text))
    for hop in hops:
        parse_hop(hop)
    return hops


def _parse_unitary(text: str) -> Optional[str]:
    if text.lower() == NO_ATTACK:
        return None
    resolve_unitary(text)
    return text


def _parse_colluders(text: str) -> Optional[Tuple[str, str]]:
    if text.lower() == NO_ATTACK:
        return None
    names = [item.upper() for item in _split(text)]
    if len(names) != 2:
        raise ValueError("expected two participants, e.g. A,C")
    return names[0], names[1]


def _parse_strategy(text: str) -> str:
    return CollusionStrategy(text).value


def _parse_distribution(text: str) -> Optional[Tuple[float, ...]]:
    if text.lower() == "uniform":
        return None
    values = tuple(float(item) for item in _split(text))
    if len(values) != 4:
        raise ValueError("expected four probabilities for |0>,|1>,|+>,|->")
    return values


def _parse_sweep(text: str) -> Optional[str]:
    if text.lower() == NO_ATTACK:
        return None
    name = SWEEP_ALIASES.get(text, text)
    if name not in SWEEPABLE:
        raise ValueError(
            f"cannot sweep {text!r}; choose one of "
            f"{', '.join(list(SWEEPABLE) + list(SWEEP_ALIASES))}"
        )
    return text


def _number(text: str) -> float:
    try:
        return int(text)
    except ValueError:
        return float(text)


def _parse_sweep_values(text: str) -> Tuple[float, ...]:
    """Comma list and inclusive integer ranges: ``1..12`` or ``0.02,0.05``."""
    values: List[float] = []
    for item in _split(text):
        if ".." in item:
            low, high = (int(part) for part in item.split(".."))
            if high < low:
                raise ValueError(f"empty range {item}")
            values.extend(range(low, high + 1))
        else:
            values.append(_number(item))
    return tuple(values)


def _parse_workers(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError("must be >= 1")
    return value


def _parse_out(text: str) -> Optional[str]:
    return text or None


def _parse_format(text: str) -> str:
    if text not in FORMATS:
        raise ValueError(f"choose one of {', '.join(FORMATS)}")
    return text


@dataclass(frozen=True)
class ConfigKey:
    name: str
    flag: str
    parse: Callable[[str], Any]
    help: str
    metavar: str = "VALUE"


CONFIG_KEYS: Tuple[ConfigKey, ...] = (
    ConfigKey("seed", "--seed", _parse_seed, "64-bit master seed", "U64"),
    ConfigKey("m", "--m", _parse_int, "Bell pairs per ring", "N"),
    ConfigKey("l", "--l", _parse_int, "single photons inserted per ring", "N"),
    ConfigKey("decoy_count", "--decoys", _parse_int, "decoys added on every hop", "N"),
    ConfigKey(
        "qber_threshold", "--qber-threshold", _parse_unit_float,
        "abort when a hop's decoy error rate exceeds this", "RATE",
    ),
    ConfigKey(
        "check_sample_size", "--check-sample-size", _parse_optional_int,
        "final-key bits compared publicly; none means 10%% of the key", "N",
    ),
    ConfigKey(
        "flip_prob", "--flip-prob", _parse_unit_float,
        "probability that the channel flips a photon", "P",
    ),
    ConfigKey(
        "wavelength_filter", "--wavelength-filter", _parse_bool,
        "receivers filter invisible photons", "BOOL",
    ),
    ConfigKey(
        "photon_number_splitter", "--photon-number-splitter", _parse_bool,
        "receivers split off delay photons", "BOOL",
    ),
    ConfigKey(
        "attack", "--attack", _parse_attack,
        "none, " + ", ".join(kind.value for kind in AttackKind), "KIND",
    ),
    ConfigKey("hops", "--hops", _parse_hops, "attacked hops, e.g. A1,B2", "HOPS"),
    ConfigKey(
        "eve_unitary", "--eve-unitary", _parse_unitary,
        "entangle-measure unitary: " + ", ".join(UNITARY_PRESETS), "PRESET",
    ),
    ConfigKey(
        "colluders", "--colluders", _parse_colluders,
        "two dishonest participants, e.g. A,C", "X,Y",
    ),
    ConfigKey(
        "strategy", "--strategy", _parse_strategy,
        ", ".join(s.value for s in CollusionStrategy), "NAME",
    ),
    ConfigKey(
        "resend_distribution", "--resend-distribution", _parse_distribution,
        "intercept-resend state weights for 0,1,+,- or uniform", "P0,P1,P+,P-",
    ),
    ConfigKey("trials", "--trials", _parse_int, "Monte Carlo trials per point", "N"),
    ConfigKey("sweep", "--sweep", _parse_sweep, "parameter to sweep", "PARAM"),
    ConfigKey(
        "sweep_values", "--sweep-values", _parse_sweep_values,
        "values, e.g. 1..12 or 0.02,0.05", "VALUES",
    ),
    ConfigKey(
        "confidence", "--confidence", _parse_positive_float,
        "interval width in standard deviations", "Z",
    ),
    ConfigKey("workers", "--workers", _parse_workers, "worker processes", "N"),
    ConfigKey("out", "--out", _parse_out, "write output to PATH", "PATH"),
    ConfigKey(
        "format", "--format", _parse_format,
        "json or csv (sweep defaults to csv, the others to json)", "FMT",
    ),
)

KEYS_BY_NAME: Dict[str, ConfigKey] = {key.name: key for key in CONFIG_KEYS}


def parse_value(
    name: str, text: str, path: Optional[str] = None, line: Optional[int] = None
) -> Any:
    """Parse ``text`` for config key ``name`` or raise ConfigError."""
    key = KEYS_BY_NAME.get(name)
    if key is None:
        raise ConfigError("unknown key", key=name, path=path, line=line)
    try:
        return key.parse(text.strip())
    except ValueError as exc:
        raise ConfigError(
            f"cannot parse {text.strip()!r}: {exc}", key=name, path=path, line=line
        ) from exc


class ConfigValues(Dict[str, Any]):
    """Parsed ``key = value`` pairs that remember the file and line of each key."""

    def __init__(self, path: str):
        super().__init__()
        self.path = path
        self.lines: Dict[str, int] = {}


def parse_config_text(text: str, path: str = "<config>") -> ConfigValues:
    """Parse a flat ``key = value`` document."""
    values = ConfigValues(path)
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, value = line.partition("=")
        name = name.strip()
        if not sep:
            raise ConfigError("expected 'key = value'", key=name, path=path, line=number)
        if name in values:
            raise ConfigError("duplicate key", key=name, path=path, line=number)
        values[name] = parse_value(name, value, path, number)
        values.lines[name] = number
    return values


def load_config_file(path: str) -> ConfigValues:
    """Read and parse ``path``. A missing file raises FileNotFoundError."""
    with open(path, encoding="utf-8") as handle:
        text = handle.read()
    values = parse_config_text(text, path)
    logger.debug("Loaded %d key(s) from %s", len(values), path)
    return values


def _locate(
    exc: RejectedInputError,
    file_values: Mapping[str, Any],
    overrides: Mapping[str, Any],
    environ: Mapping[str, str],
) -> ConfigError:
    # Point at the layer the offending key came from.
    if isinstance(exc, ConfigError):
        if exc.path is not None:
            return exc
        key, message = exc.key, exc.message
    else:
        key = FIELD_KEYS.get(exc.field, exc.field) if exc.field else None
        message = str(exc)
    if key is None or key in overrides:
        return ConfigError(message, key=key)
    if key in file_values:
        path = getattr(file_values, "path", None)
        line = getattr(file_values, "lines", {}).get(key)
        return ConfigError(message, key=key, path=path, line=line)
    if key == "seed" and environ.get(SEED_ENV):
        return ConfigError(message, key=key, path=SEED_ENV)
    return ConfigError(message, key=key)


def build_config(
    file_values: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> CliConfig:
    """Merge defaults < QKA_SEED < config file < flags, then validate.

    Raises:
        ConfigError: For an unknown key, or a value the protocol rejects. The
            error names the key and, for file values, its path and line.
    """
    config = CliConfig()
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV):
        config = replace(config, seed=parse_value("seed", environ[SEED_ENV], SEED_ENV))
    known = {f.name for f in fields(CliConfig)}
    for layer in (file_values or {}, overrides or {}):
        unknown = set(layer) - known
        if unknown:
            raise ConfigError("unknown key", key=sorted(unknown)[0])
        config = replace(config, **dict(layer))
    try:
        return config.validate()
    except RejectedInputError as exc:
        raise _locate(exc, file_values or {}, overrides or {}, environ) from exc


def config_defaults() -> Dict[str, Any]:
    return {f.name: f.default for f in fields(CliConfig)}


def render_default(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value) or "none"
    return str(value)
