# Settings of a screening / estimation run.
#
# A config document is a JSON object whose keys are the RiskConfig fields;
# missing keys take the defaults below and unknown keys are rejected.

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from errors import ConfigError
from grid.faultModel import FaultKind
from utils.nameToType import nameToFaultKind, nameToMethod


@dataclass(frozen=True)
class RiskConfig:
    gamma: float = 5.0
    rho: float = 0.1
    n_per_iter: int = 1000
    n_final: int = 5000
    lambda_nominal: float = 0.1
    fault_kind: FaultKind = FaultKind.THREE_PHASE
    T: float = 20.0
    dt: float = 0.01
    method: str = "exact"
    m: int = 10
    seed: int = 0
    epsilon_mix: float = 0.01
    smoothing: float = 0.7
    max_iter: int = 50
    tolerance: float = 1e-3
    per_line: bool = False
    warning_zone: float = 0.05
    critical_zone: float = 0.10
    workers: int = 1
    chunk_size: int = 1000

    def __post_init__(self):
        try:
            object.__setattr__(self, "fault_kind", nameToFaultKind(self.fault_kind))
            object.__setattr__(self, "method", nameToMethod(self.method))
        except ValueError as error:
            raise ConfigError(str(error))

        checks = [
            (self.gamma >= 0, "gamma must be >= 0"),
            (0 < self.rho < 1, "rho must lie in (0, 1)"),
            (self.n_per_iter >= 100, "n_per_iter must be >= 100"),
            (self.n_final >= 1, "n_final must be >= 1"),
            (self.lambda_nominal > 0, "lambda_nominal must be positive"),
            (self.T > 0, "T must be positive"),
            (self.dt > 0, "dt must be positive"),
            (self.m >= 1, "m must be >= 1"),
            (0 <= self.epsilon_mix < 1, "epsilon_mix must lie in [0, 1)"),
            (0 < self.smoothing <= 1, "smoothing must lie in (0, 1]"),
            (self.max_iter >= 1, "max_iter must be >= 1"),
            (self.tolerance > 0, "tolerance must be positive"),
            (0 <= self.warning_zone <= self.critical_zone <= 1, "zone thresholds must satisfy 0 <= warning <= critical <= 1"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.chunk_size >= 1, "chunk_size must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def replace(self, **overrides) -> "RiskConfig":
        # None means "flag not given"
        given = {key: value for key, value in overrides.items() if value is not None}
        return replace(self, **given)

    def to_record(self) -> dict:
        record = asdict(self)
        record["fault_kind"] = self.fault_kind.value
        return record

    @classmethod
    def from_record(cls, record: dict) -> "RiskConfig":
        if not isinstance(record, dict):
            raise ConfigError("config document must be an object")
        known = {field.name for field in fields(cls)}
        unknown = sorted(set(record) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**record)
        except TypeError as error:
            raise ConfigError(str(error))


def load_config(path) -> RiskConfig:
    try:
        with open(path, encoding="utf-8") as handle:
            record = json.load(handle)
    except json.JSONDecodeError as error:
        raise ConfigError(f"malformed config document: {error}")
    return RiskConfig.from_record(record)


def config_hash(config: RiskConfig) -> str:
    canonical = json.dumps(config.to_record(), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
