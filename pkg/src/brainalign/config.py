"""Run configuration (JSON) shared by every pipeline stage."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ValidationError
from .fugw import FugwConfig
from .preprocess import FirSpec
from .retrieval import RetrievalConfig


@dataclass(frozen=True)
class PreprocessConfig:
    tr: float = 2.0
    high_pass: float = 128.0  # seconds; sets the cosine drift order
    detrend: bool = True
    standardize: bool = True

    def __post_init__(self):
        if not (self.tr > 0 and self.high_pass > 0):
            raise ValidationError("tr and high_pass must be positive")


@dataclass(frozen=True)
class RidgeConfig:
    alpha_ridge: float = 50_000.0

    def __post_init__(self):
        if self.alpha_ridge < 0:
            raise ValidationError(f"alpha_ridge must be non-negative, got {self.alpha_ridge}")


_SECTIONS = {
    "fugw": FugwConfig,
    "ridge": RidgeConfig,
    "fir": FirSpec,
    "retrieval": RetrievalConfig,
    "preprocess": PreprocessConfig,
}


@dataclass(frozen=True)
class RunConfig:
    fugw: FugwConfig = field(default_factory=FugwConfig)
    ridge: RidgeConfig = field(default_factory=RidgeConfig)
    fir: FirSpec = field(default_factory=FirSpec)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in _SECTIONS.items():
            values = d.get(name, {})
            allowed = {f.name for f in fields(section_cls)}
            bad = set(values) - allowed
            if bad:
                raise ValidationError(f"unknown keys in config section {name!r}: {sorted(bad)}")
            try:
                kwargs[name] = section_cls(**values)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"config section {name!r}: {exc}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc

    def to_dict(self):
        return asdict(self)

    def replace(self, **sections):
        d = self.to_dict()
        for name, values in sections.items():
            d[name].update(values)
        return RunConfig.from_dict(d)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
