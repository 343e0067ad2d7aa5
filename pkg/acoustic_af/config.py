"""
Pipeline configuration.

All constants of the signal chain live here with their default values.
A PipelineConfig is resolved once (defaults < YAML file < command-line
overrides) and embedded verbatim into every artifact the pipeline writes.
"""

import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from acoustic_af.errors import ConfigurationError, ScenarioParseError

DEFAULT_CARRIERS = [18000.0, 19000.0, 20000.0, 21000.0]
WORKING_RATE = 128
SEGMENT_SECONDS = 30
SEGMENT_LENGTH = WORKING_RATE * SEGMENT_SECONDS


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProbeConfig(_Section):
    carriers: List[float] = Field(default_factory=lambda: list(DEFAULT_CARRIERS))
    gains: List[float] = Field(default_factory=lambda: [0.25] * 4)
    sample_rate: int = 48000
    duration: float = 30.0

    @model_validator(mode="after")
    def _check_invariants(self) -> "ProbeConfig":
        if not self.carriers:
            raise ConfigurationError("at least one carrier")
        if len(self.gains) != len(self.carriers):
            raise ConfigurationError(
                "one gain per carrier", f"{len(self.gains)} gains for {len(self.carriers)} carriers"
            )
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate > 0")
        if self.duration <= 0:
            raise ConfigurationError("duration > 0")
        upper = self.sample_rate / 2 - 1000
        for carrier in self.carriers:
            if carrier < 18000 or carrier > upper:
                raise ConfigurationError(
                    "18000 Hz <= carrier <= sample_rate/2 - 1000 Hz", f"carrier {carrier} Hz"
                )
        ordered = sorted(self.carriers)
        for low, high in zip(ordered, ordered[1:]):
            if high - low < 200:
                raise ConfigurationError(
                    "adjacent carriers differ by >= 200 Hz", f"{low} Hz and {high} Hz"
                )
        for gain in self.gains:
            if not 0 < gain <= 1:
                raise ConfigurationError("gain in (0, 1]", f"gain {gain}")
        if sum(self.gains) > 1 + 1e-12:
            raise ConfigurationError("sum of gains <= 1", f"sum {sum(self.gains):.6f}")
        return self


class ChannelScenario(_Section):
    """
    Wrist channel seen by every carrier.

    static_offset is the arc-center displacement in normalized I/Q units, where
    the modulated carrier's phasor has unit length. channel_gain is the constant
    amplitude A applied to the probe.
    """

    phase_amplitude: float = 0.3
    static_offset: Tuple[float, float] = (0.0, 0.0)
    phase_offset: float = 0.0
    drift_amplitude: float = 0.0
    drift_frequency: float = 0.1
    noise_snr: Optional[float] = None
    invert: bool = False
    channel_gain: float = 0.5
    # band-limited interferer (nearby speech or music) against the modulated carrier power
    interference_snr: Optional[float] = None
    interference_band: Tuple[float, float] = (17500.0, 21500.0)
    interference_rate: float = 4.0

    @model_validator(mode="after")
    def _check_invariants(self) -> "ChannelScenario":
        if not 0 <= self.phase_amplitude <= 1.0:
            raise ConfigurationError("phase_amplitude in [0, 1] rad", f"{self.phase_amplitude}")
        if not 0 <= self.drift_frequency < 0.5:
            raise ConfigurationError("drift frequency < 0.5 Hz", f"{self.drift_frequency}")
        if self.noise_snr is not None and self.noise_snr < 0:
            raise ConfigurationError("noise_snr >= 0 dB", f"{self.noise_snr}")
        if self.channel_gain <= 0:
            raise ConfigurationError("channel_gain > 0", f"{self.channel_gain}")
        low, high = self.interference_band
        if not 0 < low < high:
            raise ConfigurationError("0 < interference_band low < high", f"{self.interference_band}")
        if self.interference_rate < 0:
            raise ConfigurationError("interference_rate >= 0 Hz", f"{self.interference_rate}")
        return self

    @property
    def static_complex(self) -> complex:
        return complex(self.static_offset[0], self.static_offset[1])


class ExtractionConfig(_Section):
    rate: int = WORKING_RATE
    segment_length: int = SEGMENT_LENGTH
    bandpass_half_width: float = 50.0
    bandpass_order: int = 4
    lowpass_cutoff: float = 50.0
    lowpass_order: int = 5
    decimation_cutoff: float = 40.0
    decimation_order: int = 8
    degenerate_epsilon: float = 1e-6
    max_workers: int = 1


class QualityConfig(_Section):
    stability_threshold: float = 0.90
    cardiac_threshold: float = 0.70
    cardiac_band: Tuple[float, float] = (0.5, 5.0)
    ignored_band: float = 0.2
    pair_exclusion: float = 0.6


class PurificationConfig(_Section):
    window_seconds: float = 2.5
    hop_seconds: float = 0.5
    eta: float = 5.0
    gate_angle: float = math.pi / 6
    # radial spread about the center in use, as a fraction of the window span
    radial_tolerance: float = 0.05
    fade_samples: int = 13
    wavelet: str = "coif5"
    levels: int = 7
    kept_bands: Tuple[int, int] = (4, 7)

    @model_validator(mode="after")
    def _check_invariants(self) -> "PurificationConfig":
        if self.hop_seconds <= 0 or self.window_seconds < self.hop_seconds:
            raise ConfigurationError("0 < hop <= window", f"{self.hop_seconds} / {self.window_seconds}")
        if self.radial_tolerance <= 0:
            raise ConfigurationError("radial_tolerance > 0", f"{self.radial_tolerance}")
        low, high = self.kept_bands
        if not 1 <= low <= high <= self.levels + 1:
            raise ConfigurationError("1 <= first kept band <= last kept band <= levels + 1")
        return self


class DetectorConfig(_Section):
    channels: int = 16
    kernel_size: int = 32
    strides: List[int] = Field(default_factory=lambda: [1, 4, 1, 4, 1, 4])
    input_length: int = SEGMENT_LENGTH
    bn_momentum: float = 0.9
    bn_epsilon: float = 1e-5


class TrainConfig(_Section):
    optimizer: str = "adam"
    learning_rate: float = 0.001
    max_epochs: int = 50
    patience: int = 10
    batch_size: int = 16
    validation_fraction: float = 0.2
    class_weighted: bool = True
    seed: int = 0

    @model_validator(mode="after")
    def _check_invariants(self) -> "TrainConfig":
        if self.optimizer != "adam":
            raise ConfigurationError("optimizer is adam", self.optimizer)
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate >= 0", f"{self.learning_rate}")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs >= 1", f"{self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size >= 1", f"{self.batch_size}")
        return self


class PipelineConfig(_Section):
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    extraction: ExtractionConfig = Field(default_factory=ExtractionConfig)
    quality: QualityConfig = Field(default_factory=QualityConfig)
    purification: PurificationConfig = Field(default_factory=PurificationConfig)
    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_yaml(path: Path) -> Dict[str, Any]:
    """Read a YAML mapping, reporting the line of any syntax error"""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else None
        raise ScenarioParseError(f"{path}: {e.problem}", line=line) from e
    except yaml.YAMLError as e:
        raise ScenarioParseError(f"{path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ScenarioParseError(f"{path}: top level must be a mapping", line=1)
    return data


def build_config(data: Dict[str, Any]) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        raise ConfigurationError(f"valid value for {field}", first["msg"]) from e


def load_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Resolve defaults < file < overrides into a validated PipelineConfig"""
    data: Dict[str, Any] = {}
    if path is not None:
        data = read_yaml(Path(path))
    if overrides:
        data = _merge(data, overrides)
    return build_config(data)
