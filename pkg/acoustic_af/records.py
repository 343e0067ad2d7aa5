"""
Data records passed between pipeline stages.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np

from acoustic_af.errors import ContractError


class Rhythm(str, Enum):
    AF = "AF"
    NSR = "NSR"

    @property
    def class_index(self) -> int:
        # AF is the positive class
        return 1 if self is Rhythm.AF else 0


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int
    start_time: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ContractError(f"audio must be mono, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ContractError("audio contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def time_axis(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.samples)) / self.sample_rate


@dataclass
class IQSeries:
    i: np.ndarray
    q: np.ndarray
    rate: float
    carrier: float

    def __post_init__(self):
        self.i = np.asarray(self.i, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.i.shape != self.q.shape:
            raise ContractError(f"I/Q length mismatch: {self.i.shape} vs {self.q.shape}")

    def __len__(self) -> int:
        return len(self.i)

    @property
    def points(self) -> np.ndarray:
        """(n, 2) array of I/Q points"""
        return np.column_stack([self.i, self.q])


@dataclass
class PhaseSeries:
    phase: np.ndarray
    rate: float
    carrier: Optional[float] = None

    def __post_init__(self):
        self.phase = np.asarray(self.phase, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.phase)


@dataclass
class ChannelData:
    carrier: float
    iq: Optional[IQSeries] = None
    phase: Optional[PhaseSeries] = None
    valid: bool = True
    reason: Optional[str] = None


@dataclass
class MultiChannelRecord:
    channels: List[ChannelData]
    rate: int
    segment_length: int
    label: Optional[Rhythm] = None
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def carriers(self) -> List[float]:
        return [channel.carrier for channel in self.channels]

    def valid_channels(self) -> List[ChannelData]:
        return [channel for channel in self.channels if channel.valid]


@dataclass
class PulseSegment:
    samples: np.ndarray
    rate: int
    source_carrier: Optional[float] = None
    label: Optional[Rhythm] = None
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not np.all(np.isfinite(self.samples)):
            raise ContractError("pulse segment contains non-finite samples")
