"""
Signal quality gate for 30 s multi-channel records.

Two metrics decide whether a record is worth classifying:
channel stability score C (how well the carriers agree) and cardiac band
energy ratio eta_c (how much of the phase energy sits in 0.5-5 Hz).
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from acoustic_af.config import QualityConfig
from acoustic_af.errors import (
    AcousticAFError,
    ContractError,
    DegenerateSignalError,
    InsufficientChannelsError,
    UndefinedSimilarityError,
)
from acoustic_af.records import MultiChannelRecord, PhaseSeries

logger = logging.getLogger(__name__)

SeriesLike = Union[PhaseSeries, np.ndarray, Sequence[float]]

GUIDANCE_OK = "signal quality sufficient"
GUIDANCE_UNSTABLE = "channels disagree: reposition the device on the wrist"
GUIDANCE_WEAK = "weak cardiac band: keep the arm still and adjust contact"


def _values(series: SeriesLike) -> np.ndarray:
    if isinstance(series, PhaseSeries):
        return series.phase
    return np.asarray(series, dtype=np.float64)


def cosine_similarity(a: SeriesLike, b: SeriesLike) -> float:
    x, y = _values(a), _values(b)
    if x.shape != y.shape:
        raise ContractError(f"similarity needs equal lengths, got {len(x)} and {len(y)}")
    norm = np.linalg.norm(x) * np.linalg.norm(y)
    if norm == 0:
        raise UndefinedSimilarityError("cosine similarity of a zero-norm sequence")
    return float(np.clip(np.dot(x, y) / norm, -1.0, 1.0))


def similarity_matrix(channels: Sequence[SeriesLike]) -> np.ndarray:
    """Pairwise cosine similarity of de-meaned phases; unit diagonal"""
    centered = [_values(c) - _values(c).mean() for c in channels]
    count = len(centered)
    matrix = np.eye(count)
    for m in range(count):
        for n in range(m + 1, count):
            matrix[m, n] = matrix[n, m] = cosine_similarity(centered[m], centered[n])
    return matrix


def stability_score(channels: Sequence[SeriesLike], config: Optional[QualityConfig] = None) -> float:
    """
    Mean pairwise similarity over pairs with S >= 0.6 * max S.

    The maximal pair is always kept, even when every similarity is negative.
    """
    config = config or QualityConfig()
    if len(channels) < 2:
        raise InsufficientChannelsError(f"stability score needs 2 valid channels, got {len(channels)}")
    matrix = similarity_matrix(channels)
    pairs = matrix[np.triu_indices(len(channels), k=1)]
    best = pairs.max()
    kept = pairs[pairs >= min(config.pair_exclusion * best, best)]
    return float(kept.mean())


def half_band_ratios(values: np.ndarray, rate: float, config: Optional[QualityConfig] = None) -> Optional[Tuple[float, float]]:
    """Cardiac band energy ratio of each half; None if a half carries no energy"""
    config = config or QualityConfig()
    if len(values) % 2:
        raise ContractError(f"segment length must be even, got {len(values)}")
    low, high = config.cardiac_band
    ratios = []
    for half in np.split(values, 2):
        half = half - half.mean()
        power = np.abs(np.fft.rfft(half)) ** 2
        freqs = np.fft.rfftfreq(len(half), d=1.0 / rate)
        total = power[freqs > config.ignored_band].sum()
        if total <= 0:
            return None
        ratios.append(power[(freqs >= low) & (freqs <= high)].sum() / total)
    return float(ratios[0]), float(ratios[1])


def cardiac_ratio(
    channels: Sequence[SeriesLike], rate: float = 128, config: Optional[QualityConfig] = None
) -> float:
    """max over channels of min over halves of the cardiac band energy ratio"""
    config = config or QualityConfig()
    best = None
    for channel in channels:
        if isinstance(channel, PhaseSeries):
            rate = channel.rate
        ratios = half_band_ratios(_values(channel), rate, config)
        if ratios is None:
            continue
        value = min(ratios)
        best = value if best is None else max(best, value)
    if best is None:
        raise DegenerateSignalError("every channel has zero energy outside the ignored band")
    return float(best)


def gate(stability: Optional[float], cardiac: Optional[float], config: Optional[QualityConfig] = None) -> Tuple[bool, List[str]]:
    config = config or QualityConfig()
    reasons = []
    if stability is None or stability <= config.stability_threshold:
        reasons.append(f"stability score {stability} <= {config.stability_threshold}")
    if cardiac is None or cardiac <= config.cardiac_threshold:
        reasons.append(f"cardiac band ratio {cardiac} <= {config.cardiac_threshold}")
    return not reasons, reasons


@dataclass
class QualityReport:
    stability_score: Optional[float]
    cardiac_ratio: Optional[float]
    passed: bool
    per_pair_similarity: np.ndarray
    per_channel_half_ratios: np.ndarray
    carriers: List[float] = field(default_factory=list)
    reasons: List[str] = field(default_factory=list)
    guidance: str = GUIDANCE_OK

    def to_dict(self) -> Dict[str, Any]:
        def cells(matrix: np.ndarray):
            return [[None if np.isnan(v) else float(v) for v in row] for row in matrix]

        return {
            "stability_score": self.stability_score,
            "cardiac_ratio": self.cardiac_ratio,
            "pass": self.passed,
            "per_pair_similarity": cells(self.per_pair_similarity),
            "per_channel_half_ratios": cells(self.per_channel_half_ratios),
            "carriers": self.carriers,
            "reasons": self.reasons,
            "guidance": self.guidance,
        }


def assess(record: MultiChannelRecord, config: Optional[QualityConfig] = None) -> QualityReport:
    config = config or QualityConfig()
    count = len(record.channels)
    usable = [i for i, c in enumerate(record.channels) if c.valid and c.phase is not None]
    phases = [record.channels[i].phase for i in usable]

    matrix = np.full((count, count), np.nan)
    halves = np.full((count, 2), np.nan)
    reasons: List[str] = []
    stability = cardiac = None

    try:
        sub = similarity_matrix(phases)
        for a, i in enumerate(usable):
            for b, j in enumerate(usable):
                matrix[i, j] = sub[a, b]
        stability = stability_score(phases, config)
    except AcousticAFError as e:
        reasons.append(f"stability score undefined: {e}")

    for i, phase in zip(usable, phases):
        try:
            ratios = half_band_ratios(phase.phase, phase.rate, config)
        except ContractError as e:
            reasons.append(str(e))
            continue
        if ratios is not None:
            halves[i] = ratios
    try:
        cardiac = cardiac_ratio(phases, record.rate, config)
    except AcousticAFError as e:
        reasons.append(f"cardiac band ratio undefined: {e}")

    passed, gate_reasons = gate(stability, cardiac, config)
    reasons.extend(gate_reasons)
    if passed:
        guidance = GUIDANCE_OK
    elif stability is None or stability <= config.stability_threshold:
        guidance = GUIDANCE_UNSTABLE
    else:
        guidance = GUIDANCE_WEAK
    logger.info("quality C=%s eta_c=%s pass=%s", stability, cardiac, passed)
    return QualityReport(
        stability_score=stability,
        cardiac_ratio=cardiac,
        passed=passed,
        per_pair_similarity=matrix,
        per_channel_half_ratios=halves,
        carriers=record.carriers,
        reasons=reasons if not passed else [],
        guidance=guidance,
    )
